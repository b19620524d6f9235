import numpy as np
import pytest

from src.geometry import BBox, iou
from src.raster import GrayRaster
from src.symbol_detect import (OTHERS, SymbolDetectConfig, SymbolDetector, SymbolInstance, TemplateBank,
                               non_max_suppression, template_classify)
from src.symbols import COMPLEX_CLASSES, render_symbol


@pytest.fixture(scope='module')
def bank():
    return TemplateBank.from_library(80)


def _sheet_with(symbols, width=600, height=400):
    data = np.full((height, width), 255, dtype=np.uint8)
    for class_id, rotation, x, y in symbols:
        glyph = np.asarray(render_symbol(class_id, 80, rotation).data)
        data[y:y + 80, x:x + 80] = np.minimum(data[y:y + 80, x:x + 80], glyph)
    return GrayRaster(data)


@pytest.mark.parametrize('class_id', COMPLEX_CLASSES)
def test_classifier_recovers_every_class(bank, class_id):
    predicted, score = template_classify(render_symbol(class_id, 80), bank)
    assert predicted == class_id
    assert score > 0.99


@pytest.mark.parametrize('rotation', [90, 180, 270])
def test_classifier_is_rotation_aware(bank, rotation):
    for class_id in (2, 9, 14, 23):
        predicted, _ = template_classify(render_symbol(class_id, 80, rotation), bank)
        assert predicted == class_id


def test_blank_crop_is_others(bank):
    assert template_classify(GrayRaster(np.full((80, 80), 255, dtype=np.uint8)), bank) == (OTHERS, 0.0)


def test_template_bank_save_and_load(tmp_path, bank):
    bank.save(tmp_path)
    loaded = TemplateBank.load(tmp_path)
    assert loaded.size == 80
    assert sorted(loaded.templates) == sorted(bank.templates)
    assert np.allclose(loaded.templates[5], bank.templates[5])
    assert loaded.names[5] == bank.names[5]
    with pytest.raises(FileNotFoundError):
        TemplateBank.load(tmp_path / 'missing')


def test_nms_keeps_highest_score():
    a = SymbolInstance(OTHERS, BBox(0, 0, 80, 80), 0.9)
    b = SymbolInstance(OTHERS, BBox(5, 5, 80, 80), 0.95)
    c = SymbolInstance(OTHERS, BBox(200, 0, 80, 80), 0.85)
    assert non_max_suppression([a, b, c], 0.5) == [b, c]


def test_detector_finds_and_classifies_symbols(bank):
    sheet = _sheet_with([(3, 0, 100, 100), (17, 90, 300, 150)])
    found = SymbolDetector(bank=bank).detect_complex_symbols(sheet)
    assert len(found) == 2
    truth = {3: BBox(100, 100, 80, 80), 17: BBox(300, 150, 80, 80)}
    for inst in found:
        assert inst.class_id in truth
        assert iou(inst.bbox, truth[inst.class_id]) > 0.75


def test_blank_sheet_has_no_symbols(blank_sheet, bank):
    assert SymbolDetector(bank=bank).detect_complex_symbols(blank_sheet) == []


class _OneBoxLocalizer:
    thread_safe = True

    def propose(self, patch):
        return [(BBox(10, 10, 80, 80), 0.95)]


class _UnsureClassifier:
    thread_safe = True

    def classify(self, crop):
        return 4, 0.5


class _BrokenLocalizer:
    thread_safe = False

    def propose(self, patch):
        raise RuntimeError('no weights')


def test_low_classifier_score_becomes_others():
    sheet = _sheet_with([(4, 0, 10, 10)], width=200, height=200)
    found = SymbolDetector(_OneBoxLocalizer(), _UnsureClassifier(), SymbolDetectConfig(patch_size=200)
                           ).detect_complex_symbols(sheet)
    assert [(s.class_id, s.bbox) for s in found] == [(OTHERS, BBox(10, 10, 80, 80))]


def test_localizer_failure_is_a_warning(bank):
    sheet = _sheet_with([(4, 0, 10, 10)], width=200, height=200)
    warnings = []
    found = SymbolDetector(_BrokenLocalizer(), _UnsureClassifier(), SymbolDetectConfig(patch_size=200)
                           ).detect_complex_symbols(sheet, warnings)
    assert found == []
    assert len(warnings) == 1 and 'no weights' in warnings[0]


def test_config_validation():
    with pytest.raises(ValueError):
        SymbolDetectConfig(classifier_min=1.0)
    with pytest.raises(ValueError):
        SymbolDetectConfig(patch_size=90)
