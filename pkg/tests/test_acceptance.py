"""Accuracy and scale gates over generated sheets; the long ones are marked slow"""

import hashlib
import time
from dataclasses import replace

import numpy as np
import pytest

from src.config_manager import PipelineConfig
from src.dataset_gen import GenConfig, NoiseConfig, generate_sheet, split_indices, write_dataset
from src.evaluate import CONFUSION_CLASSES, ClassCounts, line_counts, match_symbols, text_counts
from src.glyphs import GlyphAtlas
from src.line_detect import LineDetector, detect_lines_hough
from src.pipeline import SheetDigitizer
from src.raster import binarize
from src.text_extract import TextExtractor

SCAN_NOISE = NoiseConfig(pixelation_factor=2, blur_sigma=0.8, salt_pepper_rate=0.005)


def _sheets(cfg, count):
    atlas = GlyphAtlas.default()
    for index in range(count):
        yield generate_sheet(cfg, index, atlas)


def _digest(path):
    return hashlib.md5(path.read_bytes()).hexdigest()


def test_five_hundred_sheet_split():
    splits = split_indices(500, (4, 1), 0)
    assert (len(splits['train']), len(splits['test'])) == (400, 100)


def test_generation_is_byte_identical(tmp_path, small_gen_config):
    cfg = replace(small_gen_config, count=1)
    write_dataset(cfg, tmp_path / 'a')
    write_dataset(cfg, tmp_path / 'b')
    for name in ('images/sheet_0000.png', 'annotations/sheet_0000.json', 'manifest.json'):
        assert _digest(tmp_path / 'a' / name) == _digest(tmp_path / 'b' / name)


@pytest.mark.slow
def test_line_accuracy_under_noise():
    cfg = GenConfig(seed=11, count=20, noise=SCAN_NOISE)
    detector = LineDetector()
    totals = {'complete': [0, 0], 'dashed': [0, 0]}
    started = time.monotonic()
    for image, ann in _sheets(cfg, cfg.count):
        exclude = [t.bbox for t in ann.texts] + [s.bbox for s in ann.symbols]
        detection = detector.detect(binarize(image), exclude)
        for key, (correct, total) in line_counts(detection.all_lines, ann.lines, ann.kernel_length).items():
            totals[key][0] += correct
            totals[key][1] += total
    assert time.monotonic() - started < 300
    assert totals['complete'][0] / totals['complete'][1] >= 0.97
    assert totals['dashed'][0] / totals['dashed'][1] >= 0.75


@pytest.mark.slow
def test_kernel_lines_beat_hough_under_heavy_noise():
    cfg = GenConfig(seed=13, count=10, noise=NoiseConfig(salt_pepper_rate=0.02))
    detector = LineDetector()
    for image, ann in _sheets(cfg, cfg.count):
        ink = binarize(image)
        exclude = [t.bbox for t in ann.texts] + [s.bbox for s in ann.symbols]
        kernel, total = line_counts(detector.detect(ink, exclude).all_lines, ann.lines,
                                    ann.kernel_length)['complete']
        hough, _ = line_counts(detect_lines_hough(ink), ann.lines, ann.kernel_length)['complete']
        assert total > 0
        assert kernel >= hough, ann.sheet_id


@pytest.mark.slow
def test_symbol_pipeline_noise_free():
    cfg = GenConfig(seed=17, count=20)
    digitizer = SheetDigitizer(PipelineConfig())
    counts, confusion = {}, np.zeros((len(CONFUSION_CLASSES), len(CONFUSION_CLASSES)), dtype=np.int64)
    for image, ann in _sheets(cfg, cfg.count):
        match = match_symbols(digitizer.digitize(image).result.symbols, ann.symbols)
        confusion += match.confusion
        for class_id, c in match.counts.items():
            mine = counts.setdefault(class_id, ClassCounts())
            mine.tp, mine.fp, mine.fn = mine.tp + c.tp, mine.fp + c.fp, mine.fn + c.fn
    low = {class_id: round(c.f1, 3) for class_id, c in counts.items() if c.f1 < 0.9}
    assert not low
    for row in range(1, len(CONFUSION_CLASSES)):
        off = np.delete(confusion[row], row)
        if confusion[row].sum():
            assert confusion[row, row] >= 5 * off.max(), CONFUSION_CLASSES[row]


@pytest.mark.slow
def test_text_pipeline_noise_free():
    cfg = GenConfig(seed=19, count=20)
    extractor = TextExtractor()
    total = detected = recognized = recognition_total = 0
    for image, ann in _sheets(cfg, cfg.count):
        counts = text_counts(extractor.extract_text(image), ann.texts, (0.5,))
        total += counts['total']
        detected += counts['detected'][0.5]
        recognized += counts['recognized']
        recognition_total += counts['recognition_total']
    assert detected / total >= 0.95
    assert recognized / recognition_total >= 0.90


@pytest.mark.slow
def test_hundred_full_size_sheets_in_ten_minutes(tmp_path):
    started = time.monotonic()
    manifest = write_dataset(GenConfig(seed=23, count=100, noise=SCAN_NOISE), tmp_path)
    assert time.monotonic() - started < 600
    assert len(manifest['sheets']) == 100
    assert (len(manifest['splits']['train']), len(manifest['splits']['test'])) == (80, 20)
