import numpy as np
import pytest

from src.geometry import BBox
from src.glyphs import GlyphAtlas
from src.raster import GrayRaster, Orientation
from src.text_extract import (GlyphTemplateRecognizer, TextBox, TextConfig, TextExtractor,
                              glyph_template_recognize, merge_boxes_iou, split_patches)


def _stamp(data, mask, x, y):
    h, w = mask.shape
    data[y:y + h, x:x + w][mask] = 0


@pytest.fixture
def atlas():
    return GlyphAtlas.default()


def test_render_and_recognize_label(atlas):
    mask = atlas.render_text('XT-101', 2)
    data = np.full((mask.shape[0] + 8, mask.shape[1] + 8), 255, dtype=np.uint8)
    _stamp(data, mask, 4, 4)
    text, confidence = glyph_template_recognize(GrayRaster(data), atlas)
    assert text == 'XT-101'
    assert confidence > 0.95


def test_recognize_keeps_spaces_and_quotes(atlas):
    mask = atlas.render_text('6" PIPE', 3)
    data = np.full((mask.shape[0] + 6, mask.shape[1] + 6), 255, dtype=np.uint8)
    _stamp(data, mask, 3, 3)
    assert GlyphTemplateRecognizer(atlas).recognize(GrayRaster(data))[0] == '6" PIPE'


def test_blank_crop_reads_nothing(atlas):
    assert glyph_template_recognize(GrayRaster(np.full((20, 40), 255, dtype=np.uint8)), atlas) == ('', 0.0)


def test_render_rejects_unknown_characters(atlas):
    with pytest.raises(ValueError):
        atlas.render_text('a?', 2)
    assert atlas.text_size('AB', 2) == ((5 + 1 + 5) * 2, 14)


def test_atlas_save_and_load(tmp_path, atlas):
    atlas.save(tmp_path)
    loaded = GlyphAtlas.load(tmp_path)
    assert loaded.charset == atlas.charset
    assert all(np.array_equal(loaded.glyphs[ch], atlas.glyphs[ch]) for ch in atlas.charset)


def test_split_patches_cover_the_sheet():
    sheet = GrayRaster(np.zeros((250, 330), dtype=np.uint8))
    patches = split_patches(sheet, 100, 0.5)
    covered = np.zeros((250, 330), dtype=bool)
    for patch, (ox, oy) in patches:
        covered[oy:oy + patch.height, ox:ox + patch.width] = True
        assert patch.width == 100 and patch.height == 100
    assert covered.all()
    assert patches[0][1] == (0, 0)
    with pytest.raises(ValueError):
        split_patches(sheet, 100, 1.0)


def test_merge_boxes_is_transitive():
    boxes = [TextBox(BBox(0, 0, 10, 10), 'A', confidence=0.5),
             TextBox(BBox(4, 0, 10, 10), 'AB', confidence=0.9),
             TextBox(BBox(8, 0, 10, 10), 'B', confidence=0.4),
             TextBox(BBox(100, 100, 5, 5), 'C', confidence=0.7)]
    merged = merge_boxes_iou(boxes, 0.3)
    assert len(merged) == 2
    assert merged[0].bbox == BBox(0, 0, 18, 10)
    assert merged[0].text == 'AB' and merged[0].confidence == 0.9
    assert merge_boxes_iou([], 0.3) == []


def test_extractor_reads_horizontal_and_vertical_labels(atlas):
    data = np.full((300, 600), 255, dtype=np.uint8)
    horizontal = atlas.render_text('XT-101', 2)
    vertical = np.rot90(atlas.render_text('AB-123', 2), 1)
    _stamp(data, horizontal, 100, 60)
    _stamp(data, vertical, 400, 100)

    boxes = TextExtractor().extract_text(GrayRaster(data))
    found = {(b.text, b.orientation) for b in boxes}
    assert found == {('XT-101', Orientation.HORIZONTAL), ('AB-123', Orientation.VERTICAL)}
    by_text = {b.text: b for b in boxes}
    assert by_text['XT-101'].bbox == BBox(100, 60, horizontal.shape[1], horizontal.shape[0])
    assert by_text['AB-123'].bbox == BBox(400, 100, vertical.shape[1], vertical.shape[0])


def test_vertical_pass_can_be_disabled(atlas):
    data = np.full((300, 600), 255, dtype=np.uint8)
    _stamp(data, np.rot90(atlas.render_text('AB-123', 2), 1), 400, 100)
    boxes = TextExtractor(config=TextConfig(vertical_pass=False)).extract_text(GrayRaster(data))
    assert all(b.orientation == Orientation.HORIZONTAL for b in boxes)
    assert 'AB-123' not in {b.text for b in boxes}


class _FailingDetector:
    thread_safe = True

    def detect(self, patch):
        raise RuntimeError('model unavailable')


class _FixedRecognizer:
    thread_safe = False

    def recognize(self, crop):
        return 'AA-001', 0.99


def test_detector_failures_become_warnings(blank_sheet):
    warnings = []
    boxes = TextExtractor(_FailingDetector(), _FixedRecognizer(), TextConfig(patch_size=200)).extract_text(
        blank_sheet, warnings)
    assert boxes == []
    assert warnings and all('model unavailable' in w for w in warnings)


def test_low_confidence_reads_are_dropped(atlas):
    class Unsure:
        thread_safe = True

        def recognize(self, crop):
            return 'XX', 0.1

    data = np.full((100, 200), 255, dtype=np.uint8)
    _stamp(data, atlas.render_text('XT-101', 2), 20, 20)
    assert TextExtractor(recognizer=Unsure()).extract_text(GrayRaster(data)) == []


def test_config_validation():
    with pytest.raises(ValueError):
        TextConfig(overlap=1.0)
    with pytest.raises(ValueError):
        TextConfig(min_char_height=50, max_char_height=40)
