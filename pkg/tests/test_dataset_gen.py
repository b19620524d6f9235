import json
import re
from dataclasses import replace

import numpy as np
import pytest

from src.dataset_gen import (PIPE_GRAMMAR, SYMBOL_GRAMMAR, GenConfig, NoiseConfig, SheetAnnotation,
                             apply_noise, dash_intervals, expand_grammar, generate_sheet, grammar_regex,
                             split_indices, write_dataset)
from src.geometry import intersection_area
from src.raster import load_gray_file
from src.symbols import ALL_CLASSES


def test_grammar_expansion_matches_its_regex(rng):
    for grammar in (PIPE_GRAMMAR, SYMBOL_GRAMMAR, 'AA/##'):
        pattern = re.compile(grammar_regex(grammar))
        for _ in range(50):
            assert pattern.match(expand_grammar(grammar, rng))
    assert re.match(grammar_regex(PIPE_GRAMMAR), '12"-AB-0042')
    assert not re.match(grammar_regex(PIPE_GRAMMAR), 'AB-0042')


def test_dash_intervals_span_the_segment():
    intervals = dash_intervals(100, 500, 14, 10.5)
    assert intervals[0][0] == 100 and intervals[-1][1] == 500
    assert all(abs((b - a) - 14) <= 1 for a, b in intervals)
    assert all(nxt[0] > prev[1] for prev, nxt in zip(intervals, intervals[1:]))
    assert dash_intervals(0, 5, 10, 5) == [(0, 5)]


def test_noise_leaves_input_untouched(rng):
    image = np.full((60, 80), 255, dtype=np.uint8)
    image[20:23, 10:70] = 0
    before = image.copy()
    assert np.array_equal(apply_noise(image, NoiseConfig(), rng), image)
    noisy = apply_noise(image, NoiseConfig(pixelation_factor=2, blur_sigma=0.8, salt_pepper_rate=0.05), rng)
    assert np.array_equal(image, before)
    assert noisy.shape == image.shape and not np.array_equal(noisy, image)


def test_noise_is_seeded():
    image = np.full((60, 80), 255, dtype=np.uint8)
    noise = NoiseConfig(salt_pepper_rate=0.1)
    a = apply_noise(image, noise, np.random.default_rng(5))
    b = apply_noise(image, noise, np.random.default_rng(5))
    assert np.array_equal(a, b)


def test_config_validation_and_noise_dict():
    with pytest.raises(ValueError):
        GenConfig(count=0)
    with pytest.raises(ValueError):
        GenConfig(symbols_per_sheet=(5, 2))
    with pytest.raises(ValueError):
        GenConfig(label_grammars={'pipeline': PIPE_GRAMMAR})
    with pytest.raises(ValueError):
        NoiseConfig(pixelation_factor=0)
    cfg = GenConfig(noise={'blur_sigma': 0.5})
    assert cfg.noise == NoiseConfig(blur_sigma=0.5)
    assert GenConfig(sheet_width=1000, aspect=0.7).sheet_height == 700


def test_generation_is_deterministic(small_gen_config):
    image_a, ann_a = generate_sheet(small_gen_config, 0)
    image_b, ann_b = generate_sheet(small_gen_config, 0)
    assert np.array_equal(image_a.data, image_b.data)
    assert ann_a.to_dict() == ann_b.to_dict()
    _, other = generate_sheet(small_gen_config, 1)
    assert other.to_dict() != ann_a.to_dict()


def test_annotation_is_consistent(small_gen_config):
    image, ann = generate_sheet(small_gen_config, 0)
    assert (image.width, image.height) == (ann.width, ann.height) == (2000, 1400)
    assert ann.sheet_id == 'sheet_0000'
    assert ann.symbols and ann.lines and ann.pipelines
    for s in ann.symbols:
        assert s.class_id in ALL_CLASSES
        assert 0 <= s.bbox.x and s.bbox.x + s.bbox.w <= ann.width
        assert 0 <= s.bbox.y and s.bbox.y + s.bbox.h <= ann.height
    labels = [s.label for s in ann.symbols if s.label]
    assert len(labels) == len(set(labels))

    pipe_regex = re.compile(grammar_regex(PIPE_GRAMMAR))
    assert all(pipe_regex.match(p.label) for p in ann.pipelines if p.label)
    assert any(p.label for p in ann.pipelines)
    for i, a in enumerate(ann.texts):
        for b in ann.texts[i + 1:]:
            assert intersection_area(a.bbox, b.bbox) == 0

    data = np.asarray(image.data)
    for line in ann.hlines:
        assert (data[int(line.perp) - 1:int(line.perp) + 2, int(line.start):int(line.end) + 1] == 0).any()


def test_noise_does_not_change_annotations(small_gen_config):
    noisy_cfg = replace(small_gen_config, noise=NoiseConfig(2, 0.8, 0.005))
    clean_image, clean = generate_sheet(small_gen_config, 0)
    noisy_image, noisy = generate_sheet(noisy_cfg, 0)
    assert clean.to_dict() == noisy.to_dict()
    assert not np.array_equal(clean_image.data, noisy_image.data)


def test_annotation_file_roundtrip(tmp_path, small_gen_config):
    _, ann = generate_sheet(small_gen_config, 0)
    path = ann.save(tmp_path / 'sheet_0000.json')
    loaded = SheetAnnotation.load(path)
    assert loaded.to_dict() == ann.to_dict()
    assert loaded.truth_result() == ann.truth_result()
    assert set(json.loads(path.read_text())) == {'sheet_id', 'width', 'height', 'kernel_length', 'symbols',
                                                 'hlines', 'vlines', 'texts', 'pipelines'}
    with pytest.raises(FileNotFoundError):
        SheetAnnotation.load(tmp_path / 'missing.json')


def test_split_counts_and_determinism():
    splits = split_indices(100, (4, 1), 0)
    assert len(splits['test']) == 20 and len(splits['train']) == 80
    assert sorted(splits['train'] + splits['test']) == list(range(100))
    assert split_indices(100, (4, 1), 0) == splits
    assert split_indices(100, (4, 1), 1) != splits


def test_write_dataset(tmp_path, small_gen_config):
    manifest = write_dataset(small_gen_config, tmp_path)
    assert manifest['count'] == 2 and manifest['seed'] == 7
    assert [s['id'] for s in manifest['sheets']] == ['sheet_0000', 'sheet_0001']
    assert manifest['splits'] == {'train': ['sheet_0000', 'sheet_0001'], 'test': []}
    for entry in manifest['sheets']:
        image = load_gray_file(tmp_path / entry['image'])
        assert (image.width, image.height) == (2000, 1400)
        assert SheetAnnotation.load(tmp_path / entry['annotation']).sheet_id == entry['id']
    assert (tmp_path / 'glyphs' / 'glyphs.png').exists()
    assert (tmp_path / 'templates' / 'manifest.json').exists()
    on_disk = json.loads((tmp_path / 'manifest.json').read_text())
    assert on_disk['config']['noise'] == {'pixelation_factor': 1, 'blur_sigma': 0.0, 'salt_pepper_rate': 0.0}
