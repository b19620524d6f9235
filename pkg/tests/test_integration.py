"""Command-line runs over tiny generated datasets"""

import json
import logging
from logging.handlers import RotatingFileHandler

import cv2
import numpy as np
import pandas as pd
import pytest

from main import EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, main, thread_cap
from src.aggregate import DigitizationResult
from src.dataset_gen import SheetAnnotation

SMALL = {
    'raster': {'resize_width': 2000},
    'generator': {'seed': 7, 'sheet_width': 2000, 'aspect': 0.7, 'count': 2,
                  'symbols_per_sheet': [4, 6], 'trunks_per_sheet': [2, 3], 'stubs_per_sheet': [1, 2],
                  'noise': {'pixelation_factor': 1, 'blur_sigma': 0.0, 'salt_pepper_rate': 0.0}},
    'pipeline': {'threads': 1},
}


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv('PID_THREADS', '2')
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, RotatingFileHandler) or type(handler) is logging.StreamHandler:
            handler.close()
            root.removeHandler(handler)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / 'settings.json'
    path.write_text(json.dumps(SMALL))
    return str(path)


def _run(config_file, *args):
    return main(['--config', config_file, '--log-dir', 'logs', *args])


def test_usage_errors(tmp_path, config_file):
    assert main(['--config', str(tmp_path / 'missing.json'), 'evaluate', '--pred-dir', 'p',
                 '--truth-dir', 't', '--out-dir', 'o']) == EXIT_USAGE
    bad = tmp_path / 'bad.json'
    bad.write_text(json.dumps({'raster': {'dpi': 300}}))
    assert main(['--config', str(bad), 'generate', '--out-dir', 'data']) == EXIT_USAGE
    assert _run(config_file, 'digitize', str(tmp_path / 'empty_dir_missing'), '--out-dir', 'out') != EXIT_OK
    with pytest.raises(SystemExit) as exc:
        main(['frobnicate'])
    assert exc.value.code == 2


def test_unwritable_out_dir_fails(tmp_path, config_file):
    (tmp_path / 'taken').write_text('x')
    assert _run(config_file, 'generate', '--out-dir', 'taken', '--count', '1') == EXIT_PARTIAL


def test_blank_sheet_digitizes_to_empty_tables(tmp_path, config_file):
    cv2.imwrite(str(tmp_path / 'blank.png'), np.full((300, 400), 255, dtype=np.uint8))
    assert _run(config_file, 'digitize', 'blank.png', '--out-dir', 'out') == EXIT_OK
    result = DigitizationResult.read_csv(tmp_path / 'out', 'blank')
    assert result == DigitizationResult()


def test_overlay_without_results_copies_the_sheet(tmp_path, config_file):
    sheet = np.full((100, 80), 255, dtype=np.uint8)
    sheet[40:43, 10:70] = 0
    cv2.imwrite(str(tmp_path / 'tiny.png'), sheet)
    assert _run(config_file, 'overlay', '--sheet', 'tiny.png', '--out', 'o.png') == EXIT_OK
    out = cv2.imread(str(tmp_path / 'o.png'), cv2.IMREAD_UNCHANGED)
    assert out.shape == (100, 80)
    assert np.array_equal(out, sheet)


def test_thread_cap(monkeypatch):
    assert thread_cap() == 2
    monkeypatch.setenv('PID_THREADS', '0')
    with pytest.raises(ValueError):
        thread_cap()
    monkeypatch.delenv('PID_THREADS')
    assert thread_cap() >= 1


def test_generate_and_score_empty_predictions(tmp_path, config_file):
    assert _run(config_file, 'generate', '--out-dir', 'data', '--count', '1') == EXIT_OK
    manifest = json.loads((tmp_path / 'data' / 'manifest.json').read_text())
    assert manifest['count'] == 1 and manifest['seed'] == 7
    (tmp_path / 'pred').mkdir()
    assert _run(config_file, 'evaluate', '--pred-dir', 'pred', '--truth-dir', 'data',
                '--out-dir', 'report') == EXIT_OK
    report = json.loads((tmp_path / 'report' / 'eval_report.json').read_text())
    assert report['sheets'] == 1 and report['mean_f1'] == 0.0


def test_partial_predictions_fail_evaluation(tmp_path, config_file):
    assert _run(config_file, 'generate', '--out-dir', 'data') == EXIT_OK
    DigitizationResult().write_csv(tmp_path / 'pred', 'sheet_0000')
    assert _run(config_file, 'evaluate', '--pred-dir', 'pred', '--truth-dir', 'data',
                '--out-dir', 'report') == EXIT_PARTIAL
    assert not (tmp_path / 'report' / 'eval_report.json').exists()


def test_truth_tables_score_perfectly(tmp_path, config_file):
    assert _run(config_file, 'generate', '--out-dir', 'data') == EXIT_OK
    for sheet_id in ('sheet_0000', 'sheet_0001'):
        ann = SheetAnnotation.load(tmp_path / 'data' / 'annotations' / f"{sheet_id}.json")
        ann.truth_result().write_csv(tmp_path / 'pred', sheet_id)
    assert _run(config_file, 'evaluate', '--pred-dir', 'pred', '--truth-dir', 'data',
                '--out-dir', 'report') == EXIT_OK
    report = json.loads((tmp_path / 'report' / 'eval_report.json').read_text())
    assert report['mean_f1'] == 1.0
    assert report['graph_adjacency_acc'] == 1.0


@pytest.mark.slow
def test_generate_digitize_evaluate(tmp_path, config_file):
    assert _run(config_file, 'generate', '--out-dir', 'data') == EXIT_OK
    assert _run(config_file, 'digitize', 'data/images', '--out-dir', 'pred') == EXIT_OK
    for sheet_id in ('sheet_0000', 'sheet_0001'):
        symbols = pd.read_csv(tmp_path / 'pred' / f"{sheet_id}_symbols.csv", keep_default_na=False)
        assert list(symbols.columns) == ['symbol_id', 'class_id', 'x', 'y', 'w', 'h', 'label',
                                         'connected_edge_ids']
        assert (tmp_path / 'pred' / f"{sheet_id}_pipelines.csv").exists()
    assert _run(config_file, 'evaluate', '--pred-dir', 'pred', '--truth-dir', 'data',
                '--out-dir', 'report') == EXIT_OK
    report = json.loads((tmp_path / 'report' / 'eval_report.json').read_text())
    assert report['sheets'] == 2
    assert report['line_accuracy']['complete'] > 0.3
    history = json.loads((tmp_path / 'logs' / 'digitize_history.json').read_text())
    assert history['runs'][-1]['results']['successful'] == 2


@pytest.mark.slow
def test_digitize_is_deterministic(tmp_path, config_file):
    assert _run(config_file, 'generate', '--out-dir', 'data', '--count', '1') == EXIT_OK
    assert _run(config_file, 'digitize', 'data/images', '--out-dir', 'a') == EXIT_OK
    assert _run(config_file, 'digitize', 'data/images', '--out-dir', 'b', '--threads', '2') == EXIT_OK
    for name in ('sheet_0000_symbols.csv', 'sheet_0000_pipelines.csv'):
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()


@pytest.mark.slow
def test_overlay(tmp_path, config_file):
    assert _run(config_file, 'generate', '--out-dir', 'data', '--count', '1') == EXIT_OK
    assert _run(config_file, 'overlay', '--sheet', 'data/images/sheet_0000.png', '--out', 'o.png') == EXIT_OK
    assert (tmp_path / 'o.png').exists()
    assert _run(config_file, 'overlay', '--sheet', 'data/images/sheet_0000.png', '--out', 'h.png',
                '--compare-hough') == EXIT_OK
    assert (tmp_path / 'h.png').exists()
