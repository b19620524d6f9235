import json

import numpy as np
import pandas as pd
import pytest

from src.aggregate import DigitizationResult, PipelineRecord, SymbolRecord
from src.dataset_gen import SheetAnnotation, SymbolTruth
from src.evaluate import (CONFUSION_CLASSES, ClassCounts, Evaluator, SheetSetMismatch, f1_score,
                          graph_adjacency_accuracy, line_accuracy, match_symbols, text_metrics)
from src.geometry import BBox, Point
from src.line_detect import LineStyle, make_segment
from src.raster import Orientation
from src.symbol_detect import OTHERS
from src.text_extract import TextBox

H, V = Orientation.HORIZONTAL, Orientation.VERTICAL


def _pred(i, class_id, x, y, label=''):
    return SymbolRecord(i, class_id, BBox(x, y, 40, 40), label)


def _truth(class_id, x, y, label=''):
    return SymbolTruth(class_id, BBox(x, y, 40, 40), label)


def _pipes(offset=0.0, labels=('A', 'A', 'B')):
    """Three edges meeting at (100, 100)"""
    ends = [(Point(0, 100), Point(100, 100)), (Point(100, 100), Point(200, 100)),
            (Point(100, 100), Point(100, 200))]
    records = []
    for i, (a, b) in enumerate(ends):
        adjacent = tuple(j for j in range(3) if j != i)
        records.append(PipelineRecord(i, labels[i], Point(a.x + offset, a.y), Point(b.x + offset, b.y),
                                      'solid', adjacent))
    return records


def _annotation(sheet_id='sheet_a', symbols=(), lines=(), texts=(), pipelines=()):
    return SheetAnnotation(sheet_id, 400, 300, 5, list(symbols), list(lines), list(texts), list(pipelines))


def test_counts_arithmetic():
    counts = ClassCounts(tp=9, fp=1, fn=2)
    assert counts.precision == pytest.approx(0.9)
    assert counts.recall == pytest.approx(9 / 11)
    assert counts.f1 == pytest.approx(f1_score(0.9, 9 / 11))
    assert ClassCounts().f1 == 0.0


def test_symbol_matching_counts():
    truth = [_truth(3, 100 * i, 0) for i in range(11)]
    pred = [_pred(i, 3, 100 * i + 2, 1) for i in range(9)] + [_pred(9, 3, 5000, 5000)]
    match = match_symbols(pred, truth)
    assert (match.counts[3].tp, match.counts[3].fp, match.counts[3].fn) == (9, 1, 2)
    assert match.confusion.shape == (26, 26)
    assert match.confusion[CONFUSION_CLASSES.index(3), CONFUSION_CLASSES.index(3)] == 9


def test_wrong_class_or_label_is_not_a_true_positive():
    truth = [_truth(3, 0, 0, 'PV-101'), _truth(4, 200, 0)]
    pred = [_pred(0, 3, 0, 0, 'PV-102'), _pred(1, 5, 200, 0)]
    match = match_symbols(pred, truth)
    assert sum(c.tp for c in match.counts.values()) == 0
    assert match.counts[3].fp == 1 and match.counts[3].fn == 1
    assert match.counts[5].fp == 1 and match.counts[4].fn == 1
    assert match.confusion[CONFUSION_CLASSES.index(4), CONFUSION_CLASSES.index(5)] == 1


def test_others_predictions_are_not_false_positives():
    match = match_symbols([_pred(0, OTHERS, 0, 0), _pred(1, OTHERS, 500, 500)], [_truth(3, 0, 0)])
    assert OTHERS not in match.counts
    assert sum(c.fp for c in match.counts.values()) == 0
    assert match.counts[3].fn == 1
    assert match.confusion[CONFUSION_CLASSES.index(3), CONFUSION_CLASSES.index(OTHERS)] == 1


def test_low_overlap_does_not_match():
    # IOU of a 40 px box shifted by 10 px is 0.6
    match = match_symbols([_pred(0, 3, 10, 0)], [_truth(3, 0, 0)])
    assert match.pairs == []
    assert (match.counts[3].tp, match.counts[3].fp, match.counts[3].fn) == (0, 1, 1)


def test_line_accuracy_tolerance():
    truth = [make_segment(0, 10, 100, 10, H), make_segment(50, 0, 50, 80, V),
             make_segment(0, 50, 100, 50, H, LineStyle.DASHED)]
    pred = [make_segment(2, 11, 101, 12, H),            # within tol
            make_segment(50, 6, 50, 80, V),             # start off by tol + 1
            make_segment(0, 50, 100, 50, H)]            # wrong style
    assert line_accuracy(pred, truth, tol=5) == {'complete': 0.5, 'dashed': 0.0}
    assert line_accuracy([], [], tol=5) == {'complete': 1.0, 'dashed': 1.0}


def test_text_metrics():
    truth = [TextBox(BBox(0, 0, 100, 20), 'XT-101'), TextBox(BBox(0, 100, 100, 20), 'PV-7')]
    pred = [TextBox(BBox(0, 0, 100, 20), 'XT-101'), TextBox(BBox(0, 104, 100, 20), 'PV-1')]
    metrics = text_metrics(pred, truth)
    # second pair overlaps with IOU 16 / 24
    assert metrics['detection'] == {0.5: 1.0, 0.75: 0.5, 0.9: 0.5}
    assert metrics['recognition'] == 0.5
    assert text_metrics([], truth) == {'detection': {0.5: 0.0, 0.75: 0.0, 0.9: 0.0}, 'recognition': 0.0}


def test_graph_adjacency_accuracy():
    truth = _annotation(pipelines=_pipes())
    assert graph_adjacency_accuracy(DigitizationResult((), tuple(_pipes(offset=2))), truth) == 1.0
    relabelled = DigitizationResult((), tuple(_pipes(labels=('A', 'A', 'C'))))
    assert graph_adjacency_accuracy(relabelled, truth) == pytest.approx(2 / 3)
    assert graph_adjacency_accuracy(DigitizationResult(), truth) == 0.0
    assert graph_adjacency_accuracy(DigitizationResult(), _annotation()) == 1.0


def _truth_dir(tmp_path, ids):
    truth_dir = tmp_path / 'truth'
    (truth_dir / 'annotations').mkdir(parents=True)
    for sheet_id in ids:
        _annotation(sheet_id, symbols=[_truth(3, 10, 10, 'PV-101'), _truth(26, 200, 10, 'XI-101')],
                    lines=[make_segment(0, 100, 200, 100, H)],
                    texts=[TextBox(BBox(200, 60, 60, 14), 'XI-101')],
                    pipelines=_pipes()).save(truth_dir / 'annotations' / f"{sheet_id}.json")
    return truth_dir


def test_perfect_predictions_score_one(tmp_path):
    truth_dir = _truth_dir(tmp_path, ['sheet_a', 'sheet_b'])
    pred_dir = tmp_path / 'pred'
    for sheet_id in ('sheet_a', 'sheet_b'):
        SheetAnnotation.load(truth_dir / 'annotations' / f"{sheet_id}.json").truth_result().write_csv(
            pred_dir, sheet_id)
    report = Evaluator().evaluate_dirs(pred_dir, truth_dir)
    assert report.sheets == 2
    assert report.per_class[3]['f1'] == 1.0 and report.per_class[26]['tp'] == 2
    assert report.graph_adjacency_acc == 1.0
    # no detections file, so no lines or texts were reported
    assert report.line_accuracy['complete'] == 0.0
    assert report.splits == {'all': report.summary()}


def test_empty_predictions_score_zero(tmp_path):
    truth_dir = _truth_dir(tmp_path, ['sheet_a'])
    (tmp_path / 'pred').mkdir()
    report = Evaluator().evaluate_dirs(tmp_path / 'pred', truth_dir)
    assert report.sheets == 1
    assert all(row['f1'] == 0.0 and row['tp'] == 0 for row in report.per_class.values())
    assert report.graph_adjacency_acc == 0.0
    assert report.text['recognition'] == 0.0


def test_partial_or_foreign_predictions_raise(tmp_path):
    truth_dir = _truth_dir(tmp_path, ['sheet_a', 'sheet_b'])
    pred_dir = tmp_path / 'pred'
    DigitizationResult().write_csv(pred_dir, 'sheet_a')
    with pytest.raises(SheetSetMismatch, match='sheet_b'):
        Evaluator().evaluate_dirs(pred_dir, truth_dir)
    DigitizationResult().write_csv(pred_dir, 'sheet_b')
    DigitizationResult().write_csv(pred_dir, 'sheet_z')
    with pytest.raises(SheetSetMismatch, match='sheet_z'):
        Evaluator().evaluate_dirs(pred_dir, truth_dir)
    with pytest.raises(FileNotFoundError):
        Evaluator().evaluate_dirs(pred_dir, tmp_path / 'missing')


def test_report_files(tmp_path):
    truth_dir = _truth_dir(tmp_path, ['sheet_a'])
    (tmp_path / 'pred').mkdir()
    report = Evaluator(threads=2).evaluate_dirs(tmp_path / 'pred', truth_dir, tmp_path / 'report')
    data = json.loads((tmp_path / 'report' / 'eval_report.json').read_text())
    assert data['sheets'] == 1
    assert np.array(data['confusion']).shape == (26, 26)
    confusion = pd.read_csv(tmp_path / 'report' / 'confusion.csv', index_col=0)
    assert confusion.shape == (26, 26) and list(confusion.index)[0] == 'OTHERS'
    sheets = pd.read_excel(tmp_path / 'report' / 'eval_report.xlsx', sheet_name=None, engine='openpyxl')
    assert set(sheets) == {'summary', 'per_class', 'confusion'}
    assert report.summary()['sheets'] == 1


def test_evaluator_validation():
    with pytest.raises(ValueError):
        Evaluator(iou_set=(0.5, 1.5))
