"""
Scores digitization output against generated annotations
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.aggregate import DigitizationResult
from src.dataset_gen import SheetAnnotation, text_from_dict
from src.geometry import distance, iou
from src.line_detect import LineSegment, LineStyle
from src.symbol_detect import OTHERS
from src.symbols import COMPLEX_CLASSES
from src.text_extract import TextBox

SYMBOL_IOU = 0.75
TEXT_IOU_SET = (0.5, 0.75, 0.9)
CONFUSION_CLASSES = (OTHERS,) + tuple(COMPLEX_CLASSES)
DETECTIONS_SUFFIX = '_detections.json'


class SheetSetMismatch(ValueError):
    """Prediction and truth directories cover different sheets"""


def _ratio(num: float, den: float, empty: float = 0.0) -> float:
    return float(num) / float(den) if den else empty


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)


@dataclass
class SymbolMatch:
    counts: Dict[int, ClassCounts]
    confusion: np.ndarray
    pairs: List[Tuple[int, int]]


def _greedy_pairs(scores: List[Tuple[float, int, int]]) -> List[Tuple[int, int]]:
    """One-to-one pairs taken by descending score, ties by index"""
    used_a, used_b, pairs = set(), set(), []
    for _, a, b in sorted(scores, key=lambda s: (-s[0], s[1], s[2])):
        if a in used_a or b in used_b:
            continue
        used_a.add(a)
        used_b.add(b)
        pairs.append((a, b))
    return pairs


def match_symbols(pred: Sequence, truth: Sequence, iou_min: float = SYMBOL_IOU) -> SymbolMatch:
    """
    Match predicted symbols to truth

    A pair is a true positive when IOU > iou_min and both class and label
    agree exactly; every other prediction is a false positive of its class
    and every other truth a false negative of its class. The one exception
    to "unmatched prediction is a false positive": unmatched OTHERS
    predictions are not counted. OTHERS predictions only enter
    the confusion matrix, which counts all IOU-matched pairs of complex
    classes regardless of class.
    """
    scores = [(iou(p.bbox, t.bbox), pi, ti) for pi, p in enumerate(pred) for ti, t in enumerate(truth)]
    pairs = _greedy_pairs([s for s in scores if s[0] > iou_min])

    counts: Dict[int, ClassCounts] = {}
    confusion = np.zeros((len(CONFUSION_CLASSES), len(CONFUSION_CLASSES)), dtype=np.int64)
    index = {c: i for i, c in enumerate(CONFUSION_CLASSES)}
    matched_pred, matched_truth = set(), set()
    for pi, ti in pairs:
        p, t = pred[pi], truth[ti]
        if t.class_id in index and p.class_id in index:
            confusion[index[t.class_id], index[p.class_id]] += 1
        if p.class_id == t.class_id and p.label == t.label:
            counts.setdefault(t.class_id, ClassCounts()).tp += 1
            matched_pred.add(pi)
            matched_truth.add(ti)
    for pi, p in enumerate(pred):
        if pi not in matched_pred and p.class_id != OTHERS:
            counts.setdefault(p.class_id, ClassCounts()).fp += 1
    for ti, t in enumerate(truth):
        if ti not in matched_truth:
            counts.setdefault(t.class_id, ClassCounts()).fn += 1
    return SymbolMatch(counts, confusion, pairs)


def _line_matches(pred: LineSegment, truth: LineSegment, tol: float) -> bool:
    return (pred.orientation == truth.orientation and pred.style == truth.style
            and distance(pred.p1, truth.p1) <= tol and distance(pred.p2, truth.p2) <= tol)


def line_counts(pred: Sequence[LineSegment], truth: Sequence[LineSegment],
                tol: float) -> Dict[str, Tuple[int, int]]:
    """(correct, total) truth lines per style"""
    result = {}
    for style, key in ((LineStyle.SOLID, 'complete'), (LineStyle.DASHED, 'dashed')):
        wanted = [t for t in truth if t.style == style]
        candidates = [p for p in pred if p.style == style]
        correct = sum(any(_line_matches(p, t, tol) for p in candidates) for t in wanted)
        result[key] = (correct, len(wanted))
    return result


def line_accuracy(pred: Sequence[LineSegment], truth: Sequence[LineSegment], tol: float) -> Dict[str, float]:
    """
    Fraction of truth lines reproduced per style

    A truth line is correct when a prediction of the same style and
    orientation has both endpoints within tol. A style with no truth lines
    scores 1.0.
    """
    return {key: _ratio(c, n, empty=1.0) for key, (c, n) in line_counts(pred, truth, tol).items()}


def text_counts(pred: Sequence[TextBox], truth: Sequence[TextBox],
                iou_set: Sequence[float] = TEXT_IOU_SET) -> dict:
    thresholds = sorted(iou_set)
    scores = [(iou(p.bbox, t.bbox), pi, ti) for pi, p in enumerate(pred) for ti, t in enumerate(truth)]
    detected, recognized, loosest = {}, 0, None
    for thr in thresholds:
        pairs = _greedy_pairs([s for s in scores if s[0] >= thr])
        detected[thr] = len(pairs)
        if loosest is None:
            loosest = pairs
    recognized = sum(pred[pi].text == truth[ti].text for pi, ti in loosest or [])
    return {'total': len(truth), 'detected': detected, 'recognized': recognized,
            'recognition_total': len(loosest or [])}


def text_metrics(pred: Sequence[TextBox], truth: Sequence[TextBox],
                 iou_set: Sequence[float] = TEXT_IOU_SET) -> dict:
    """
    Detection accuracy per IOU threshold and exact-match recognition accuracy

    Recognition is measured over the pairs matched at the loosest threshold.
    """
    counts = text_counts(pred, truth, iou_set)
    return {
        'detection': {thr: _ratio(n, counts['total']) for thr, n in counts['detected'].items()},
        'recognition': _ratio(counts['recognized'], counts['recognition_total']),
    }


def _edge_distance(pred, truth) -> float:
    straight = max(distance(pred.v1, truth.v1), distance(pred.v2, truth.v2))
    crossed = max(distance(pred.v1, truth.v2), distance(pred.v2, truth.v1))
    return min(straight, crossed)


def adjacency_counts(pred: DigitizationResult, truth: SheetAnnotation,
                     tol: Optional[float] = None) -> Tuple[int, int]:
    tol = float(truth.kernel_length if tol is None else tol)
    truth_edges = list(truth.pipelines)
    pred_edges = list(pred.pipelines)
    if not truth_edges:
        return 0, 0
    scores = []
    for ti, t in enumerate(truth_edges):
        for pi, p in enumerate(pred_edges):
            d = _edge_distance(p, t)
            if d <= tol:
                scores.append((-d, ti, pi))
    mapping = dict(_greedy_pairs(scores))
    pred_index = {p.edge_id: i for i, p in enumerate(pred_edges)}
    truth_index = {t.edge_id: i for i, t in enumerate(truth_edges)}

    correct = 0
    for ti, t in enumerate(truth_edges):
        if ti not in mapping:
            continue
        p = pred_edges[mapping[ti]]
        if p.label != t.label:
            continue
        mapped = {mapping.get(truth_index[a]) for a in t.adjacent_edge_ids}
        if None in mapped:
            continue
        if mapped == {pred_index[a] for a in p.adjacent_edge_ids if a in pred_index}:
            correct += 1
    return correct, len(truth_edges)


def graph_adjacency_accuracy(pred: DigitizationResult, truth: SheetAnnotation,
                             tol: Optional[float] = None) -> float:
    """
    Fraction of truth edges whose label and adjacency set are reproduced

    Edges are paired by endpoint proximity within tol (the sheet's kernel
    length by default). A sheet without truth edges scores 1.0.
    """
    correct, total = adjacency_counts(pred, truth, tol)
    return _ratio(correct, total, empty=1.0)


@dataclass
class SheetCounts:
    """Additive per-sheet tallies; reports are derived from sums of these"""
    symbols: Dict[int, ClassCounts] = field(default_factory=dict)
    confusion: np.ndarray = field(
        default_factory=lambda: np.zeros((len(CONFUSION_CLASSES), len(CONFUSION_CLASSES)), dtype=np.int64))
    lines: Dict[str, List[int]] = field(default_factory=lambda: {'complete': [0, 0], 'dashed': [0, 0]})
    text_total: int = 0
    text_detected: Dict[float, int] = field(default_factory=dict)
    text_recognized: int = 0
    text_recognition_total: int = 0
    graph: List[int] = field(default_factory=lambda: [0, 0])
    sheets: int = 0

    def add(self, other: 'SheetCounts') -> 'SheetCounts':
        for class_id, c in other.symbols.items():
            mine = self.symbols.setdefault(class_id, ClassCounts())
            mine.tp += c.tp
            mine.fp += c.fp
            mine.fn += c.fn
        self.confusion = self.confusion + other.confusion
        for key, (c, n) in other.lines.items():
            self.lines[key][0] += c
            self.lines[key][1] += n
        self.text_total += other.text_total
        for thr, n in other.text_detected.items():
            self.text_detected[thr] = self.text_detected.get(thr, 0) + n
        self.text_recognized += other.text_recognized
        self.text_recognition_total += other.text_recognition_total
        self.graph[0] += other.graph[0]
        self.graph[1] += other.graph[1]
        self.sheets += other.sheets
        return self


@dataclass
class EvalReport:
    per_class: Dict[int, dict]
    confusion: np.ndarray
    line_accuracy: Dict[str, float]
    text: dict
    graph_adjacency_acc: float
    sheets: int = 0
    splits: Dict[str, dict] = field(default_factory=dict)

    @classmethod
    def from_counts(cls, counts: SheetCounts, iou_set: Sequence[float] = TEXT_IOU_SET) -> 'EvalReport':
        per_class = {cid: {'precision': c.precision, 'recall': c.recall, 'f1': c.f1,
                           'tp': c.tp, 'fp': c.fp, 'fn': c.fn}
                     for cid, c in sorted(counts.symbols.items())}
        lines = {key: _ratio(c, n, empty=1.0) for key, (c, n) in counts.lines.items()}
        text = {
            'detection': {thr: _ratio(counts.text_detected.get(thr, 0), counts.text_total)
                          for thr in sorted(iou_set)},
            'recognition': _ratio(counts.text_recognized, counts.text_recognition_total),
        }
        graph = _ratio(counts.graph[0], counts.graph[1], empty=1.0)
        return cls(per_class, counts.confusion, lines, text, graph, counts.sheets)

    def summary(self) -> dict:
        f1s = [row['f1'] for row in self.per_class.values()]
        return {
            'sheets': self.sheets,
            'mean_f1': float(np.mean(f1s)) if f1s else 0.0,
            'line_accuracy': self.line_accuracy,
            'text': {'detection': {str(k): v for k, v in self.text['detection'].items()},
                     'recognition': self.text['recognition']},
            'graph_adjacency_acc': self.graph_adjacency_acc,
        }

    def to_dict(self) -> dict:
        data = self.summary()
        data['per_class'] = {str(k): v for k, v in self.per_class.items()}
        data['confusion'] = self.confusion.tolist()
        data['splits'] = self.splits
        return data

    def confusion_frame(self) -> pd.DataFrame:
        names = ['OTHERS' if c == OTHERS else str(c) for c in CONFUSION_CLASSES]
        frame = pd.DataFrame(self.confusion, index=names, columns=names)
        frame.index.name = 'truth'
        return frame

    def per_class_frame(self) -> pd.DataFrame:
        rows = [{'class_id': cid, **row} for cid, row in self.per_class.items()]
        return pd.DataFrame(rows, columns=['class_id', 'precision', 'recall', 'f1', 'tp', 'fp', 'fn'])

    def write(self, out_dir) -> Dict[str, Path]:
        """Write eval_report.json, confusion.csv and eval_report.xlsx"""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {'json': out / 'eval_report.json', 'confusion': out / 'confusion.csv',
                 'xlsx': out / 'eval_report.xlsx'}
        with open(paths['json'], 'w', encoding='utf-8', newline='\n') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        self.confusion_frame().to_csv(paths['confusion'], lineterminator='\n')
        summary = pd.DataFrame([{'metric': k, 'value': v} for k, v in _flatten(self.summary()).items()])
        with pd.ExcelWriter(paths['xlsx'], engine='openpyxl') as writer:
            summary.to_excel(writer, sheet_name='summary', index=False)
            self.per_class_frame().to_excel(writer, sheet_name='per_class', index=False)
            self.confusion_frame().to_excel(writer, sheet_name='confusion')
        return paths


def _flatten(data: dict, prefix: str = '') -> Dict[str, float]:
    flat = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, name + '.'))
        else:
            flat[name] = value
    return flat


def load_detections(path) -> Tuple[List[LineSegment], List[TextBox]]:
    """Read the raw lines and texts a digitization run saved next to its CSVs"""
    path = Path(path)
    if not path.exists():
        return [], []
    with open(path, 'r', encoding='utf-8') as f:
        data = json.load(f)
    return ([LineSegment.from_dict(d) for d in data.get('lines', [])],
            [text_from_dict(d) for d in data.get('texts', [])])


class Evaluator:
    """Per-sheet scoring with per-split and overall reduction"""

    def __init__(self, iou_set: Sequence[float] = TEXT_IOU_SET, symbol_iou: float = SYMBOL_IOU,
                 threads: int = 1):
        if not all(0 < t <= 1 for t in iou_set):
            raise ValueError(f"IOU thresholds must be in (0, 1], got {list(iou_set)}")
        self.iou_set = tuple(sorted(iou_set))
        self.symbol_iou = symbol_iou
        self.threads = max(1, threads)
        self.logger = logging.getLogger(__name__)

    def evaluate_sheet(self, pred: DigitizationResult, truth: SheetAnnotation,
                       lines: Sequence[LineSegment] = (), texts: Sequence[TextBox] = ()) -> SheetCounts:
        match = match_symbols(pred.symbols, truth.symbols, self.symbol_iou)
        tcounts = text_counts(texts, truth.texts, self.iou_set)
        correct, total = adjacency_counts(pred, truth)
        return SheetCounts(
            symbols=match.counts,
            confusion=match.confusion,
            lines={k: list(v) for k, v in line_counts(lines, truth.lines, truth.kernel_length).items()},
            text_total=tcounts['total'],
            text_detected=tcounts['detected'],
            text_recognized=tcounts['recognized'],
            text_recognition_total=tcounts['recognition_total'],
            graph=[correct, total],
            sheets=1,
        )

    def _truth_sheets(self, truth_dir: Path) -> Dict[str, Tuple[Path, str]]:
        manifest = truth_dir / 'manifest.json'
        if manifest.exists():
            with open(manifest, 'r', encoding='utf-8') as f:
                data = json.load(f)
            return {s['id']: (truth_dir / s['annotation'], s.get('split', 'all')) for s in data['sheets']}
        annotations = truth_dir / 'annotations'
        folder = annotations if annotations.is_dir() else truth_dir
        return {p.stem: (p, 'all') for p in sorted(folder.glob('*.json'))}

    def evaluate_dirs(self, pred_dir, truth_dir, out_dir=None) -> EvalReport:
        """
        Score every sheet of a dataset directory against a prediction directory

        An empty prediction directory scores every sheet against empty
        output. A partial or foreign set of predictions raises
        SheetSetMismatch naming the ids involved.
        """
        pred_dir, truth_dir = Path(pred_dir), Path(truth_dir)
        if not truth_dir.is_dir():
            raise FileNotFoundError(f"Truth directory not found: {truth_dir}")
        if not pred_dir.is_dir():
            raise FileNotFoundError(f"Prediction directory not found: {pred_dir}")
        sheets = self._truth_sheets(truth_dir)
        predicted = {p.name[:-len('_symbols.csv')] for p in pred_dir.glob('*_symbols.csv')}
        if predicted:
            missing = sorted(set(sheets) - predicted)
            extra = sorted(predicted - set(sheets))
            if missing or extra:
                raise SheetSetMismatch(f"Sheet sets differ: missing predictions {missing}, unknown sheets {extra}")
        else:
            self.logger.warning(f"No predictions in {pred_dir}; scoring {len(sheets)} sheets as empty")

        def score(sheet_id: str) -> Tuple[str, SheetCounts]:
            annotation_path, split = sheets[sheet_id]
            truth = SheetAnnotation.load(annotation_path)
            if sheet_id in predicted:
                pred = DigitizationResult.read_csv(pred_dir, sheet_id)
                lines, texts = load_detections(pred_dir / f"{sheet_id}{DETECTIONS_SUFFIX}")
            else:
                pred, lines, texts = DigitizationResult((), ()), [], []
            counts = self.evaluate_sheet(pred, truth, lines, texts)
            self.logger.debug(f"Scored {sheet_id} ({split})")
            return split, counts

        ids = sorted(sheets)
        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                scored = list(pool.map(score, ids))
        else:
            scored = [score(i) for i in ids]

        overall, per_split = SheetCounts(), {}
        for split, counts in scored:
            per_split.setdefault(split, SheetCounts()).add(counts)
            overall.add(counts)
        report = EvalReport.from_counts(overall, self.iou_set)
        report.splits = {name: EvalReport.from_counts(c, self.iou_set).summary()
                         for name, c in sorted(per_split.items())}
        self.logger.info(f"Evaluated {report.sheets} sheets: "
                         f"complete lines {report.line_accuracy['complete']:.3f}, "
                         f"dashed {report.line_accuracy['dashed']:.3f}, "
                         f"graph adjacency {report.graph_adjacency_acc:.3f}")
        if out_dir is not None:
            report.write(out_dir)
        return report
