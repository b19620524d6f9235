"""Symbol-to-graph and symbol-to-text association, output tables and rule-based reconciliation"""

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
from scipy.spatial import cKDTree

from src.geometry import BBox, Point
from src.graph_build import PidGraph
from src.symbol_detect import OTHERS, SymbolInstance
from src.text_extract import TextBox

ALL = 'ALL'
RULE_KINDS = ('label_regex', 'static_label', 'require_connection')
# reconcile applies kinds in this order whatever the rule file order
APPLY_ORDER = ('static_label', 'label_regex', 'require_connection')

SYMBOL_COLUMNS = ['symbol_id', 'class_id', 'x', 'y', 'w', 'h', 'label', 'connected_edge_ids']
PIPELINE_COLUMNS = ['edge_id', 'label', 'x1', 'y1', 'x2', 'y2', 'style', 'adjacent_edge_ids']


@dataclass(frozen=True)
class AggregateConfig:
    k: int = 5
    weak_fraction: float = 0.25
    rules_path: Optional[str] = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0 < self.weak_fraction <= 1:
            raise ValueError(f"weak_fraction must be in (0, 1], got {self.weak_fraction}")


@dataclass(frozen=True)
class Rule:
    scope: Union[int, str]
    kind: str
    payload: Optional[str] = None

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"Unknown rule kind: {self.kind}")
        if self.scope != ALL and not isinstance(self.scope, int):
            raise ValueError(f"Rule scope must be a class id or {ALL!r}, got {self.scope!r}")
        if self.kind == 'label_regex':
            re.compile(self.payload or '')
        if self.kind == 'static_label' and self.payload is None:
            raise ValueError("static_label rules need a payload")

    def applies_to(self, class_id: int) -> bool:
        return self.scope == ALL or self.scope == class_id


@dataclass(frozen=True)
class RuleSet:
    rules: Tuple[Rule, ...] = ()

    @classmethod
    def load(cls, path) -> 'RuleSet':
        """Read a JSON rule file: {"rules": [{"scope", "kind", "payload"}, ...]}"""
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Rule file not found: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
        rules = []
        for entry in data.get('rules', []):
            scope = entry.get('scope', ALL)
            rules.append(Rule(scope if scope == ALL else int(scope), entry['kind'], entry.get('payload')))
        return cls(tuple(rules))

    def regex_for(self, class_id: int) -> Optional[str]:
        for rule in self.rules:
            if rule.kind == 'label_regex' and rule.applies_to(class_id):
                return rule.payload
        return None


@dataclass(frozen=True)
class Association:
    vertex: Optional[int]
    distance: float
    edge_ids: Tuple[int, ...] = ()
    weak: bool = False


@dataclass(frozen=True)
class SymbolRecord:
    symbol_id: int
    class_id: int
    bbox: BBox
    label: str = ''
    connected_edge_ids: Tuple[int, ...] = ()


@dataclass(frozen=True)
class PipelineRecord:
    edge_id: int
    label: str
    v1: Point
    v2: Point
    style: str
    adjacent_edge_ids: Tuple[int, ...] = ()


def _join(ids: Sequence[int]) -> str:
    return ';'.join(str(i) for i in ids)


def _split(value) -> Tuple[int, ...]:
    if value is None or (isinstance(value, float) and math.isnan(value)) or str(value) == '':
        return ()
    return tuple(int(v) for v in str(value).split(';'))


def _text(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ''
    return str(value)


@dataclass(frozen=True)
class DigitizationResult:
    """The two output tables of one digitized sheet"""
    symbols: Tuple[SymbolRecord, ...] = ()
    pipelines: Tuple[PipelineRecord, ...] = ()

    def symbols_frame(self) -> pd.DataFrame:
        rows = [[s.symbol_id, s.class_id, s.bbox.x, s.bbox.y, s.bbox.w, s.bbox.h, s.label,
                 _join(s.connected_edge_ids)] for s in self.symbols]
        return pd.DataFrame(rows, columns=SYMBOL_COLUMNS)

    def pipelines_frame(self) -> pd.DataFrame:
        rows = [[p.edge_id, p.label, p.v1.x, p.v1.y, p.v2.x, p.v2.y, p.style,
                 _join(p.adjacent_edge_ids)] for p in self.pipelines]
        return pd.DataFrame(rows, columns=PIPELINE_COLUMNS)

    def write_csv(self, directory, stem: str) -> Tuple[Path, Path]:
        """Write <stem>_symbols.csv and <stem>_pipelines.csv (UTF-8, LF, header row)"""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        symbols_path = directory / f"{stem}_symbols.csv"
        pipelines_path = directory / f"{stem}_pipelines.csv"
        self.symbols_frame().to_csv(symbols_path, index=False, encoding='utf-8',
                                    lineterminator='\n', float_format='%.2f')
        self.pipelines_frame().to_csv(pipelines_path, index=False, encoding='utf-8',
                                      lineterminator='\n', float_format='%.2f')
        return symbols_path, pipelines_path

    @classmethod
    def read_csv(cls, directory, stem: str) -> 'DigitizationResult':
        directory = Path(directory)
        symbols_path = directory / f"{stem}_symbols.csv"
        pipelines_path = directory / f"{stem}_pipelines.csv"
        for path in (symbols_path, pipelines_path):
            if not path.exists():
                raise FileNotFoundError(f"Result table not found: {path}")
        sym = pd.read_csv(symbols_path, dtype={'label': str, 'connected_edge_ids': str},
                          keep_default_na=False)
        pipe = pd.read_csv(pipelines_path, dtype={'label': str, 'adjacent_edge_ids': str, 'style': str},
                           keep_default_na=False)
        symbols = tuple(SymbolRecord(int(r.symbol_id), int(r.class_id),
                                     BBox(float(r.x), float(r.y), float(r.w), float(r.h)),
                                     _text(r.label), _split(r.connected_edge_ids))
                        for r in sym.itertuples(index=False))
        pipelines = tuple(PipelineRecord(int(r.edge_id), _text(r.label), Point(float(r.x1), float(r.y1)),
                                         Point(float(r.x2), float(r.y2)), _text(r.style),
                                         _split(r.adjacent_edge_ids))
                          for r in pipe.itertuples(index=False))
        return cls(symbols, pipelines)


def map_symbols_to_graph(symbols: Sequence[SymbolInstance], graph: PidGraph,
                         sheet_size: Optional[Tuple[int, int]] = None,
                         weak_fraction: float = 0.25) -> List[Association]:
    """
    Associate every symbol with the graph vertex nearest to its box centre

    Associations farther than weak_fraction of the sheet diagonal are
    flagged weak.
    """
    logger = logging.getLogger(__name__)
    if not symbols:
        return []
    if not graph.vertices:
        logger.warning(f"Empty graph: {len(symbols)} symbols left unconnected")
        return [Association(None, math.inf) for _ in symbols]

    tree = cKDTree([(v.x, v.y) for v in graph.vertices])
    incident: Dict[int, List[int]] = {}
    for i, edge in enumerate(graph.edges):
        incident.setdefault(edge.v1, []).append(i)
        incident.setdefault(edge.v2, []).append(i)
    limit = math.hypot(*sheet_size) * weak_fraction if sheet_size else math.inf

    associations = []
    for symbol in symbols:
        dist, vertex = tree.query((symbol.bbox.center.x, symbol.bbox.center.y))
        associations.append(Association(int(vertex), float(dist),
                                        tuple(sorted(incident.get(int(vertex), []))), float(dist) > limit))
    weak = sum(a.weak for a in associations)
    if weak:
        logger.warning(f"{weak} symbol(s) only weakly associated with the graph")
    return associations


def label_pattern(text: str) -> str:
    """Digit runs become '#', letter runs become '@'"""
    return re.sub(r'[A-Za-z]+', '@', re.sub(r'\d+', '#', text))


@dataclass
class TextMapping:
    symbols: List[SymbolInstance]
    unlabelled: List[int] = field(default_factory=list)
    consumed: List[int] = field(default_factory=list)


def map_symbols_to_text(symbols: Sequence[SymbolInstance], texts: Sequence[TextBox], k: int = 5,
                        rules: RuleSet = RuleSet()) -> TextMapping:
    """
    Label symbols from their k nearest text boxes

    Classes with a label_regex rule take the nearest matching text. Other
    classes take the candidate whose pattern is seen by the most instances of
    the class, nearest first. Symbols that already carry embedded text keep
    it, and texts inside such symbols are not offered to others. Each text
    labels at most one symbol. OTHERS instances are never labelled.
    """
    labelled = list(symbols)
    consumed = {ti for ti, t in enumerate(texts)
                for s in symbols if s.label and s.bbox.contains(t.bbox.center)}
    pending = [i for i, s in enumerate(symbols) if not s.label and s.class_id != OTHERS]
    if not texts or not pending:
        unlabelled = pending if not texts else []
        return TextMapping(labelled, unlabelled, sorted(consumed))

    tree = cKDTree([(t.bbox.center.x, t.bbox.center.y) for t in texts])
    kk = min(k, len(texts))
    candidates: Dict[int, List[Tuple[float, int]]] = {}
    for i in pending:
        c = symbols[i].bbox.center
        dists, idxs = tree.query((c.x, c.y), k=kk)
        if kk == 1:
            dists, idxs = [dists], [idxs]
        candidates[i] = [(float(d), int(t)) for d, t in zip(dists, idxs) if int(t) not in consumed]

    regex_pairs, pattern_pairs = [], []
    by_class: Dict[int, List[int]] = {}
    for i in pending:
        by_class.setdefault(symbols[i].class_id, []).append(i)
    for class_id, members in sorted(by_class.items()):
        regex = rules.regex_for(class_id)
        if regex is not None:
            pattern = re.compile(regex)
            for i in members:
                regex_pairs.extend((d, i, t) for d, t in candidates[i] if pattern.match(texts[t].text))
            continue
        seen = Counter()
        for i in members:
            seen.update({label_pattern(texts[t].text) for _, t in candidates[i]})
        for i in members:
            pattern_pairs.extend((-seen[label_pattern(texts[t].text)], d, i, t) for d, t in candidates[i])

    assigned = set()
    for *_, i, t in sorted(regex_pairs) + sorted(pattern_pairs):
        if i in assigned or t in consumed:
            continue
        labelled[i] = replace(labelled[i], label=texts[t].text)
        assigned.add(i)
        consumed.add(t)
    unlabelled = [i for i in pending if i not in assigned]
    if unlabelled:
        logging.getLogger(__name__).warning(f"{len(unlabelled)} symbol(s) without a label candidate")
    return TextMapping(labelled, unlabelled, sorted(consumed))


def emit_result(symbols: Sequence[SymbolInstance], graph: PidGraph,
                associations: Optional[Sequence[Association]] = None) -> DigitizationResult:
    """
    Build the output tables with deterministic ids

    Symbols are numbered by box (y, x); edges keep the graph's order, which
    is sorted by first then second vertex.
    """
    if associations is not None and len(associations) != len(symbols):
        raise ValueError("associations must align with symbols")
    paired = [(s, associations[i].edge_ids if associations is not None else tuple(s.edge_ids))
              for i, s in enumerate(symbols)]
    paired.sort(key=lambda p: (p[0].bbox.y, p[0].bbox.x, p[0].class_id, p[0].label))
    records = tuple(SymbolRecord(sid, s.class_id, s.bbox, s.label, tuple(edges))
                    for sid, (s, edges) in enumerate(paired))

    adjacency = graph.adjacency()
    pipelines = tuple(PipelineRecord(i, e.label or '', graph.vertices[e.v1], graph.vertices[e.v2],
                                     e.style.value, tuple(adjacency[i]))
                      for i, e in enumerate(graph.edges))
    return DigitizationResult(records, pipelines)


def reconcile(result: DigitizationResult, rules: RuleSet) -> Tuple[DigitizationResult, List[dict]]:
    """
    Apply domain rules to the symbol table

    Rules run by kind: static_label overwrites labels of its scope, then
    label_regex blanks and flags labels that do not match, then
    require_connection flags unconnected symbols. Rules of one kind keep
    their file order.

    Returns:
        (reconciled result, report entries for every mutation and flag)
    """
    report = []
    symbols = list(result.symbols)
    for rule in sorted(rules.rules, key=lambda r: APPLY_ORDER.index(r.kind)):
        for i, s in enumerate(symbols):
            if not rule.applies_to(s.class_id):
                continue
            if rule.kind == 'static_label' and s.label != rule.payload:
                report.append({'symbol_id': s.symbol_id, 'rule': rule.kind, 'action': 'overwrite',
                               'before': s.label, 'after': rule.payload})
                symbols[i] = replace(s, label=rule.payload)
            elif rule.kind == 'label_regex' and s.label and not re.match(rule.payload, s.label):
                report.append({'symbol_id': s.symbol_id, 'rule': rule.kind, 'action': 'blank',
                               'before': s.label, 'after': ''})
                report.append({'symbol_id': s.symbol_id, 'rule': rule.kind, 'action': 'flag',
                               'before': '', 'after': '',
                               'detail': f"label {s.label!r} does not match {rule.payload}"})
                symbols[i] = replace(s, label='')
            elif rule.kind == 'require_connection' and not s.connected_edge_ids:
                report.append({'symbol_id': s.symbol_id, 'rule': rule.kind, 'action': 'flag',
                               'before': s.label, 'after': s.label})
    return replace(result, symbols=tuple(symbols)), report


class Aggregator:
    """Associates symbols with the graph and text, then emits and reconciles the tables"""

    def __init__(self, config: AggregateConfig = AggregateConfig(), rules: Optional[RuleSet] = None):
        self.config = config
        self.rules = rules if rules is not None else (
            RuleSet.load(config.rules_path) if config.rules_path else RuleSet())
        self.logger = logging.getLogger(__name__)

    def aggregate(self, symbols: Sequence[SymbolInstance], texts: Sequence[TextBox], graph: PidGraph,
                  sheet_size: Tuple[int, int]) -> Tuple[DigitizationResult, List[dict]]:
        mapping = map_symbols_to_text(symbols, texts, self.config.k, self.rules)
        associations = map_symbols_to_graph(mapping.symbols, graph, sheet_size, self.config.weak_fraction)
        connected = [replace(s, edge_ids=a.edge_ids) for s, a in zip(mapping.symbols, associations)]
        result, report = reconcile(emit_result(connected, graph), self.rules)

        for i in mapping.unlabelled:
            report.append({'symbol_id': None, 'rule': 'text_mapping', 'action': 'flag',
                           'before': '', 'after': '', 'detail': f"no label for class {symbols[i].class_id}"})
        for s, a in zip(mapping.symbols, associations):
            if a.weak or a.vertex is None:
                report.append({'symbol_id': None, 'rule': 'graph_mapping', 'action': 'flag',
                               'before': s.label, 'after': s.label,
                               'detail': f"weak association at distance {a.distance:.1f}"})
            if s.ambiguous:
                report.append({'symbol_id': None, 'rule': 'assembly', 'action': 'flag',
                               'before': s.label, 'after': s.label,
                               'detail': f"ambiguous composition for class {s.class_id}"})
        self.logger.info(f"Aggregated {len(result.symbols)} symbols and {len(result.pipelines)} pipelines "
                         f"({len(report)} report entries)")
        return result, report
