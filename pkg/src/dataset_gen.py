"""
Synthetic P&ID sheet generator

Sheets carry an orthogonal pipe network (horizontal trunks, vertical
connectors between them and dangling signal stubs), inline and free-standing
symbols from the shared 32-class bank, pipe and symbol labels, and optional
noise. Every sheet comes with an exact ground-truth annotation.
"""

import json
import logging
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter

from src.aggregate import (DigitizationResult, PipelineRecord, SymbolRecord, emit_result,
                           map_symbols_to_graph)
from src.geometry import BBox, Point, intersection_area
from src.glyphs import GlyphAtlas
from src.graph_build import GraphConfig, assign_edge_labels, build_graph, propagate_labels
from src.line_detect import LineDetectConfig, LineSegment, LineStyle, kernel_length_for, make_segment
from src.raster import GrayRaster, Orientation, to_png_bytes
from src.symbol_detect import SymbolInstance, TemplateBank
from src.symbols import BASIC_CLASSES, COMPLEX_CLASSES, render_symbol, text_scale
from src.text_extract import TextBox

PIPE_GRAMMAR = 'N"-AA-####'
SYMBOL_GRAMMAR = 'AA-###'
FUNCTION_LETTERS = 'PTFL'
# gap between a label and the pipe or symbol it belongs to
TEXT_GAP = 8
SIDE_GAP = 16
# free space kept around every label so text detection sees it alone
CLEARANCE = 14


@dataclass(frozen=True)
class NoiseConfig:
    pixelation_factor: int = 1
    blur_sigma: float = 0.0
    salt_pepper_rate: float = 0.0

    def __post_init__(self):
        if self.pixelation_factor < 1:
            raise ValueError(f"pixelation_factor must be >= 1, got {self.pixelation_factor}")
        if self.blur_sigma < 0:
            raise ValueError(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        if not 0 <= self.salt_pepper_rate <= 1:
            raise ValueError(f"salt_pepper_rate must be in [0, 1], got {self.salt_pepper_rate}")


def _default_grammars() -> Dict[str, str]:
    return {'pipeline': PIPE_GRAMMAR, 'symbol': SYMBOL_GRAMMAR}


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    sheet_width: int = 7168
    aspect: float = 0.7
    count: int = 1
    symbols_per_sheet: Tuple[int, int] = (20, 40)
    trunks_per_sheet: Tuple[int, int] = (3, 6)
    stubs_per_sheet: Tuple[int, int] = (2, 6)
    dashed_fraction: float = 0.25
    complex_fraction: float = 0.7
    symbol_size: int = 80
    basic_symbol_size: int = 120
    line_thickness: int = 3
    text_scale: int = 2
    label_grammars: Dict[str, str] = field(default_factory=_default_grammars)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    split_ratio: Tuple[int, int] = (4, 1)

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        for name in ('dashed_fraction', 'complex_fraction'):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {getattr(self, name)}")
        for name in ('symbols_per_sheet', 'trunks_per_sheet', 'stubs_per_sheet'):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"{name} must be an increasing (min, max) pair, got {(lo, hi)}")
            object.__setattr__(self, name, (int(lo), int(hi)))
        if len(self.split_ratio) != 2 or min(self.split_ratio) < 0 or sum(self.split_ratio) <= 0:
            raise ValueError(f"split_ratio must be a non-negative (train, test) pair, got {self.split_ratio}")
        object.__setattr__(self, 'split_ratio', tuple(self.split_ratio))
        if isinstance(self.noise, dict):
            object.__setattr__(self, 'noise', NoiseConfig(**self.noise))
        missing = {'pipeline', 'symbol'} - set(self.label_grammars)
        if missing:
            raise ValueError(f"label_grammars missing: {sorted(missing)}")

    @property
    def sheet_height(self) -> int:
        return int(round(self.sheet_width * self.aspect))


def expand_grammar(pattern: str, rng: np.random.Generator) -> str:
    """'A' is a capital letter, '#' a digit, 'N' a nominal size 1-24; anything else is literal"""
    out = []
    for ch in pattern:
        if ch == 'A':
            out.append(chr(ord('A') + int(rng.integers(0, 26))))
        elif ch == '#':
            out.append(str(int(rng.integers(0, 10))))
        elif ch == 'N':
            out.append(str(int(rng.integers(1, 25))))
        else:
            out.append(ch)
    return ''.join(out)


def grammar_regex(pattern: str) -> str:
    parts = []
    for ch in pattern:
        parts.append({'A': '[A-Z]', '#': r'\d', 'N': r'\d+'}.get(ch, re.escape(ch)))
    return '^' + ''.join(parts) + '$'


def dash_intervals(start: int, end: int, dash: int, gap: float) -> List[Tuple[int, int]]:
    """Dash pixel ranges stretched so the first dash starts at `start` and the last ends at `end`"""
    length = end - start
    n = max(2, int(round((length + gap) / (dash + gap))))
    while n > 1 and n * dash > length:
        n -= 1
    if n <= 1:
        return [(start, end)]
    spacing = (length - n * dash) / (n - 1)
    return [(int(round(start + i * (dash + spacing))), int(round(start + i * (dash + spacing) + dash)))
            for i in range(n)]


def apply_noise(image: np.ndarray, noise: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    """Pixelation, then Gaussian blur, then salt-and-pepper"""
    out = image.copy()
    h, w = out.shape
    if noise.pixelation_factor > 1:
        f = noise.pixelation_factor
        small = cv2.resize(out, (max(1, w // f), max(1, h // f)), interpolation=cv2.INTER_AREA)
        out = cv2.resize(small, (w, h), interpolation=cv2.INTER_NEAREST)
    if noise.blur_sigma > 0:
        out = np.clip(np.rint(gaussian_filter(out.astype(np.float32), noise.blur_sigma)), 0, 255).astype(np.uint8)
    if noise.salt_pepper_rate > 0:
        n = int(rng.binomial(out.size, noise.salt_pepper_rate))
        flat = out.reshape(-1)
        idx = rng.integers(0, out.size, n)
        flat[idx] = rng.integers(0, 2, n).astype(np.uint8) * 255
    return out


@dataclass(frozen=True)
class SymbolTruth:
    class_id: int
    bbox: BBox
    label: str = ''
    connected_pipeline_label: str = ''
    connected_edge_ids: Tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {'class_id': self.class_id, 'bbox': list(self.bbox), 'label': self.label,
                'connected_pipeline_label': self.connected_pipeline_label,
                'connected_edge_ids': list(self.connected_edge_ids)}

    @classmethod
    def from_dict(cls, data: dict) -> 'SymbolTruth':
        return cls(int(data['class_id']), BBox(*data['bbox']), data.get('label', ''),
                   data.get('connected_pipeline_label', ''), tuple(data.get('connected_edge_ids', ())))


def text_from_dict(data: dict) -> TextBox:
    return TextBox(BBox(data['x'], data['y'], data['w'], data['h']), data['text'],
                   Orientation(data.get('orientation', 'horizontal')), float(data.get('confidence', 1.0)))


def _pipeline_to_dict(p: PipelineRecord) -> dict:
    return {'edge_id': p.edge_id, 'label': p.label, 'x1': p.v1.x, 'y1': p.v1.y, 'x2': p.v2.x, 'y2': p.v2.y,
            'style': p.style, 'adjacent_edge_ids': list(p.adjacent_edge_ids)}


def _pipeline_from_dict(data: dict) -> PipelineRecord:
    return PipelineRecord(int(data['edge_id']), data.get('label', ''), Point(data['x1'], data['y1']),
                          Point(data['x2'], data['y2']), data.get('style', 'solid'),
                          tuple(data.get('adjacent_edge_ids', ())))


@dataclass
class SheetAnnotation:
    """Exact ground truth of one generated sheet, recorded before noise"""
    sheet_id: str
    width: int
    height: int
    kernel_length: int
    symbols: List[SymbolTruth] = field(default_factory=list)
    lines: List[LineSegment] = field(default_factory=list)
    texts: List[TextBox] = field(default_factory=list)
    pipelines: List[PipelineRecord] = field(default_factory=list)

    @property
    def hlines(self) -> List[LineSegment]:
        return [s for s in self.lines if s.orientation == Orientation.HORIZONTAL]

    @property
    def vlines(self) -> List[LineSegment]:
        return [s for s in self.lines if s.orientation == Orientation.VERTICAL]

    def truth_result(self) -> DigitizationResult:
        symbols = tuple(SymbolRecord(i, s.class_id, s.bbox, s.label, s.connected_edge_ids)
                        for i, s in enumerate(self.symbols))
        return DigitizationResult(symbols, tuple(self.pipelines))

    def to_dict(self) -> dict:
        return {
            'sheet_id': self.sheet_id, 'width': self.width, 'height': self.height,
            'kernel_length': self.kernel_length,
            'symbols': [s.to_dict() for s in self.symbols],
            'hlines': [s.to_dict() for s in self.hlines],
            'vlines': [s.to_dict() for s in self.vlines],
            'texts': [t.to_dict() for t in self.texts],
            'pipelines': [_pipeline_to_dict(p) for p in self.pipelines],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'SheetAnnotation':
        lines = [LineSegment.from_dict(d) for d in data.get('hlines', []) + data.get('vlines', [])]
        return cls(data['sheet_id'], int(data['width']), int(data['height']), int(data['kernel_length']),
                   [SymbolTruth.from_dict(d) for d in data.get('symbols', [])],
                   sorted(lines, key=LineSegment.sort_key),
                   [text_from_dict(d) for d in data.get('texts', [])],
                   [_pipeline_from_dict(d) for d in data.get('pipelines', [])])

    def save(self, path) -> Path:
        path = Path(path)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        return path

    @classmethod
    def load(cls, path) -> 'SheetAnnotation':
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Annotation not found: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            return cls.from_dict(json.load(f))


@dataclass(eq=False)
class _Pipe:
    orientation: Orientation
    perp: int
    start: int
    end: int
    style: LineStyle
    kind: str
    label: Optional[str] = None
    junctions: List[int] = field(default_factory=list)
    cuts: List[Tuple[int, int]] = field(default_factory=list)

    def box(self, thickness: int) -> BBox:
        lo = self.perp - thickness // 2
        if self.orientation == Orientation.HORIZONTAL:
            return BBox(self.start, lo, self.end - self.start + 1, thickness)
        return BBox(lo, self.start, thickness, self.end - self.start + 1)

    def pieces(self) -> List[Tuple[int, int]]:
        bounds, cursor = [], self.start
        for lo, hi in sorted(self.cuts):
            bounds.append((cursor, lo))
            cursor = hi
        bounds.append((cursor, self.end))
        return [(a, b) for a, b in bounds if b > a]


@dataclass(eq=False)
class _Placed:
    class_id: int
    raster: GrayRaster
    origin: Tuple[int, int]
    tight: BBox
    embedded: Optional[TextBox]
    label: str = ''
    vertical_carrier: bool = False


def _tight_box(mask: np.ndarray) -> BBox:
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    return BBox(int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


class _SheetBuilder:
    def __init__(self, cfg: GenConfig, index: int, atlas: GlyphAtlas):
        self.cfg = cfg
        self.index = index
        self.atlas = atlas
        self.rng = np.random.default_rng([cfg.seed, index])
        self.width, self.height = cfg.sheet_width, cfg.sheet_height
        self.k = kernel_length_for(self.width, self.height, LineDetectConfig())
        self.pipes: List[_Pipe] = []
        self.symbols: List[_Placed] = []
        self.texts: List[TextBox] = []
        self.labels_used = set()
        self.logger = logging.getLogger(__name__)

    def _between(self, lo: float, hi: float) -> Optional[int]:
        lo, hi = int(np.ceil(lo)), int(np.floor(hi))
        if hi <= lo:
            return None
        return int(self.rng.integers(lo, hi))

    def _unique_label(self, make) -> str:
        for _ in range(1000):
            label = make()
            if label not in self.labels_used:
                self.labels_used.add(label)
                return label
        raise ValueError("Label grammar cannot produce enough unique labels")

    def _inside(self, box: BBox, pad: float = 2) -> bool:
        return box.x >= pad and box.y >= pad and box.x2 <= self.width - pad and box.y2 <= self.height - pad

    def _blocked(self, box: BBox, ignore_pipes: Sequence[_Pipe] = (), ignore_symbols: Sequence[_Placed] = (),
                 clearance: float = CLEARANCE) -> bool:
        grown = box.expand(clearance)
        t = self.cfg.line_thickness
        if any(intersection_area(grown, p.box(t)) > 0 for p in self.pipes if p not in ignore_pipes):
            return True
        if any(intersection_area(grown, s.tight) > 0 for s in self.symbols if s not in ignore_symbols):
            return True
        return any(intersection_area(grown, tb.bbox) > 0 for tb in self.texts)

    def _verticals_clear(self, x: int, y0: int, y1: int) -> bool:
        gap = 3 * self.cfg.basic_symbol_size
        for p in self.pipes:
            if p.orientation != Orientation.VERTICAL:
                continue
            if p.end >= y0 - gap and p.start <= y1 + gap and abs(p.perp - x) < gap:
                return False
        return True

    def place_trunks(self) -> List[_Pipe]:
        cfg = self.cfg
        basic = cfg.basic_symbol_size
        margin_y = int(max(0.08 * self.height, 1.5 * basic))
        margin_x = int(max(0.04 * self.width, basic))
        gap = int(max(0.12 * self.height, 3 * basic))
        if self.height - 2 * margin_y <= 0 or self.width - 2 * margin_x <= 4 * basic:
            raise ValueError(f"Sheet {self.width}x{self.height} too small for symbols of size {basic}")
        target = int(self.rng.integers(cfg.trunks_per_sheet[0], cfg.trunks_per_sheet[1] + 1))
        rows: List[int] = []
        for _ in range(50 * max(1, target)):
            if len(rows) >= target:
                break
            y = int(self.rng.integers(margin_y, self.height - margin_y))
            if all(abs(y - r) >= gap for r in rows):
                rows.append(y)
        grammar = cfg.label_grammars['pipeline']
        for y in sorted(rows):
            x0 = self._between(margin_x, max(margin_x + 1, 0.3 * self.width))
            x1 = self._between(0.7 * self.width, self.width - margin_x)
            if x0 is None or x1 is None:
                continue
            label = self._unique_label(lambda: expand_grammar(grammar, self.rng))
            self.pipes.append(_Pipe(Orientation.HORIZONTAL, y, x0, x1, LineStyle.SOLID, 'trunk', label))
        return [p for p in self.pipes if p.kind == 'trunk']

    def _style(self) -> LineStyle:
        return LineStyle.DASHED if self.rng.random() < self.cfg.dashed_fraction else LineStyle.SOLID

    def place_connectors(self, trunks: List[_Pipe]):
        clear = 1.5 * self.cfg.basic_symbol_size
        grammar = self.cfg.label_grammars['pipeline']
        for a, b in zip(trunks, trunks[1:]):
            if self.rng.random() > 0.85:
                continue
            for _ in range(int(self.rng.integers(1, 3))):
                for _attempt in range(20):
                    x = self._between(max(a.start, b.start) + clear, min(a.end, b.end) - clear)
                    if x is not None and self._verticals_clear(x, a.perp, b.perp):
                        break
                else:
                    continue
                label = self._unique_label(lambda: expand_grammar(grammar, self.rng))
                self.pipes.append(_Pipe(Orientation.VERTICAL, x, a.perp, b.perp, self._style(), 'connector', label))
                a.junctions.append(x)
                b.junctions.append(x)

    def _embedded_text(self, class_id: int) -> str:
        if class_id in (26, 27):
            letter = FUNCTION_LETTERS[int(self.rng.integers(0, len(FUNCTION_LETTERS)))]
            middle = 'I' if class_id == 26 else 'T'
            return self._unique_label(lambda: f"{letter}{middle}-{int(self.rng.integers(0, 1000)):03d}")
        if class_id == 29:
            return self._unique_label(lambda: expand_grammar(self.cfg.label_grammars['symbol'], self.rng))
        return ''

    def make_symbol(self, class_id: int, rotation: int) -> _Placed:
        basic = class_id in BASIC_CLASSES
        size = self.cfg.basic_symbol_size if basic else self.cfg.symbol_size
        text = self._embedded_text(class_id) if basic else None
        raster = render_symbol(class_id, size, rotation, self.atlas, text=text if basic else None)
        tight = _tight_box(np.asarray(raster.data) < 128)
        embedded = None
        if text:
            mask = self.atlas.render_text(text, text_scale(size))
            h, w = mask.shape
            inner = _tight_box(mask)
            embedded = TextBox(inner.translate(size // 2 - w // 2, size // 2 - h // 2), text,
                               Orientation.HORIZONTAL, 1.0)
        return _Placed(class_id, raster, (0, 0), tight, embedded, label=text or '')

    def _position(self, sym: _Placed, x0: int, y0: int) -> _Placed:
        embedded = replace(sym.embedded, bbox=sym.embedded.bbox.translate(x0, y0)) if sym.embedded else None
        return replace(sym, origin=(x0, y0), tight=sym.tight.translate(x0, y0), embedded=embedded)

    def _random_class(self) -> int:
        if self.rng.random() < self.cfg.complex_fraction:
            return int(COMPLEX_CLASSES[int(self.rng.integers(0, len(COMPLEX_CLASSES)))])
        return int(BASIC_CLASSES[int(self.rng.integers(0, len(BASIC_CLASSES)))])

    def place_stubs(self, trunks: List[_Pipe]) -> int:
        cfg = self.cfg
        basic = cfg.basic_symbol_size
        target = int(self.rng.integers(cfg.stubs_per_sheet[0], cfg.stubs_per_sheet[1] + 1))
        placed = 0
        for _ in range(target):
            for _attempt in range(30):
                if not trunks:
                    return placed
                trunk = trunks[int(self.rng.integers(0, len(trunks)))]
                up = bool(self.rng.random() < 0.5)
                length = int(self.rng.integers(int(1.2 * basic), int(2.2 * basic)))
                x = self._between(trunk.start + 1.5 * basic, trunk.end - 1.5 * basic)
                if x is None:
                    continue
                class_id = int(BASIC_CLASSES[int(self.rng.integers(0, len(BASIC_CLASSES)))])
                sym = self.make_symbol(class_id, 0)
                size = np.asarray(sym.raster.data).shape[0]
                end_y = trunk.perp - length if up else trunk.perp + length
                x0 = x - (size - 1) // 2
                y0 = end_y - sym.tight.y2 + 1 if up else end_y - sym.tight.y
                sym = self._position(sym, x0, y0)
                y_lo, y_hi = min(trunk.perp, end_y), max(trunk.perp, end_y)
                stub = _Pipe(Orientation.VERTICAL, x, y_lo, y_hi, self._style(), 'stub')
                if not self._inside(sym.tight, CLEARANCE) or self._blocked(sym.tight):
                    self.labels_used.discard(sym.label)
                    continue
                if not self._verticals_clear(x, y_lo, y_hi):
                    self.labels_used.discard(sym.label)
                    continue
                if self._blocked(stub.box(cfg.line_thickness), ignore_pipes=[trunk]):
                    self.labels_used.discard(sym.label)
                    continue
                sym.vertical_carrier = True
                self.pipes.append(stub)
                self.symbols.append(sym)
                trunk.junctions.append(x)
                placed += 1
                break
        return placed

    def place_inline(self, target: int) -> int:
        carriers = [p for p in self.pipes if p.kind in ('trunk', 'connector')]
        if not carriers or target <= 0:
            return 0
        lengths = np.array([p.end - p.start for p in carriers], dtype=float)
        weights = lengths / lengths.sum()
        spacing = 2 * CLEARANCE + 60
        placed = 0
        for _ in range(30 * target):
            if placed >= target:
                break
            pipe = carriers[int(self.rng.choice(len(carriers), p=weights))]
            class_id = self._random_class()
            rotation = int(self.rng.integers(0, 4)) * 90 if class_id in COMPLEX_CLASSES else 0
            sym = self.make_symbol(class_id, rotation)
            size = np.asarray(sym.raster.data).shape[0]
            margin = size + self.cfg.basic_symbol_size
            s = self._between(pipe.start + margin, pipe.end - margin)
            if s is None or any(abs(s - j) < size / 2 + 1.5 * self.cfg.basic_symbol_size for j in pipe.junctions):
                self.labels_used.discard(sym.label)
                continue
            offset = (size - 1) // 2
            horizontal = pipe.orientation == Orientation.HORIZONTAL
            x0, y0 = (s - offset, pipe.perp - offset) if horizontal else (pipe.perp - offset, s - offset)
            sym = self._position(sym, x0, y0)
            cut = (int(sym.tight.x), int(sym.tight.x2 - 1)) if horizontal else (int(sym.tight.y), int(sym.tight.y2 - 1))
            if any(cut[0] - spacing < hi and lo < cut[1] + spacing for lo, hi in pipe.cuts):
                self.labels_used.discard(sym.label)
                continue
            if not self._inside(sym.tight, CLEARANCE) or self._blocked(sym.tight, ignore_pipes=[pipe]):
                self.labels_used.discard(sym.label)
                continue
            sym.vertical_carrier = not horizontal
            pipe.cuts.append(cut)
            self.symbols.append(sym)
            placed += 1
        return placed

    def _text_box(self, text: str, vertical: bool, anchor: Tuple[float, float], side: str) -> Tuple[BBox, np.ndarray]:
        mask = self.atlas.render_text(text, self.cfg.text_scale)
        if vertical:
            mask = np.rot90(mask, 1)
        h, w = mask.shape
        ax, ay = anchor
        if side == 'above':
            x, y = ax - w // 2, ay - h
        elif side == 'below':
            x, y = ax - w // 2, ay
        elif side == 'right':
            x, y = ax, ay - h // 2
        else:
            x, y = ax - w, ay - h // 2
        return BBox(int(x), int(y), w, h), mask

    def label_symbols(self):
        grammar = self.cfg.label_grammars['symbol']
        for i, sym in enumerate(self.symbols):
            if sym.embedded is not None:
                self.texts.append(sym.embedded)
                continue
            label = self._unique_label(lambda: expand_grammar(grammar, self.rng))
            t = sym.tight
            cx, cy = t.center
            options = [('right', (t.x2 + SIDE_GAP, cy)), ('left', (t.x - SIDE_GAP, cy)),
                       ('above', (cx, t.y - TEXT_GAP)), ('below', (cx, t.y2 + TEXT_GAP))]
            if not sym.vertical_carrier:
                options = options[2:] + options[:2]
            for side, anchor in options:
                box, mask = self._text_box(label, False, anchor, side)
                inner = _tight_box(mask).translate(box.x, box.y)
                if self._inside(box, CLEARANCE) and not self._blocked(inner, ignore_symbols=[sym],
                                                                      clearance=CLEARANCE):
                    if intersection_area(inner.expand(TEXT_GAP - 1), sym.tight) > 0:
                        continue
                    self.texts.append(TextBox(inner, label, Orientation.HORIZONTAL, 1.0))
                    self.symbols[i] = replace(sym, label=label)
                    break
            else:
                self.labels_used.discard(label)

    def label_pipes(self):
        t = self.cfg.line_thickness
        for pipe in self.pipes:
            if pipe.label is None:
                continue
            vertical = pipe.orientation == Orientation.VERTICAL
            for a, b in pipe.pieces():
                if self.rng.random() > 0.8:
                    continue
                centre = (a + b) // 2
                if vertical:
                    options = [('left', (pipe.perp - t // 2 - TEXT_GAP, centre)),
                               ('right', (pipe.perp + t - t // 2 + TEXT_GAP, centre))]
                else:
                    options = [('above', (centre, pipe.perp - t // 2 - TEXT_GAP)),
                               ('below', (centre, pipe.perp + t - t // 2 + TEXT_GAP))]
                for side, anchor in options:
                    box, mask = self._text_box(pipe.label, vertical, anchor, side)
                    inner = _tight_box(mask).translate(box.x, box.y)
                    along = (inner.y, inner.y2) if vertical else (inner.x, inner.x2)
                    if along[0] < a + CLEARANCE or along[1] > b - CLEARANCE:
                        continue
                    if self._inside(inner, CLEARANCE) and not self._blocked(inner, ignore_pipes=[pipe]):
                        orientation = Orientation.VERTICAL if vertical else Orientation.HORIZONTAL
                        self.texts.append(TextBox(inner, pipe.label, orientation, 1.0))
                        break

    def segments(self) -> List[LineSegment]:
        lines = []
        for pipe in self.pipes:
            for a, b in pipe.pieces():
                if pipe.orientation == Orientation.HORIZONTAL:
                    lines.append(make_segment(a, pipe.perp, b, pipe.perp, pipe.orientation, pipe.style))
                else:
                    lines.append(make_segment(pipe.perp, a, pipe.perp, b, pipe.orientation, pipe.style))
        return sorted(lines, key=LineSegment.sort_key)

    def render(self) -> np.ndarray:
        canvas = np.full((self.height, self.width), 255, dtype=np.uint8)
        t = self.cfg.line_thickness
        dash, gap = 2 * self.k, 1.5 * self.k
        for line in self.segments():
            lo = int(line.perp) - t // 2
            intervals = ([(int(line.start), int(line.end))] if line.style == LineStyle.SOLID
                         else dash_intervals(int(line.start), int(line.end), dash, gap))
            for a, b in intervals:
                if line.orientation == Orientation.HORIZONTAL:
                    canvas[lo:lo + t, a:b + 1] = 0
                else:
                    canvas[a:b + 1, lo:lo + t] = 0
        for sym in self.symbols:
            x0, y0 = sym.origin
            data = np.asarray(sym.raster.data)
            region = canvas[y0:y0 + data.shape[0], x0:x0 + data.shape[1]]
            np.minimum(region, data, out=region)
        for text in self.texts:
            if any(s.embedded is not None and s.embedded.bbox == text.bbox for s in self.symbols):
                continue
            mask = self.atlas.render_text(text.text, self.cfg.text_scale)
            if text.orientation == Orientation.VERTICAL:
                mask = np.rot90(mask, 1)
            inner = _tight_box(mask)
            x0, y0 = int(text.bbox.x - inner.x), int(text.bbox.y - inner.y)
            canvas[y0:y0 + mask.shape[0], x0:x0 + mask.shape[1]][mask] = 0
        return canvas

    def truth(self, lines: List[LineSegment]) -> Tuple[List[SymbolTruth], List[PipelineRecord]]:
        regex = grammar_regex(self.cfg.label_grammars['pipeline'])
        cfg = GraphConfig(label_regexes=(regex,))
        alpha = cfg.alpha_for(self.k)
        graph = propagate_labels(assign_edge_labels(build_graph(lines, cfg, alpha), self.texts, cfg))
        instances = [SymbolInstance(s.class_id, s.tight, 1.0, s.label) for s in self.symbols]
        associations = map_symbols_to_graph(instances, graph)
        connected = [replace(inst, edge_ids=a.edge_ids) for inst, a in zip(instances, associations)]
        result = emit_result(connected, graph)
        truths = []
        for record in result.symbols:
            labels = [result.pipelines[e].label for e in record.connected_edge_ids if result.pipelines[e].label]
            truths.append(SymbolTruth(record.class_id, record.bbox, record.label,
                                      labels[0] if labels else '', record.connected_edge_ids))
        return truths, list(result.pipelines)


def generate_sheet(cfg: GenConfig, index: int,
                   atlas: Optional[GlyphAtlas] = None) -> Tuple[GrayRaster, SheetAnnotation]:
    """
    Generate one sheet and its annotation

    The layout depends only on (seed, index); noise draws from a separate
    stream so annotations do not change with noise settings.
    """
    logger = logging.getLogger(__name__)
    builder = _SheetBuilder(cfg, index, atlas or GlyphAtlas.default())
    trunks = builder.place_trunks()
    builder.place_connectors(trunks)
    target = int(builder.rng.integers(cfg.symbols_per_sheet[0], cfg.symbols_per_sheet[1] + 1))
    stubs = builder.place_stubs(trunks)
    inline = builder.place_inline(target - stubs)
    if stubs + inline < target:
        logger.warning(f"Sheet {index}: placed {stubs + inline}/{target} symbols, sheet too crowded")
    builder.label_symbols()
    builder.label_pipes()

    lines = builder.segments()
    image = builder.render()
    symbols, pipelines = builder.truth(lines)
    noisy = apply_noise(image, cfg.noise, np.random.default_rng([cfg.seed, index, 1]))

    annotation = SheetAnnotation(f"sheet_{index:04d}", builder.width, builder.height, builder.k,
                                 symbols, lines, sorted(builder.texts, key=lambda t: (t.bbox.y, t.bbox.x)),
                                 pipelines)
    logger.debug(f"Sheet {index}: {len(symbols)} symbols, {len(lines)} lines, {len(builder.texts)} texts")
    return GrayRaster(noisy), annotation


def split_indices(count: int, ratio: Tuple[int, int], seed: int) -> Dict[str, List[int]]:
    """Seeded train/test split of sheet indices in the given ratio"""
    train, test = ratio
    n_test = int(round(count * test / (train + test)))
    order = np.random.default_rng([seed, count]).permutation(count)
    test_ids = sorted(int(i) for i in order[:n_test])
    train_ids = sorted(int(i) for i in order[n_test:])
    return {'train': train_ids, 'test': test_ids}


def write_dataset(cfg: GenConfig, out_dir) -> dict:
    """
    Write PNG + JSON annotation per sheet, the glyph atlas, the template bank
    and a manifest

    Returns:
        dict: The manifest
    """
    logger = logging.getLogger(__name__)
    out = Path(out_dir)
    (out / 'images').mkdir(parents=True, exist_ok=True)
    (out / 'annotations').mkdir(parents=True, exist_ok=True)
    atlas = GlyphAtlas.default()
    atlas.save(out / 'glyphs')
    TemplateBank.from_library(cfg.symbol_size).save(out / 'templates')

    splits = split_indices(cfg.count, cfg.split_ratio, cfg.seed)
    split_of = {i: name for name, ids in splits.items() for i in ids}
    sheets = []
    for index in range(cfg.count):
        image, annotation = generate_sheet(cfg, index, atlas)
        image_path = out / 'images' / f"{annotation.sheet_id}.png"
        with open(image_path, 'wb') as f:
            f.write(to_png_bytes(image))
        annotation.save(out / 'annotations' / f"{annotation.sheet_id}.json")
        sheets.append({'id': annotation.sheet_id, 'image': f"images/{annotation.sheet_id}.png",
                       'annotation': f"annotations/{annotation.sheet_id}.json", 'split': split_of[index]})
        logger.info(f"Generated {annotation.sheet_id} ({index + 1}/{cfg.count})")

    manifest = {
        'seed': cfg.seed,
        'count': cfg.count,
        'config': asdict(cfg),
        'splits': {name: [f"sheet_{i:04d}" for i in ids] for name, ids in splits.items()},
        'sheets': sheets,
    }
    with open(out / 'manifest.json', 'w', encoding='utf-8', newline='\n') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info(f"Wrote {cfg.count} sheets to {out} "
                f"({len(splits['train'])} train / {len(splits['test'])} test)")
    return manifest
