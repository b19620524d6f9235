"""Circle and rectangle detection and assembly of basic-shape symbols"""

import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np

from src.geometry import BBox, Point, distance, union_box
from src.line_detect import LineSegment
from src.raster import BinaryRaster, Orientation
from src.symbol_detect import SymbolInstance
from src.text_extract import TextBox

DEDUP_CENTER = 3.0
DEDUP_RADIUS = 2.0
CORNER_TOLERANCE = 2.0
REFINE_STEPS = (-2, -1, 0, 1, 2)
TANGENT_TOLERANCE = 4.0


@dataclass(frozen=True)
class Circle:
    center: Point
    radius: float
    score: float

    @property
    def bbox(self) -> BBox:
        r = self.radius + 1
        return BBox(self.center.x - r, self.center.y - r, 2 * r + 1, 2 * r + 1)


@dataclass(frozen=True)
class RectShape:
    """Axis-aligned rectangle; corners run clockwise from the top-left"""
    corners: Tuple[Point, Point, Point, Point]
    edge_support: Tuple[float, float, float, float]

    @property
    def bbox(self) -> BBox:
        tl, _, br, _ = self.corners
        return BBox(tl.x - 1, tl.y - 1, br.x - tl.x + 3, br.y - tl.y + 3)


@dataclass(frozen=True)
class ShapeConfig:
    radius_min_fraction: float = 0.005
    radius_max_fraction: float = 0.02
    hough_vote_min: float = 0.6
    rect_edge_support_min: float = 0.85
    rect_min_fraction: float = 0.004
    rect_max_fraction: float = 0.03
    hough_accumulator: int = 20
    rules_path: Optional[str] = None

    def __post_init__(self):
        if not 0 < self.radius_min_fraction < self.radius_max_fraction < 0.5:
            raise ValueError("radius fractions must satisfy 0 < min < max < 0.5")
        if not 0 < self.hough_vote_min <= 1:
            raise ValueError(f"hough_vote_min must be in (0, 1], got {self.hough_vote_min}")
        if not 0 < self.rect_edge_support_min <= 1:
            raise ValueError(f"rect_edge_support_min must be in (0, 1], got {self.rect_edge_support_min}")
        if not 0 <= self.rect_min_fraction < self.rect_max_fraction:
            raise ValueError("rect fractions must satisfy 0 <= min < max")

    def radius_range(self, width: int, height: int) -> Tuple[int, int]:
        side = max(width, height)
        return (max(3, int(round(self.radius_min_fraction * side))),
                max(4, int(round(self.radius_max_fraction * side))))


def _ring_support(ink: np.ndarray, cx: float, cy: float, r: float) -> float:
    """Fraction of positions sampled along the circle that fall on ink"""
    samples = max(16, int(math.ceil(2 * math.pi * r)))
    theta = np.linspace(0.0, 2 * math.pi, samples, endpoint=False)
    xs = np.rint(cx + r * np.cos(theta)).astype(int)
    ys = np.rint(cy + r * np.sin(theta)).astype(int)
    inside = (xs >= 0) & (xs < ink.shape[1]) & (ys >= 0) & (ys < ink.shape[0])
    hits = np.zeros(samples, dtype=bool)
    hits[inside] = ink[ys[inside], xs[inside]]
    return float(hits.mean())


def _refine_circle(ink: np.ndarray, loose: np.ndarray, cx: float, cy: float,
                   r: float, r_min: int, r_max: int) -> Circle:
    best = None
    for dr in REFINE_STEPS:
        radius = r + dr
        if not r_min <= radius <= r_max:
            continue
        for dy in REFINE_STEPS:
            for dx in REFINE_STEPS:
                key = (_ring_support(loose, cx + dx, cy + dy, radius),
                       _ring_support(ink, cx + dx, cy + dy, radius))
                if best is None or key > best[0]:
                    best = (key, Circle(Point(float(cx + dx), float(cy + dy)), float(radius), key[0]))
    return best[1] if best else Circle(Point(float(cx), float(cy)), float(r), 0.0)


def dedup_circles(circles: Sequence[Circle]) -> List[Circle]:
    """Merge circles closer than 3 px in centre and 2 px in radius, keeping the best score"""
    ordered = sorted(circles, key=lambda c: (-c.score, c.center.y, c.center.x, c.radius))
    kept: List[Circle] = []
    for circle in ordered:
        if all(distance(circle.center, k.center) > DEDUP_CENTER or abs(circle.radius - k.radius) > DEDUP_RADIUS
               for k in kept):
            kept.append(circle)
    return sorted(kept, key=lambda c: (c.center.y, c.center.x, c.radius))


def _circle_patches(width: int, height: int, size: int) -> List[Tuple[int, int]]:
    stride = max(1, size // 2)

    def origins(length):
        if length <= size:
            return [0]
        return list(range(0, length - size, stride)) + [length - size]

    return [(ox, oy) for oy in origins(height) for ox in origins(width)]


def detect_circles(a: BinaryRaster, cfg: ShapeConfig = ShapeConfig()) -> List[Circle]:
    """
    Find circles with patch-wise Hough accumulation

    Each patch (4 x max radius, 50% overlap) proposes centres through a
    gradient Hough accumulator; proposals are refined and scored by ring
    support on the whole sheet, so a circle cut by a patch border scores the
    same as one seen whole.
    """
    ink = a.bits
    if not ink.any():
        return []
    r_min, r_max = cfg.radius_range(a.width, a.height)
    loose = cv2.dilate(ink.astype(np.uint8), np.ones((3, 3), np.uint8)).astype(bool)
    image = cv2.GaussianBlur(ink.astype(np.uint8) * 255, (3, 3), 0)

    candidates = []
    size = 4 * r_max
    for ox, oy in _circle_patches(a.width, a.height, size):
        patch = image[oy:oy + size, ox:ox + size]
        if not patch.any():
            continue
        found = cv2.HoughCircles(patch, cv2.HOUGH_GRADIENT, dp=1, minDist=max(1, r_min // 2),
                                 param1=100, param2=cfg.hough_accumulator,
                                 minRadius=r_min, maxRadius=r_max)
        if found is None:
            continue
        for cx, cy, r in found[0]:
            if _ring_support(loose, cx + ox, cy + oy, r) < cfg.hough_vote_min - 0.2:
                continue
            circle = _refine_circle(ink, loose, float(round(cx)) + ox, float(round(cy)) + oy,
                                    float(round(r)), r_min, r_max)
            if circle.score >= cfg.hough_vote_min:
                candidates.append(circle)
    circles = dedup_circles(candidates)
    logging.getLogger(__name__).debug(f"Circles: {len(candidates)} candidates, {len(circles)} after dedup")
    return circles


def sample_rect_vertices(hlines: BinaryRaster, vlines: BinaryRaster) -> List[Point]:
    """Centroids of the crossings of the (2 px dilated) horizontal and vertical line rasters"""
    kernel = np.ones((5, 5), np.uint8)
    crossings = (cv2.dilate(hlines.as_uint8(), kernel) & cv2.dilate(vlines.as_uint8(), kernel))
    count, _, _, centroids = cv2.connectedComponentsWithStats(crossings, connectivity=8)
    vertices = [Point(round(float(x), 2), round(float(y), 2)) for x, y in centroids[1:count]]
    return sorted(vertices, key=lambda p: (p.y, p.x))


def _edge_support(loose: np.ndarray, p: Point, q: Point) -> float:
    n = max(2, int(round(distance(p, q))) + 1)
    xs = np.rint(np.linspace(p.x, q.x, n)).astype(int)
    ys = np.rint(np.linspace(p.y, q.y, n)).astype(int)
    inside = (xs >= 0) & (xs < loose.shape[1]) & (ys >= 0) & (ys < loose.shape[0])
    hits = np.zeros(n, dtype=bool)
    hits[inside] = loose[ys[inside], xs[inside]]
    return float(hits.mean())


def _find_vertex(vertices: Sequence[Point], x: float, y: float) -> Optional[Point]:
    for v in vertices:
        if abs(v.x - x) <= CORNER_TOLERANCE and abs(v.y - y) <= CORNER_TOLERANCE:
            return v
    return None


def verify_rectangles(vertices: Sequence[Point], a: BinaryRaster,
                      cfg: ShapeConfig = ShapeConfig()) -> List[RectShape]:
    """
    Enumerate axis-aligned corner quadruples and keep those whose four
    sides are drawn

    A side's support is the fraction of pixels sampled along it that hit
    ink within 1 px.
    """
    if len(vertices) < 4:
        return []
    side = max(a.width, a.height)
    min_side, max_side = cfg.rect_min_fraction * side, cfg.rect_max_fraction * side
    loose = cv2.dilate(a.as_uint8(), np.ones((3, 3), np.uint8)).astype(bool)
    ordered = sorted(vertices, key=lambda p: (p.y, p.x))

    rects = []
    seen = set()
    for i, tl in enumerate(ordered):
        for br in ordered[i + 1:]:
            w, h = br.x - tl.x, br.y - tl.y
            if w <= CORNER_TOLERANCE or h <= CORNER_TOLERANCE:
                continue
            if not (min_side <= w <= max_side and min_side <= h <= max_side):
                continue
            tr = _find_vertex(ordered, br.x, tl.y)
            bl = _find_vertex(ordered, tl.x, br.y)
            if tr is None or bl is None:
                continue
            corners = (tl, tr, br, bl)
            if corners in seen:
                continue
            seen.add(corners)
            support = tuple(_edge_support(loose, corners[k], corners[(k + 1) % 4]) for k in range(4))
            if min(support) >= cfg.rect_edge_support_min:
                rects.append(RectShape(corners, support))
    logging.getLogger(__name__).debug(f"Rectangles: {len(rects)} verified from {len(vertices)} vertices")
    return rects


@dataclass(frozen=True)
class CompositionRule:
    class_id: int
    name: str
    shape: str
    predicates: Tuple[str, ...] = ()
    text_regex: Optional[str] = None

    @property
    def specificity(self) -> int:
        return len(self.predicates) + (1 if self.text_regex else 0)


DEFAULT_BASIC_RULES: Tuple[CompositionRule, ...] = (
    CompositionRule(26, 'indicator-bubble', 'circle', ('no_chord', 'has_text'), r'^[A-Z]I[- ]?\d{3}$'),
    CompositionRule(27, 'transmitter-bubble', 'circle', ('no_chord', 'has_text'), r'^[A-Z]T[- ]?\d{3}$'),
    CompositionRule(28, 'shared-display', 'circle', ('has_chord',)),
    CompositionRule(29, 'controller-box', 'rectangle', ('has_text',), r'^[A-Z]{2}[- ]?\d{3}$'),
    CompositionRule(30, 'equipment-box', 'rectangle', ('no_text',)),
    CompositionRule(31, 'seal-pot', 'circle+rectangle', ('tangent',)),
    CompositionRule(32, 'plain-bubble', 'circle', ('no_chord', 'no_text')),
)

_PREDICATES = {'has_text', 'no_text', 'has_chord', 'no_chord', 'tangent'}


def load_basic_rules(path) -> Tuple[CompositionRule, ...]:
    """Read the composition rule table (JSON list under "classes")"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Basic symbol rule table not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        data = json.load(f)
    rules = []
    for entry in data.get('classes', []):
        predicates = tuple(entry.get('predicates', ()))
        unknown = set(predicates) - _PREDICATES
        if unknown:
            raise ValueError(f"Unknown predicates for class {entry.get('class_id')}: {sorted(unknown)}")
        if entry.get('shape') not in ('circle', 'rectangle', 'circle+rectangle'):
            raise ValueError(f"Unknown shape for class {entry.get('class_id')}: {entry.get('shape')}")
        regex = entry.get('text_regex')
        if regex:
            re.compile(regex)
        rules.append(CompositionRule(int(entry['class_id']), entry.get('name', ''), entry['shape'],
                                     predicates, regex))
    return tuple(rules)


@dataclass
class _Composition:
    shape: str
    bbox: BBox
    score: float
    facts: Dict[str, bool] = field(default_factory=dict)
    texts: List[TextBox] = field(default_factory=list)

    @property
    def text(self) -> str:
        return ' '.join(t.text for t in sorted(self.texts, key=lambda t: (t.bbox.y, t.bbox.x)))


def _texts_in_circle(circle: Circle, texts: Sequence[TextBox]) -> List[TextBox]:
    return [t for t in texts if distance(t.bbox.center, circle.center) < circle.radius]


def _texts_in_rect(rect: RectShape, texts: Sequence[TextBox]) -> List[TextBox]:
    tl, _, br, _ = rect.corners
    return [t for t in texts if tl.x < t.bbox.center.x < br.x and tl.y < t.bbox.center.y < br.y]


def _has_chord(circle: Circle, lines: Sequence[LineSegment]) -> bool:
    r = circle.radius
    for line in lines:
        if line.orientation != Orientation.HORIZONTAL:
            continue
        if abs(line.perp - circle.center.y) > 0.2 * r or line.length < 1.2 * r:
            continue
        if all(distance(p, circle.center) <= r + 3 for p in (line.p1, line.p2)):
            return True
    return False


def _is_tangent(circle: Circle, rect: RectShape) -> bool:
    tl, _, br, _ = rect.corners
    cx, cy = circle.center
    nearest_x = min(max(cx, tl.x), br.x)
    nearest_y = min(max(cy, tl.y), br.y)
    if tl.x < cx < br.x and tl.y < cy < br.y:
        return False
    return abs(math.hypot(cx - nearest_x, cy - nearest_y) - circle.radius) <= TANGENT_TOLERANCE


def _compose(circles: Sequence[Circle], rects: Sequence[RectShape], lines: Sequence[LineSegment],
             texts: Sequence[TextBox]) -> List[_Composition]:
    compositions = []
    used_circles, used_rects = set(), set()
    for ri, rect in enumerate(rects):
        for ci, circle in enumerate(circles):
            if ci in used_circles or not _is_tangent(circle, rect):
                continue
            inner = _texts_in_circle(circle, texts) + _texts_in_rect(rect, texts)
            compositions.append(_Composition(
                'circle+rectangle', union_box([circle.bbox, rect.bbox]),
                min(circle.score, min(rect.edge_support)),
                {'tangent': True, 'has_text': bool(inner), 'no_text': not inner}, inner))
            used_circles.add(ci)
            used_rects.add(ri)
            break
    for ci, circle in enumerate(circles):
        if ci in used_circles:
            continue
        inner = _texts_in_circle(circle, texts)
        chord = _has_chord(circle, lines)
        compositions.append(_Composition('circle', circle.bbox, circle.score, {
            'has_text': bool(inner), 'no_text': not inner,
            'has_chord': chord, 'no_chord': not chord, 'tangent': False}, inner))
    for ri, rect in enumerate(rects):
        if ri in used_rects:
            continue
        inner = _texts_in_rect(rect, texts)
        compositions.append(_Composition('rectangle', rect.bbox, float(min(rect.edge_support)), {
            'has_text': bool(inner), 'no_text': not inner, 'tangent': False}, inner))
    return compositions


def assemble_basic_symbols(circles: Sequence[Circle], rects: Sequence[RectShape],
                           lines: Sequence[LineSegment], texts: Sequence[TextBox],
                           rules: Sequence[CompositionRule] = DEFAULT_BASIC_RULES) -> List[SymbolInstance]:
    """
    Match shape compositions against the rule table

    The most specific fully matching rule wins; equally specific matches are
    all emitted and flagged ambiguous. Embedded text becomes the label.
    """
    symbols = []
    for comp in _compose(circles, rects, lines, texts):
        matches = []
        for rule in rules:
            if rule.shape != comp.shape:
                continue
            if not all(comp.facts.get(p, False) for p in rule.predicates):
                continue
            if rule.text_regex and not re.match(rule.text_regex, comp.text):
                continue
            matches.append(rule)
        if not matches:
            continue
        top = max(rule.specificity for rule in matches)
        winners = [rule for rule in matches if rule.specificity == top]
        for rule in winners:
            symbols.append(SymbolInstance(rule.class_id, comp.bbox, comp.score, comp.text,
                                          ambiguous=len(winners) > 1))
    symbols.sort(key=lambda s: (s.bbox.y, s.bbox.x, s.class_id))
    logging.getLogger(__name__).info(f"Assembled {len(symbols)} basic symbols")
    return symbols


class ShapeDetector:
    """Runs circle and rectangle detection and basic symbol assembly for one sheet"""

    def __init__(self, config: ShapeConfig = ShapeConfig()):
        self.config = config
        self.rules = load_basic_rules(config.rules_path) if config.rules_path else DEFAULT_BASIC_RULES
        self.logger = logging.getLogger(__name__)

    def detect(self, a: BinaryRaster, hlines: BinaryRaster, vlines: BinaryRaster,
               lines: Sequence[LineSegment], texts: Sequence[TextBox]
               ) -> Tuple[List[SymbolInstance], List[Circle], List[RectShape]]:
        circles = detect_circles(a, self.config)
        rects = verify_rectangles(sample_rect_vertices(hlines, vlines), a, self.config)
        self.logger.info(f"Detected {len(circles)} circles and {len(rects)} rectangles")
        return assemble_basic_symbols(circles, rects, lines, texts, self.rules), circles, rects
