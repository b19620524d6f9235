"""Box and point geometry shared by the detection and aggregation stages"""

import math
from typing import Iterable, NamedTuple, Tuple


class Point(NamedTuple):
    """Pixel position; x grows to the right, y grows downwards"""
    x: float
    y: float


class BBox(NamedTuple):
    """
    Axis-aligned rectangle in pixels.

    A box covers the half-open pixel range [x, x + w) x [y, y + h).
    """
    x: float
    y: float
    w: float
    h: float

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return max(0.0, self.w) * max(0.0, self.h)

    @property
    def center(self) -> Point:
        return Point(self.x + self.w / 2.0, self.y + self.h / 2.0)

    def contains(self, p: Tuple[float, float]) -> bool:
        return self.x <= p[0] <= self.x2 and self.y <= p[1] <= self.y2

    def translate(self, dx: float, dy: float) -> 'BBox':
        return BBox(self.x + dx, self.y + dy, self.w, self.h)

    def expand(self, pad: float) -> 'BBox':
        return BBox(self.x - pad, self.y - pad, self.w + 2 * pad, self.h + 2 * pad)

    def clamp(self, width: int, height: int) -> 'BBox':
        x1 = min(max(self.x, 0), width)
        y1 = min(max(self.y, 0), height)
        x2 = min(max(self.x2, 0), width)
        y2 = min(max(self.y2, 0), height)
        return BBox(x1, y1, x2 - x1, y2 - y1)

    def as_int(self) -> 'BBox':
        return BBox(int(round(self.x)), int(round(self.y)), int(round(self.w)), int(round(self.h)))


def intersection_area(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes (0 when both are empty)"""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def containment(inner: BBox, outer: BBox) -> float:
    """Fraction of `inner`'s area lying inside `outer`"""
    return intersection_area(inner, outer) / inner.area if inner.area > 0 else 0.0


def union_box(boxes: Iterable[BBox]) -> BBox:
    boxes = list(boxes)
    x1 = min(b.x for b in boxes)
    y1 = min(b.y for b in boxes)
    x2 = max(b.x2 for b in boxes)
    y2 = max(b.y2 for b in boxes)
    return BBox(x1, y1, x2 - x1, y2 - y1)


def distance(p: Tuple[float, float], q: Tuple[float, float]) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def project_on_segment(p: Tuple[float, float], a: Tuple[float, float],
                       b: Tuple[float, float]) -> Tuple[float, Point]:
    """
    Project `p` onto segment a-b.

    Returns:
        (t, point): t in [0, 1] along the segment and the clamped projection
    """
    dx, dy = b[0] - a[0], b[1] - a[1]
    length_sq = dx * dx + dy * dy
    if length_sq == 0:
        return 0.0, Point(a[0], a[1])
    t = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / length_sq
    t = min(1.0, max(0.0, t))
    return t, Point(a[0] + t * dx, a[1] + t * dy)


def point_segment_distance(p: Tuple[float, float], a: Tuple[float, float],
                           b: Tuple[float, float]) -> float:
    _, q = project_on_segment(p, a, b)
    return distance(p, q)
