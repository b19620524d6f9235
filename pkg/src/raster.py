"""Raster substrate: decoding, binarization, line morphology, components and hulls"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Sequence, Tuple, Union

import cv2
import numpy as np

from src.geometry import Point

OTSU = 'otsu'
OTSU_FALLBACK_THRESHOLD = 128


class ImageDecodeError(ValueError):
    """Raised when image bytes cannot be decoded into a raster"""


class Orientation(str, Enum):
    HORIZONTAL = 'horizontal'
    VERTICAL = 'vertical'


@dataclass(frozen=True)
class GrayRaster:
    """8-bit grayscale image; `data` is a read-only (height, width) uint8 array"""
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"GrayRaster needs a non-empty 2D array, got shape {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    def crop(self, x: int, y: int, w: int, h: int) -> 'GrayRaster':
        x0, y0 = max(0, int(x)), max(0, int(y))
        x1, y1 = min(self.width, int(x + w)), min(self.height, int(y + h))
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"Empty crop ({x}, {y}, {w}, {h}) on {self.width}x{self.height} raster")
        return GrayRaster(self.data[y0:y1, x0:x1])


@dataclass(frozen=True)
class BinaryRaster:
    """Boolean image; True marks ink (foreground)"""
    bits: np.ndarray

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueError(f"BinaryRaster needs a 2D array, got shape {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, 'bits', bits)

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    def as_uint8(self) -> np.ndarray:
        return self.bits.astype(np.uint8)

    def __and__(self, other: 'BinaryRaster') -> 'BinaryRaster':
        return BinaryRaster(self.bits & other.bits)

    def __or__(self, other: 'BinaryRaster') -> 'BinaryRaster':
        return BinaryRaster(self.bits | other.bits)


@dataclass(frozen=True)
class LineKernel:
    """One-pixel-wide line structuring element anchored at index length // 2"""
    orientation: Orientation
    length: int

    def __post_init__(self):
        if self.length < 2:
            raise ValueError(f"Line kernel length must be >= 2, got {self.length}")
        object.__setattr__(self, 'orientation', Orientation(self.orientation))

    @property
    def anchor(self) -> int:
        return self.length // 2

    def offsets(self) -> range:
        """Offsets read by erosion along the kernel axis"""
        return range(-self.anchor, self.length - self.anchor)

    def _mask(self) -> np.ndarray:
        if self.orientation == Orientation.HORIZONTAL:
            return np.ones((1, self.length), dtype=np.uint8)
        return np.ones((self.length, 1), dtype=np.uint8)

    def _cv_anchor(self, index: int) -> Tuple[int, int]:
        if self.orientation == Orientation.HORIZONTAL:
            return (index, 0)
        return (0, index)


def load_gray(data: bytes) -> GrayRaster:
    """
    Decode image bytes into a grayscale raster

    Color images are converted by luminance. Raises ImageDecodeError on
    malformed or unsupported input.
    """
    if not data:
        raise ImageDecodeError("Empty image data")
    buffer = np.frombuffer(data, dtype=np.uint8)
    image = cv2.imdecode(buffer, cv2.IMREAD_GRAYSCALE)
    if image is None:
        raise ImageDecodeError("Unsupported or malformed image data")
    return GrayRaster(image)


def load_gray_file(path) -> GrayRaster:
    with open(path, 'rb') as f:
        return load_gray(f.read())


def to_png_bytes(r: GrayRaster) -> bytes:
    ok, encoded = cv2.imencode('.png', np.asarray(r.data))
    if not ok:
        raise ValueError("PNG encoding failed")
    return encoded.tobytes()


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def resize_to_width(r: GrayRaster, target_width: int) -> GrayRaster:
    """Bilinear resize to `target_width`, keeping the aspect ratio"""
    if target_width < 1:
        raise ValueError(f"target_width must be >= 1, got {target_width}")
    if r.width == target_width:
        return r
    target_height = max(1, _round_half_up(r.height * target_width / r.width))
    resized = cv2.resize(np.asarray(r.data), (target_width, target_height),
                         interpolation=cv2.INTER_LINEAR)
    return GrayRaster(resized)


def otsu_threshold(r: GrayRaster) -> int:
    """Threshold maximizing between-class variance; 128 for constant images"""
    data = np.asarray(r.data)
    if int(data.min()) == int(data.max()):
        return OTSU_FALLBACK_THRESHOLD
    t, _ = cv2.threshold(data, 0, 255, cv2.THRESH_BINARY + cv2.THRESH_OTSU)
    # cv2 puts values <= t in the dark class; foreground is intensity < threshold
    return int(t) + 1


def binarize(r: GrayRaster, policy: Union[int, str] = OTSU) -> BinaryRaster:
    """
    Foreground = intensity < threshold (ink is dark)

    Args:
        r: Grayscale raster
        policy: A fixed integer threshold or 'otsu'
    """
    if policy == OTSU:
        threshold = otsu_threshold(r)
    elif isinstance(policy, (int, np.integer)):
        threshold = int(policy)
    else:
        raise ValueError(f"Unknown binarization policy: {policy!r}")
    return BinaryRaster(np.asarray(r.data) < threshold)


def erode(a: BinaryRaster, b: LineKernel) -> BinaryRaster:
    """Min filter over the kernel offsets; out-of-bounds pixels read as background"""
    out = cv2.erode(a.as_uint8(), b._mask(), anchor=b._cv_anchor(b.anchor),
                    borderType=cv2.BORDER_CONSTANT, borderValue=0)
    return BinaryRaster(out.astype(bool))


def dilate(a: BinaryRaster, b: LineKernel) -> BinaryRaster:
    """
    Max filter over the reflected kernel offsets

    For odd lengths the reflected kernel is the kernel itself; for even
    lengths reflection keeps erode-then-dilate anti-extensive.
    """
    out = cv2.dilate(a.as_uint8(), b._mask(), anchor=b._cv_anchor(b.length - 1 - b.anchor),
                     borderType=cv2.BORDER_CONSTANT, borderValue=0)
    return BinaryRaster(out.astype(bool))


def open_lines(a: BinaryRaster, b: LineKernel) -> BinaryRaster:
    """Erosion followed by dilation with the same line element"""
    return dilate(erode(a, b), b)


def contours(a: BinaryRaster) -> List[np.ndarray]:
    """
    8-connected foreground components

    Returns:
        One (n, 2) int array of (x, y) pixel positions per component, in
        raster-scan order of each component's first pixel
    """
    count, labels = cv2.connectedComponents(a.as_uint8(), connectivity=8, ltype=cv2.CV_32S)
    if count <= 1:
        return []
    ys, xs = np.nonzero(labels)
    ids = labels[ys, xs]
    order = np.argsort(ids, kind='stable')
    ids, xs, ys = ids[order], xs[order], ys[order]
    bounds = np.searchsorted(ids, np.arange(1, count + 1))
    components = []
    for start, stop in zip(bounds[:-1], bounds[1:]):
        components.append(np.stack([xs[start:stop], ys[start:stop]], axis=1))
    return components


def _row_extremes(points: np.ndarray) -> np.ndarray:
    """Leftmost and rightmost point of every row; hull vertices are among these"""
    order = np.lexsort((points[:, 0], points[:, 1]))
    pts = points[order]
    ys = pts[:, 1]
    first = np.ones(len(pts), dtype=bool)
    first[1:] = ys[1:] != ys[:-1]
    last = np.ones(len(pts), dtype=bool)
    last[:-1] = ys[1:] != ys[:-1]
    return pts[first | last]


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(p: Union[np.ndarray, Iterable[Sequence[float]]]) -> List[Point]:
    """
    Monotone-chain convex hull

    Vertices are returned counter-clockwise (positive cross products in
    x-right / y-up terms) without collinear points. Collinear input yields
    its two extreme points; a single point yields itself.
    """
    points = np.asarray(list(p) if not isinstance(p, np.ndarray) else p)
    if points.size == 0:
        raise ValueError("convex_hull needs at least one point")
    points = points.reshape(-1, 2)
    if len(points) > 64:
        points = _row_extremes(points)
    pts = sorted(set((float(x), float(y)) for x, y in points.tolist()))
    if len(pts) <= 2:
        return [Point(x, y) for x, y in pts]

    lower: List[Tuple[float, float]] = []
    for q in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], q) <= 0:
            lower.pop()
        lower.append(q)
    upper: List[Tuple[float, float]] = []
    for q in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], q) <= 0:
            upper.pop()
        upper.append(q)
    hull = lower[:-1] + upper[:-1]
    return [Point(x, y) for x, y in hull]


def extreme_points_along(hull: Sequence[Tuple[float, float]],
                         orientation: Orientation) -> Tuple[Point, Point]:
    """Hull points with min and max projection on the orientation axis; ties go to the smaller perpendicular coordinate"""
    if not hull:
        raise ValueError("extreme_points_along needs a non-empty hull")
    if Orientation(orientation) == Orientation.HORIZONTAL:
        lo = min(hull, key=lambda q: (q[0], q[1]))
        hi = min(hull, key=lambda q: (-q[0], q[1]))
    else:
        lo = min(hull, key=lambda q: (q[1], q[0]))
        hi = min(hull, key=lambda q: (-q[1], q[0]))
    return Point(*lo), Point(*hi)


def rotate90(r: GrayRaster, k: int) -> GrayRaster:
    """Rotate by k quarter turns counter-clockwise (k = -1 is clockwise)"""
    return GrayRaster(np.rot90(np.asarray(r.data), k))
