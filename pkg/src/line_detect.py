"""Solid and dashed line detection with line structuring elements, plus a Hough baseline"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from skimage.transform import probabilistic_hough_line
from sklearn.cluster import DBSCAN

from src.geometry import BBox, Point
from src.raster import (
    BinaryRaster, LineKernel, Orientation, contours, convex_hull,
    extreme_points_along, open_lines
)

STROKE_TOLERANCE = 2.0


class LineStyle(str, Enum):
    SOLID = 'solid'
    DASHED = 'dashed'


@dataclass(frozen=True)
class LineSegment:
    """Axis-aligned segment; p1 is the end with the smaller axis coordinate"""
    p1: Point
    p2: Point
    orientation: Orientation
    style: LineStyle = LineStyle.SOLID
    parts: Tuple['LineSegment', ...] = field(default=(), compare=False, repr=False)

    @property
    def length(self) -> float:
        return math.hypot(self.p2.x - self.p1.x, self.p2.y - self.p1.y)

    @property
    def midpoint(self) -> Point:
        return Point((self.p1.x + self.p2.x) / 2.0, (self.p1.y + self.p2.y) / 2.0)

    @property
    def start(self) -> float:
        return self.p1.x if self.orientation == Orientation.HORIZONTAL else self.p1.y

    @property
    def end(self) -> float:
        return self.p2.x if self.orientation == Orientation.HORIZONTAL else self.p2.y

    @property
    def perp(self) -> float:
        if self.orientation == Orientation.HORIZONTAL:
            return (self.p1.y + self.p2.y) / 2.0
        return (self.p1.x + self.p2.x) / 2.0

    def sort_key(self) -> Tuple[str, float, float]:
        return (self.orientation.value, self.p1.y, self.p1.x)

    def to_dict(self) -> Dict[str, object]:
        return {
            'x1': self.p1.x, 'y1': self.p1.y, 'x2': self.p2.x, 'y2': self.p2.y,
            'orientation': self.orientation.value, 'style': self.style.value,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> 'LineSegment':
        return make_segment(data['x1'], data['y1'], data['x2'], data['y2'],
                            Orientation(data['orientation']),
                            LineStyle(data.get('style', LineStyle.SOLID.value)))


def make_segment(x1: float, y1: float, x2: float, y2: float,
                 orientation: Orientation, style: LineStyle = LineStyle.SOLID,
                 parts: Tuple[LineSegment, ...] = ()) -> LineSegment:
    """Build a segment with endpoints ordered along its axis"""
    a, b = Point(float(x1), float(y1)), Point(float(x2), float(y2))
    axis = 0 if Orientation(orientation) == Orientation.HORIZONTAL else 1
    if (b[axis], b[1 - axis]) < (a[axis], a[1 - axis]):
        a, b = b, a
    return LineSegment(a, b, Orientation(orientation), LineStyle(style), parts)


def _along(orientation: Orientation, start: float, end: float, perp: float,
           style: LineStyle, parts: Tuple[LineSegment, ...] = ()) -> LineSegment:
    if orientation == Orientation.HORIZONTAL:
        return make_segment(start, perp, end, perp, orientation, style, parts)
    return make_segment(perp, start, perp, end, orientation, style, parts)


@dataclass(frozen=True)
class LineDetectConfig:
    kernel_fraction: float = 0.001
    min_kernel: int = 5
    dash_jump_limit: int = 3
    dash_merge_eps: float = 50.0
    dash_merge_min_pts: int = 2
    dash_candidate_factor: float = 3.0
    dash_gap_tolerance: float = 0.5
    dash_cluster_min: int = 3
    dash_min_count: int = 2
    collinear_tolerance: float = STROKE_TOLERANCE
    hough_threshold: int = 10
    hough_line_gap: int = 3

    def __post_init__(self):
        if not 0 < self.kernel_fraction < 0.1:
            raise ValueError(f"kernel_fraction must be in (0, 0.1), got {self.kernel_fraction}")
        if self.min_kernel < 2:
            raise ValueError(f"min_kernel must be >= 2, got {self.min_kernel}")
        if self.dash_jump_limit < 1:
            raise ValueError(f"dash_jump_limit must be >= 1, got {self.dash_jump_limit}")
        if self.dash_merge_eps <= 0 or self.dash_merge_min_pts < 1:
            raise ValueError("dash merge radius and neighbour count must be positive")


@dataclass(frozen=True)
class LineDetection:
    """Everything line detection produces for one sheet"""
    solid: List[LineSegment]
    dashed: List[LineSegment]
    horizontal: BinaryRaster
    vertical: BinaryRaster
    kernel_length: int

    @property
    def all_lines(self) -> List[LineSegment]:
        return sorted(self.solid + self.dashed, key=LineSegment.sort_key)


def kernel_length_for(width: int, height: int, cfg: LineDetectConfig) -> int:
    return max(cfg.min_kernel, int(math.floor(cfg.kernel_fraction * max(width, height) + 0.5)))


def _segments_from_opened(opened: BinaryRaster, orientation: Orientation,
                          kernel_len: int) -> List[LineSegment]:
    axis = 0 if orientation == Orientation.HORIZONTAL else 1
    segments = []
    for component in contours(opened):
        hull = convex_hull(component)
        lo, hi = extreme_points_along(hull, orientation)
        # pixel extent along the axis
        if hi[axis] - lo[axis] + 1 < kernel_len:
            continue
        if abs(hi[1 - axis] - lo[1 - axis]) > STROKE_TOLERANCE:
            perp = float(np.median(component[:, 1 - axis]))
            segments.append(_along(orientation, lo[axis], hi[axis], perp, LineStyle.SOLID))
        else:
            segments.append(make_segment(lo.x, lo.y, hi.x, hi.y, orientation))
    return segments


def detect_solid_lines(a: BinaryRaster, cfg: LineDetectConfig) -> List[LineSegment]:
    """Open with horizontal and vertical line elements and reduce each component to its hull extremes"""
    k = kernel_length_for(a.width, a.height, cfg)
    segments = []
    for orientation in (Orientation.HORIZONTAL, Orientation.VERTICAL):
        opened = open_lines(a, LineKernel(orientation, k))
        segments.extend(_segments_from_opened(opened, orientation, k))
    return sorted(segments, key=LineSegment.sort_key)


def _group_tracks(segments: Sequence[LineSegment], tolerance: float) -> List[List[LineSegment]]:
    """Group collinear segments (perpendicular offset within tolerance), each track sorted along the axis"""
    tracks: List[List[LineSegment]] = []
    anchors: List[float] = []
    for seg in sorted(segments, key=lambda s: (s.perp, s.start)):
        if tracks and abs(seg.perp - anchors[-1]) <= tolerance:
            tracks[-1].append(seg)
        else:
            tracks.append([seg])
            anchors.append(seg.perp)
    return [sorted(track, key=lambda s: (s.start, s.end)) for track in tracks]


def _dash_thresholds(tracks: Sequence[Sequence[LineSegment]], max_gap: float,
                     kernel_len: int, cfg: LineDetectConfig) -> Optional[Tuple[float, float]]:
    """
    Mean (dash length, gap) of the cluster with the least mean length and gap

    A run of n dashes yields n - 1 gap features, so a cluster needs
    dash_cluster_min - 1 of them.
    """
    min_gaps = max(1, cfg.dash_cluster_min - 1)
    features = []
    for track in tracks:
        for prev, nxt in zip(track, track[1:]):
            gap = nxt.start - prev.end
            if 0 < gap <= max_gap:
                features.append(((prev.length + nxt.length) / 2.0, gap))
    if len(features) < min_gaps:
        return None
    data = np.asarray(features, dtype=float)
    labels = DBSCAN(eps=max(1.0, 0.25 * kernel_len),
                    min_samples=cfg.dash_merge_min_pts).fit(data).labels_
    best = None
    for label in sorted(set(labels.tolist()) - {-1}):
        members = data[labels == label]
        if len(members) < min_gaps:
            continue
        mean_len, mean_gap = members.mean(axis=0)
        if best is None or mean_len + mean_gap < best[0] + best[1]:
            best = (float(mean_len), float(mean_gap))
    return best


def _chain_track(track: Sequence[LineSegment], dash_len: float, dash_gap: float,
                 cfg: LineDetectConfig) -> Tuple[List[List[LineSegment]], List[str]]:
    """
    Split one track into dash chains

    Returns:
        (chains, boundaries): boundaries[i] is 'jump' or 'irregular' and
        describes the break between chains[i] and chains[i + 1]
    """
    tol = cfg.dash_gap_tolerance
    period = dash_len + dash_gap
    chains: List[List[LineSegment]] = []
    boundaries: List[str] = []
    current: List[LineSegment] = []
    # why the chain in `current` was separated from the previous one
    current_reason = 'irregular'

    def close():
        if current:
            if chains:
                boundaries.append(current_reason)
            chains.append(current)

    for seg in track:
        if abs(seg.length - dash_len) > tol * dash_len:
            close()
            current, current_reason = [], 'irregular'
            continue
        if not current:
            current = [seg]
            continue
        gap = seg.start - current[-1].end
        if abs(gap - dash_gap) <= tol * dash_gap:
            current.append(seg)
            continue
        missing = int(round((gap - dash_gap) / period)) if period > 0 else 0
        residual = abs(gap - (missing * period + dash_gap))
        if 1 <= missing < cfg.dash_jump_limit and residual <= tol * dash_gap:
            current.append(seg)
            continue
        close()
        jumped = missing >= cfg.dash_jump_limit and residual <= tol * dash_gap
        current, current_reason = [seg], 'jump' if jumped else 'irregular'
    close()
    return chains, boundaries


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def detect_dashed_lines(segments: Sequence[LineSegment], cfg: LineDetectConfig,
                        kernel_length: Optional[int] = None) -> List[LineSegment]:
    """
    Chain short collinear segments into dashed lines

    Each returned dashed segment spans its chain's extreme endpoints and
    carries the consumed short segments in `parts`; the caller removes
    those from the solid set.
    """
    k = kernel_length or cfg.min_kernel
    max_len = cfg.dash_candidate_factor * k
    results: List[LineSegment] = []

    for orientation in (Orientation.HORIZONTAL, Orientation.VERTICAL):
        candidates = [s for s in segments
                      if s.orientation == orientation and s.style == LineStyle.SOLID
                      and s.length < max_len]
        if not candidates:
            continue
        tracks = _group_tracks(candidates, cfg.collinear_tolerance)
        thresholds = _dash_thresholds(tracks, 2 * max_len, k, cfg)
        if thresholds is None:
            continue
        dash_len, dash_gap = thresholds

        chains: List[List[LineSegment]] = []
        links: List[Tuple[int, int]] = []
        for track in tracks:
            track_chains, boundaries = _chain_track(track, dash_len, dash_gap, cfg)
            base = len(chains)
            chains.extend(track_chains)
            for i, reason in enumerate(boundaries):
                if reason == 'irregular':
                    links.append((base + i, base + i + 1))
        if not chains:
            continue

        endpoints = []
        for chain in chains:
            endpoints.append((chain[0].start, chain[0].perp))
            endpoints.append((chain[-1].end, chain[-1].perp))
        labels = DBSCAN(eps=cfg.dash_merge_eps,
                        min_samples=cfg.dash_merge_min_pts).fit(np.asarray(endpoints)).labels_

        groups = _UnionFind(len(chains))
        for i, j in links:
            tail, head = labels[2 * i + 1], labels[2 * j]
            if tail != -1 and tail == head:
                groups.union(i, j)

        merged: Dict[int, List[LineSegment]] = {}
        for i, chain in enumerate(chains):
            merged.setdefault(groups.find(i), []).extend(chain)
        for members in merged.values():
            if len(members) < cfg.dash_min_count:
                continue
            start = min(s.start for s in members)
            end = max(s.end for s in members)
            perp = float(np.median([s.perp for s in members]))
            results.append(_along(orientation, start, end, perp, LineStyle.DASHED,
                                  tuple(sorted(members, key=lambda s: s.start))))

    return sorted(results, key=LineSegment.sort_key)


@dataclass(frozen=True)
class HoughParams:
    threshold: int = 10
    line_length: int = 14
    line_gap: int = 3
    angle_window_deg: float = 2.0
    angle_step_deg: float = 0.5


def detect_lines_hough(a: BinaryRaster, params: HoughParams = HoughParams()) -> List[LineSegment]:
    """Probabilistic Hough baseline restricted to near-horizontal and near-vertical angles"""
    if not a.bits.any():
        return []
    window = np.arange(-params.angle_window_deg,
                       params.angle_window_deg + params.angle_step_deg / 2,
                       params.angle_step_deg)
    thetas = np.deg2rad(np.concatenate([window, 90.0 + window]))
    raw = probabilistic_hough_line(a.bits, threshold=params.threshold,
                                   line_length=params.line_length,
                                   line_gap=params.line_gap, theta=thetas, rng=0)
    segments = []
    for (x0, y0), (x1, y1) in raw:
        if abs(x1 - x0) >= abs(y1 - y0):
            perp = (y0 + y1) / 2.0
            segments.append(_along(Orientation.HORIZONTAL, min(x0, x1), max(x0, x1), perp,
                                   LineStyle.SOLID))
        else:
            perp = (x0 + x1) / 2.0
            segments.append(_along(Orientation.VERTICAL, min(y0, y1), max(y0, y1), perp,
                                   LineStyle.SOLID))
    return sorted(segments, key=LineSegment.sort_key)


class LineDetector:
    """Runs solid and dashed line detection over a binarized sheet"""

    def __init__(self, config: LineDetectConfig = LineDetectConfig()):
        self.config = config
        self.logger = logging.getLogger(__name__)

    def detect(self, a: BinaryRaster, exclude: Sequence[BBox] = ()) -> LineDetection:
        """
        Detect solid and dashed lines

        Args:
            a: Binarized sheet
            exclude: Regions (text, symbols) whose short segments are not dash candidates

        Returns:
            LineDetection: solid lines with dash parts removed, dashed lines, opened rasters
        """
        k = kernel_length_for(a.width, a.height, self.config)
        opened = {}
        solid: List[LineSegment] = []
        for orientation in (Orientation.HORIZONTAL, Orientation.VERTICAL):
            opened[orientation] = open_lines(a, LineKernel(orientation, k))
            solid.extend(_segments_from_opened(opened[orientation], orientation, k))
        solid.sort(key=LineSegment.sort_key)
        self.logger.debug(f"Kernel length {k}: {len(solid)} solid segments")

        candidates = [s for s in solid
                      if not any(box.contains(s.midpoint) for box in exclude)]
        dashed = detect_dashed_lines(candidates, self.config, k)
        consumed = {part for line in dashed for part in line.parts}
        solid = [s for s in solid if s not in consumed]

        self.logger.info(f"Detected {len(solid)} solid and {len(dashed)} dashed lines")
        return LineDetection(solid, dashed, opened[Orientation.HORIZONTAL],
                             opened[Orientation.VERTICAL], k)
