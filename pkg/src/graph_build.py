"""Pipeline graph construction, edge labelling and label propagation"""

import json
import logging
import re
from collections import deque
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from sklearn.cluster import DBSCAN

from src.geometry import BBox, Point, point_segment_distance, project_on_segment
from src.line_detect import LineSegment, LineStyle, make_segment
from src.raster import Orientation
from src.text_extract import TextBox

DIRECT = 'direct'
PROPAGATED = 'propagated'
NONE = 'none'


@dataclass(frozen=True)
class GraphConfig:
    alpha: Optional[float] = None
    eta: float = 0.5
    cluster_eps: float = 50.0
    cluster_min_pts: int = 2
    label_regexes: Tuple[str, ...] = ()

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValueError(f"eta must be in (0, 1), got {self.eta}")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.cluster_eps <= 0 or self.cluster_min_pts < 1:
            raise ValueError("cluster_eps and cluster_min_pts must be positive")
        for pattern in self.label_regexes:
            re.compile(pattern)
        object.__setattr__(self, 'label_regexes', tuple(self.label_regexes))

    def alpha_for(self, kernel_length: int) -> float:
        """Minimum line length; defaults to twice the line kernel length"""
        return float(self.alpha) if self.alpha is not None else 2.0 * kernel_length


@dataclass(frozen=True)
class Edge:
    v1: int
    v2: int
    style: LineStyle = LineStyle.SOLID
    label: Optional[str] = None
    label_source: str = NONE


@dataclass(frozen=True)
class PidGraph:
    vertices: Tuple[Point, ...] = ()
    edges: Tuple[Edge, ...] = ()

    def edge_points(self, index: int) -> Tuple[Point, Point]:
        edge = self.edges[index]
        return self.vertices[edge.v1], self.vertices[edge.v2]

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(len(self.vertices)))
        for i, edge in enumerate(self.edges):
            g.add_edge(edge.v1, edge.v2, index=i)
        return g

    def adjacency(self) -> List[List[int]]:
        """For each edge, the sorted ids of edges sharing one of its vertices"""
        g = self.to_networkx()
        result = []
        for i, edge in enumerate(self.edges):
            neighbours = {data['index'] for v in (edge.v1, edge.v2)
                          for _, _, data in g.edges(v, data=True)}
            neighbours.discard(i)
            result.append(sorted(neighbours))
        return result

    def degree(self, vertex: int) -> int:
        return sum(vertex in (e.v1, e.v2) for e in self.edges)

    def to_json(self) -> str:
        data = {
            'vertices': [[v.x, v.y] for v in self.vertices],
            'edges': [{'v1': e.v1, 'v2': e.v2, 'style': e.style.value,
                       'label': e.label, 'label_source': e.label_source} for e in self.edges],
        }
        return json.dumps(data, indent=2, sort_keys=True)


def _truncate(line: LineSegment, boxes: Sequence[BBox]) -> List[LineSegment]:
    """Cut an axis-aligned segment where it crosses symbol boxes"""
    horizontal = line.orientation == Orientation.HORIZONTAL
    intervals = [(line.start, line.end)]
    for box in boxes:
        lo, hi = (box.y, box.y2) if horizontal else (box.x, box.x2)
        if not lo <= line.perp < hi:
            continue
        cut_lo, cut_hi = (box.x, box.x2) if horizontal else (box.y, box.y2)
        pieces = []
        for start, end in intervals:
            if end <= cut_lo or start >= cut_hi:
                pieces.append((start, end))
                continue
            if start < cut_lo:
                pieces.append((start, cut_lo))
            if end > cut_hi:
                pieces.append((cut_hi, end))
        intervals = pieces
    if intervals == [(line.start, line.end)]:
        return [line]
    result = []
    for start, end in intervals:
        if horizontal:
            result.append(make_segment(start, line.perp, end, line.perp, line.orientation, line.style))
        else:
            result.append(make_segment(line.perp, start, line.perp, end, line.orientation, line.style))
    return result


def filter_lines(lines: Sequence[LineSegment], texts: Sequence[TextBox], symbols: Sequence,
                 cfg: GraphConfig = GraphConfig(), alpha: Optional[float] = None) -> List[LineSegment]:
    """
    Drop short lines and lines inside text or symbol boxes; cut lines at symbol boxes

    Args:
        lines: Detected segments
        texts: Recognized text boxes
        symbols: Detected symbol instances (anything with a `bbox`)
        alpha: Minimum length; falls back to cfg.alpha
    """
    alpha = alpha if alpha is not None else cfg.alpha
    if alpha is None:
        raise ValueError("alpha is required when GraphConfig.alpha is not set")
    symbol_boxes = [s.bbox for s in symbols]
    blocked = [t.bbox for t in texts] + symbol_boxes
    kept = []
    for line in lines:
        for piece in _truncate(line, symbol_boxes):
            if piece.length < alpha:
                continue
            if any(box.contains(piece.midpoint) for box in blocked):
                continue
            kept.append(piece)
    return sorted(kept, key=LineSegment.sort_key)


def _split_t_junctions(points: List[Point], edges: List[Tuple[int, int, LineStyle]],
                       tolerance: float) -> List[Tuple[int, int, LineStyle]]:
    splits: Dict[int, List[Tuple[float, int]]] = {}
    originals = list(points)
    for vi, v in enumerate(originals):
        for ei, (a, b, _) in enumerate(edges):
            if vi in (a, b):
                continue
            pa, pb = originals[a], originals[b]
            t, foot = project_on_segment(v, pa, pb)
            if not 0.0 < t < 1.0:
                continue
            if point_segment_distance(v, pa, pb) > tolerance:
                continue
            if min(np.hypot(foot.x - pa.x, foot.y - pa.y), np.hypot(foot.x - pb.x, foot.y - pb.y)) <= tolerance:
                continue
            points.append(Point(foot.x, foot.y))
            splits.setdefault(ei, []).append((t, len(points) - 1))

    result = []
    for ei, (a, b, style) in enumerate(edges):
        chain = [a] + [idx for _, idx in sorted(splits.get(ei, []))] + [b]
        result.extend((u, w, style) for u, w in zip(chain[:-1], chain[1:]))
    return result


def _cluster_vertices(points: List[Point], radius: float, min_pts: int) -> List[Point]:
    """Replace every density cluster of vertices by its centroid until no cluster is left"""
    current = np.array(points, dtype=float)
    while len(current) > 1:
        labels = DBSCAN(eps=radius, min_samples=min_pts).fit(current).labels_
        if (labels < 0).all() or len(set(labels[labels >= 0])) == (labels >= 0).sum():
            break
        merged = current.copy()
        for label in set(labels[labels >= 0]):
            members = labels == label
            merged[members] = current[members].mean(axis=0)
        if np.allclose(merged, current):
            break
        current = merged
    return [Point(round(float(x), 2), round(float(y), 2)) for x, y in current]


def build_graph(lines: Sequence[LineSegment], cfg: GraphConfig = GraphConfig(),
                alpha: Optional[float] = None) -> PidGraph:
    """
    Build the pipeline graph from filtered lines

    Every line gives two vertices and an edge; vertices close to another
    edge's interior split it (T-junctions); vertex clusters collapse to
    their centroid; degenerate and duplicate edges are removed.
    """
    if not lines:
        return PidGraph()
    alpha = alpha if alpha is not None else cfg.alpha
    if alpha is None:
        raise ValueError("alpha is required when GraphConfig.alpha is not set")
    tolerance = cfg.eta * alpha
    points: List[Point] = []
    edges: List[Tuple[int, int, LineStyle]] = []
    for line in sorted(lines, key=LineSegment.sort_key):
        points.extend([line.p1, line.p2])
        edges.append((len(points) - 2, len(points) - 1, line.style))

    edges = _split_t_junctions(points, edges, tolerance)
    clustered = _cluster_vertices(points, min(cfg.cluster_eps, 2 * tolerance), cfg.cluster_min_pts)

    unique = sorted(set(clustered), key=lambda p: (p.x, p.y))
    index = {p: i for i, p in enumerate(unique)}
    edge_map: Dict[Tuple[int, int], LineStyle] = {}
    for a, b, style in edges:
        u, w = sorted((index[clustered[a]], index[clustered[b]]))
        if u == w:
            continue
        if (u, w) not in edge_map or style == LineStyle.SOLID:
            edge_map[(u, w)] = style

    used = sorted({v for key in edge_map for v in key})
    renumber = {old: new for new, old in enumerate(used)}
    vertices = tuple(unique[old] for old in used)
    graph_edges = tuple(Edge(renumber[u], renumber[w], style)
                        for (u, w), style in sorted(edge_map.items()))
    logging.getLogger(__name__).debug(f"Graph: {len(vertices)} vertices, {len(graph_edges)} edges "
                                      f"from {len(lines)} lines")
    return PidGraph(vertices, graph_edges)


def assign_edge_labels(graph: PidGraph, texts: Sequence[TextBox],
                       cfg: GraphConfig = GraphConfig()) -> PidGraph:
    """
    Attach regex-matching texts to their nearest edges, one text per edge

    Pairs are taken greedily by ascending centre-to-segment distance.
    """
    logger = logging.getLogger(__name__)
    if not cfg.label_regexes:
        logger.warning("No label regexes configured; pipelines stay unlabelled")
        return graph
    patterns = [re.compile(p) for p in cfg.label_regexes]
    candidates = [t for t in texts if any(p.match(t.text) for p in patterns)]
    if not candidates or not graph.edges:
        return graph

    pairs = []
    for ti, text in enumerate(candidates):
        for ei in range(len(graph.edges)):
            a, b = graph.edge_points(ei)
            pairs.append((point_segment_distance(text.bbox.center, a, b), ti, ei))
    pairs.sort()

    edges = list(graph.edges)
    used_texts = set()
    for _, ti, ei in pairs:
        if ti in used_texts or edges[ei].label is not None:
            continue
        edges[ei] = replace(edges[ei], label=candidates[ti].text, label_source=DIRECT)
        used_texts.add(ti)
    logger.debug(f"Assigned {len(used_texts)} direct pipeline labels")
    return replace(graph, edges=tuple(edges))


def _edge_order(graph: PidGraph, index: int) -> Tuple[float, float, int]:
    a, b = graph.edge_points(index)
    return (min(a.x, b.x), min(a.y, b.y), index)


def propagate_labels(graph: PidGraph) -> PidGraph:
    """
    Spread direct labels to unlabelled edges by breadth-first search

    Sources run in left-to-right order of their leftmost x (then topmost y);
    the search never passes through an edge labelled before it got there.
    """
    adjacency = graph.adjacency()
    edges = list(graph.edges)
    sources = sorted((i for i, e in enumerate(edges) if e.label_source == DIRECT),
                     key=lambda i: _edge_order(graph, i))
    for source in sources:
        label = edges[source].label
        queue = deque([source])
        while queue:
            current = queue.popleft()
            for neighbour in sorted(adjacency[current], key=lambda i: _edge_order(graph, i)):
                if edges[neighbour].label is not None:
                    continue
                edges[neighbour] = replace(edges[neighbour], label=label, label_source=PROPAGATED)
                queue.append(neighbour)
    return replace(graph, edges=tuple(edges))


class GraphBuilder:
    """Filter, build, label and propagate for one sheet"""

    def __init__(self, config: GraphConfig = GraphConfig()):
        self.config = config
        self.logger = logging.getLogger(__name__)

    def build(self, lines: Sequence[LineSegment], texts: Sequence[TextBox], symbols: Sequence,
              kernel_length: int) -> PidGraph:
        alpha = self.config.alpha_for(kernel_length)
        filtered = filter_lines(lines, texts, symbols, self.config, alpha)
        graph = build_graph(filtered, self.config, alpha)
        graph = propagate_labels(assign_edge_labels(graph, texts, self.config))
        labelled = sum(e.label is not None for e in graph.edges)
        self.logger.info(f"Built graph: {len(graph.vertices)} vertices, {len(graph.edges)} edges, "
                         f"{labelled} labelled")
        return graph
