import json

import pytest

from src.geometry import BBox, Point, distance
from src.graph_build import (DIRECT, NONE, PROPAGATED, Edge, GraphBuilder, GraphConfig, PidGraph,
                             assign_edge_labels, build_graph, filter_lines, propagate_labels)
from src.line_detect import LineStyle, make_segment
from src.raster import Orientation
from src.symbol_detect import SymbolInstance
from src.text_extract import TextBox

H, V = Orientation.HORIZONTAL, Orientation.VERTICAL
PIPE_REGEX = r'^\d+"-[A-Z]{2}-\d{4}$'


def _text(text, cx, cy):
    return TextBox(BBox(cx - 20, cy - 7, 40, 14), text, H, 0.9)


def _path_graph(labels):
    """Horizontal chain of len(labels) unit edges; a label marks a direct source"""
    vertices = tuple(Point(10.0 * i, 0.0) for i in range(len(labels) + 1))
    edges = tuple(Edge(i, i + 1, LineStyle.SOLID, label, DIRECT if label else NONE)
                  for i, label in enumerate(labels))
    return PidGraph(vertices, edges)


def test_plus_junction_collapses_to_one_vertex():
    lines = [make_segment(0, 50, 48, 50, H), make_segment(52, 50, 100, 50, H),
             make_segment(50, 0, 50, 47, V), make_segment(50, 53, 50, 100, V)]
    graph = build_graph(lines, GraphConfig(), alpha=10)
    assert len(graph.vertices) == 5
    assert len(graph.edges) == 4
    centre = graph.vertices.index(Point(50.0, 50.0))
    assert graph.degree(centre) == 4
    adjacency = graph.adjacency()
    for i in range(4):
        assert adjacency[i] == sorted(set(range(4)) - {i})


def test_t_junction_splits_the_through_line():
    lines = [make_segment(0, 0, 100, 0, H), make_segment(50, 2, 50, 80, V)]
    graph = build_graph(lines, GraphConfig(), alpha=10)
    assert len(graph.vertices) == 4
    assert len(graph.edges) == 3
    junction = max(range(len(graph.vertices)), key=graph.degree)
    assert graph.degree(junction) == 3
    assert distance(graph.vertices[junction], (50, 0)) <= 1.0


def test_far_vertex_does_not_split():
    lines = [make_segment(0, 0, 100, 0, H), make_segment(50, 20, 50, 80, V)]
    graph = build_graph(lines, GraphConfig(), alpha=10)
    assert len(graph.edges) == 2
    assert graph.adjacency() == [[], []]


def test_duplicate_edges_keep_solid_style():
    lines = [make_segment(0, 0, 100, 0, H, LineStyle.DASHED), make_segment(1, 1, 99, 1, H)]
    graph = build_graph(lines, GraphConfig(), alpha=10)
    assert len(graph.edges) == 1
    assert graph.edges[0].style == LineStyle.SOLID


def test_build_graph_requires_alpha():
    with pytest.raises(ValueError):
        build_graph([make_segment(0, 0, 100, 0, H)], GraphConfig())
    assert build_graph([], GraphConfig()) == PidGraph()


def test_filter_lines_drops_short_and_covered_and_cuts_at_symbols():
    lines = [make_segment(0, 50, 200, 50, H),
             make_segment(300, 10, 305, 10, H),          # short
             make_segment(300, 100, 340, 100, H)]        # under a text box
    texts = [TextBox(BBox(290, 90, 60, 20), 'XI-101')]
    symbols = [SymbolInstance(3, BBox(90, 40, 20, 20), 0.99)]
    kept = filter_lines(lines, texts, symbols, GraphConfig(), alpha=10)
    assert [(s.p1.x, s.p2.x) for s in kept] == [(0.0, 90.0), (110.0, 200.0)]


def test_direct_labels_go_to_nearest_edges_once():
    graph = PidGraph((Point(0, 0), Point(100, 0), Point(0, 100), Point(100, 100)),
                     (Edge(0, 1), Edge(2, 3)))
    texts = [_text('6"-AB-1234', 50, -12), _text('4"-CD-5678', 50, 88), _text('XI-101', 50, 2),
             _text('2"-EF-0001', 50, 60)]
    labelled = assign_edge_labels(graph, texts, GraphConfig(label_regexes=(PIPE_REGEX,)))
    assert [(e.label, e.label_source) for e in labelled.edges] == [('6"-AB-1234', DIRECT),
                                                                   ('4"-CD-5678', DIRECT)]


def test_no_regexes_leaves_graph_unlabelled():
    graph = _path_graph([None, None])
    assert assign_edge_labels(graph, [_text('6"-AB-1234', 5, 0)], GraphConfig()) == graph


def test_propagation_fills_a_path():
    graph = propagate_labels(_path_graph(['L', None, None]))
    assert [(e.label, e.label_source) for e in graph.edges] == [('L', DIRECT), ('L', PROPAGATED),
                                                                ('L', PROPAGATED)]


def test_labelled_edge_blocks_propagation():
    graph = propagate_labels(_path_graph(['A', None, 'B', None]))
    assert [e.label for e in graph.edges] == ['A', 'A', 'B', 'B']
    assert graph.edges[2].label_source == DIRECT
    assert graph.edges[3].label_source == PROPAGATED


def test_propagation_is_deterministic():
    graph = _path_graph(['A', None, None, None, 'B'])
    first = propagate_labels(graph)
    assert all(propagate_labels(graph) == first for _ in range(5))
    assert [e.label for e in first.edges] == ['A', 'A', 'A', 'A', 'B']


def test_unlabelled_component_stays_unlabelled():
    graph = propagate_labels(_path_graph([None, None]))
    assert all(e.label is None and e.label_source == NONE for e in graph.edges)


def test_builder_labels_a_t_junction():
    lines = [make_segment(0, 0, 100, 0, H), make_segment(50, 2, 50, 80, V)]
    texts = [_text('6"-AB-1234', 25, -12)]
    graph = GraphBuilder(GraphConfig(label_regexes=(PIPE_REGEX,))).build(lines, texts, [], kernel_length=5)
    assert len(graph.edges) == 3
    assert {e.label for e in graph.edges} == {'6"-AB-1234'}
    assert sorted(e.label_source for e in graph.edges) == [DIRECT, PROPAGATED, PROPAGATED]

    data = json.loads(graph.to_json())
    assert len(data['vertices']) == 4
    assert {e['label'] for e in data['edges']} == {'6"-AB-1234'}


def test_config_validation():
    with pytest.raises(ValueError):
        GraphConfig(eta=1.0)
    with pytest.raises(ValueError):
        GraphConfig(alpha=0)
    assert GraphConfig(alpha=25).alpha_for(7) == 25.0
    assert GraphConfig().alpha_for(7) == 14.0
