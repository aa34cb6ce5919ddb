import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resistwalk.errors import (
    DisconnectedGraph,
    EmptySet,
    GraphError,
    InvalidLevel,
    LevelTooLarge,
    NonpositiveWeight,
    RangeError,
    SelfLoop,
    UnknownVertex,
)
from resistwalk.graphs import (
    FamilySpec,
    boundary_vertices,
    build_graph,
    family_graph,
    generate,
    graph_distance,
    hop_distance_matrix,
    wire_map,
    wire_vertices,
)


def _to_networkx(g):
    G = nx.Graph()
    G.add_nodes_from(g.vertices)
    G.add_weighted_edges_from(g.edges)
    return G


@pytest.mark.parametrize(
    "family, level, n_vertices, n_edges",
    [
        ("path", 4, 5, 4),
        ("gasket", 0, 3, 3),
        ("gasket", 1, 6, 9),
        ("gasket", 2, 15, 27),
        ("gasket", 3, 42, 81),
        ("vicsek", 0, 5, 4),
        ("vicsek", 1, 21, 20),
        ("carpet", 0, 8, 8),
        ("carpet", 1, 64, 88),
    ],
)
def test_family_sizes(family, level, n_vertices, n_edges):
    g = family_graph(family, level)

    assert g.n == n_vertices
    assert len(g.edges) == n_edges
    assert g.family == family
    assert g.level == level


def test_gasket_measures_and_corners():
    g = family_graph("gasket", 2)

    assert g.meta["corners"] == [0, 1, 2]
    assert list(g.mu[:3]) == [2.0, 2.0, 2.0]
    assert set(g.mu[3:]) == {4.0}
    assert g.total_mass == 2 * len(g.edges)
    assert len(g.meta["cells"]) == 9


def test_vicsek_is_a_tree():
    G = _to_networkx(family_graph("vicsek", 2))

    assert nx.is_tree(G)


def test_hop_distances_match_networkx():
    g = family_graph("vicsek", 1)
    expected = dict(nx.all_pairs_shortest_path_length(_to_networkx(g)))

    D = hop_distance_matrix(g)

    for x in g.vertices:
        for y in g.vertices:
            assert D[x, y] == expected[x][y]
    assert graph_distance(g, 0, 2) == expected[0][2]


def test_parallel_edges_merge():
    g = build_graph([(0, 1, 1.0), (1, 0, 2.5), (1, 2, 1.0)])

    assert g.edges == ((0, 1, 3.5), (1, 2, 1.0))
    assert list(g.mu) == [3.5, 4.5, 1.0]
    assert g.total_mass == 9.0


@pytest.mark.parametrize(
    "edges, error",
    [
        ([(0, 0, 1.0)], SelfLoop),
        ([(0, 1, 0.0)], NonpositiveWeight),
        ([(0, 1, -1.0)], NonpositiveWeight),
        ([(0, 1, float("nan"))], NonpositiveWeight),
        ([(0, 1, 1.0), (2, 3, 1.0)], DisconnectedGraph),
        ([(0, -1, 1.0)], UnknownVertex),
        ([(0, 1)], GraphError),
    ],
)
def test_build_graph_rejects_bad_edges(edges, error):
    with pytest.raises(error):
        build_graph(edges)


def test_isolated_vertex_is_disconnected():
    with pytest.raises(DisconnectedGraph):
        build_graph([(0, 1, 1.0)], n_vertices=3)


def test_wire_vertices_adds_parallel_edges():
    path = family_graph("path", 2)

    wired = wire_vertices(path, [0, 2])

    assert wired.n == 2
    assert wired.edges == ((0, 1, 2.0),)
    assert wired.meta["wired"] is True
    assert wire_map(path, [0, 2]) == {0: 0, 1: 1, 2: 0}


def test_wire_vertices_drops_internal_edges():
    g = family_graph("gasket", 1)

    wired = wire_vertices(g, [0, 1, 2])

    assert wired.n == g.n - 2
    assert wired.total_mass == g.total_mass


def test_wire_vertices_rejects_empty_set():
    with pytest.raises(EmptySet):
        wire_vertices(family_graph("path", 3), [])


def test_wired_carpet_collapses_boundary():
    carpet = family_graph("carpet", 1)
    wired = family_graph("wired_carpet", 1)

    assert len(boundary_vertices(carpet)) == 32
    assert wired.n == carpet.n - 32 + 1
    assert boundary_vertices(wired) == [wired.meta["wired_vertex"]]


def test_boundary_vertices_requires_metadata():
    with pytest.raises(GraphError):
        boundary_vertices(family_graph("gasket", 1))


@pytest.mark.parametrize(
    "family, level, error",
    [
        ("torus", 1, RangeError),
        ("path", 0, InvalidLevel),
        ("wired_carpet", 0, InvalidLevel),
        ("gasket", 1.5, InvalidLevel),
    ],
)
def test_family_spec_validation(family, level, error):
    with pytest.raises(error):
        FamilySpec(family, level)


def test_family_spec_rejects_bad_weight():
    with pytest.raises(NonpositiveWeight):
        FamilySpec("path", 2, weight=0.0)


def test_generate_respects_level_caps():
    with pytest.raises(LevelTooLarge):
        generate(FamilySpec("gasket", 3), max_levels={"gasket": 2})


def test_weight_scales_measure():
    g = family_graph("gasket", 1, weight=0.5)

    assert g.total_mass == pytest.approx(0.5 * 2 * len(g.edges))


def test_check_vertex_rejects_unknown_ids():
    g = family_graph("path", 3)
    with pytest.raises(UnknownVertex):
        g.check_vertex(4)
    with pytest.raises(UnknownVertex):
        g.check_vertex(True)


@st.composite
def random_trees(draw):
    n = draw(st.integers(min_value=2, max_value=12))
    parents = [draw(st.integers(min_value=0, max_value=v - 1)) for v in range(1, n)]
    weights = draw(st.lists(st.floats(min_value=0.1, max_value=10.0), min_size=n - 1, max_size=n - 1))
    return [(v, parent, w) for v, parent, w in zip(range(1, n), parents, weights)]


@settings(max_examples=50, deadline=None)
@given(random_trees())
def test_measures_sum_to_twice_total_weight(edges):
    g = build_graph(edges)

    assert g.total_mass == pytest.approx(2 * sum(w for _, _, w in edges))
    assert np.allclose(np.asarray(g.adjacency.sum(axis=1)).ravel(), g.mu)
