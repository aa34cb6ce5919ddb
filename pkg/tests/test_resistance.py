import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resistwalk.errors import BudgetExceeded, InvariantViolation, MissingValue, OverlappingSets
from resistwalk.graphs import build_graph, family_graph
from resistwalk.resistance import (
    LaplacianSolver,
    check_metric,
    check_metric_matrix,
    dirichlet_energy,
    effective_resistance,
    harmonic_potential,
    resistance_matrix,
    set_resistance,
)


def test_path_resistance_is_length():
    g = family_graph("path", 6)

    assert effective_resistance(g, 0, 6) == pytest.approx(6.0)
    assert effective_resistance(g, 2, 5) == pytest.approx(3.0)
    assert effective_resistance(g, 3, 3) == 0.0


def test_series_and_parallel():
    g = build_graph([(0, 1, 2.0), (1, 2, 2.0), (0, 2, 1.0)])

    # 1/2 + 1/2 in series, in parallel with 1
    assert effective_resistance(g, 0, 2) == pytest.approx(0.5)


@pytest.mark.parametrize("level", range(5))
def test_gasket_corner_resistance_scales_by_five_thirds(level):
    g = family_graph("gasket", level)

    assert effective_resistance(g, 0, 1) == pytest.approx((2 / 3) * (5 / 3) ** level, rel=1e-10)


def test_matrix_matches_networkx():
    g = family_graph("vicsek", 1)
    G = nx.Graph()
    G.add_edges_from((u, v) for u, v, _ in g.edges)

    matrix = resistance_matrix(g, validate=True)

    for x, y in [(0, 1), (0, 2), (3, 7), (5, 20)]:
        assert matrix.R[x, y] == pytest.approx(nx.resistance_distance(G, x, y), rel=1e-9)
    assert matrix.r_diam == pytest.approx(matrix.R.max())
    assert matrix.graph_ref == "vicsek(1)"


def test_vicsek_resistance_equals_hop_distance():
    g = family_graph("vicsek", 1)

    matrix = resistance_matrix(g)

    assert matrix.R[0, 2] == pytest.approx(6.0)
    assert matrix.r_min == pytest.approx(1.0)


def test_rescaled_has_unit_diameter():
    matrix = resistance_matrix(family_graph("gasket", 2))

    assert matrix.rescaled().value.max() == pytest.approx(1.0)
    assert all(0 < value <= matrix.r_diam for _, _, value in matrix.pairs())


def test_budget_is_enforced():
    with pytest.raises(BudgetExceeded):
        resistance_matrix(family_graph("gasket", 2), budget=10)


def test_iterative_solver_agrees_with_dense():
    g = family_graph("carpet", 1)
    dense = LaplacianSolver(g)
    iterative = LaplacianSolver(g, dense_limit=0)
    b = np.zeros(g.n)
    b[3], b[40] = 1.0, -1.0

    assert not iterative.dense
    assert np.allclose(dense.solve(b), iterative.solve(b), atol=1e-8)


def test_set_resistance_on_path():
    g = family_graph("path", 4)

    assert set_resistance(g, [0], [4]) == pytest.approx(4.0)
    assert set_resistance(g, [0, 1], [3, 4]) == pytest.approx(2.0)


def test_set_resistance_rejects_overlap():
    with pytest.raises(OverlappingSets):
        set_resistance(family_graph("path", 4), [0, 1], [1, 2])


def test_harmonic_potential_is_linear_on_path():
    g = family_graph("path", 4)

    assert np.allclose(harmonic_potential(g, [0], [4]), [0.0, 0.25, 0.5, 0.75, 1.0])


def test_dirichlet_energy_of_equilibrium_potential():
    g = family_graph("gasket", 2)
    potential = harmonic_potential(g, [0], [1, 2])

    assert dirichlet_energy(g, potential) == pytest.approx(1.0 / set_resistance(g, [0], [1, 2]))


def test_dirichlet_energy_accepts_mappings():
    g = family_graph("path", 2)

    assert dirichlet_energy(g, {0: 0.0, 1: 1.0, 2: 3.0}) == pytest.approx(5.0)
    with pytest.raises(MissingValue):
        dirichlet_energy(g, {0: 0.0, 1: 1.0})


def test_check_metric_passes_on_family_graph():
    g = family_graph("carpet", 0)

    check_metric(resistance_matrix(g), mu=g.mu)


def test_check_metric_reports_triangle_failure(caplog):
    R = np.array([[0.0, 1.0, 5.0], [1.0, 0.0, 1.0], [5.0, 1.0, 0.0]])

    with pytest.raises(InvariantViolation):
        check_metric_matrix(R, "bad")
    assert "triangle inequality" in caplog.text


@st.composite
def weighted_cycles(draw):
    n = draw(st.integers(min_value=3, max_value=9))
    weights = draw(st.lists(st.floats(min_value=0.2, max_value=5.0), min_size=n, max_size=n))
    return [(i, (i + 1) % n, w) for i, w in enumerate(weights)]


@settings(max_examples=40, deadline=None)
@given(weighted_cycles())
def test_resistance_is_a_metric_on_cycles(edges):
    g = build_graph(edges)
    matrix = resistance_matrix(g)

    check_metric(matrix, mu=g.mu)
    # two arcs in parallel
    arc = 1.0 / edges[0][2]
    rest = sum(1.0 / w for _, _, w in edges[1:])
    assert matrix.R[0, 1] == pytest.approx(arc * rest / (arc + rest))
