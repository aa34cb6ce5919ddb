import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resistwalk.errors import BudgetExceeded, HorizonTooLarge, NegativeTheta, RangeError, SameVertex
from resistwalk.exact_chain import (
    MAX_HORIZON,
    commute_time,
    excursion_mean,
    excursion_mgf,
    excursion_second_moment,
    excursion_second_moment_formula,
    excursion_visit_law,
    expected_cover_time,
    expected_hitting_time,
    expected_return_time,
    hit_before_return_prob,
    hitting_probabilities,
    hitting_time_tail,
    laplace_bound_constant,
    return_time_laplace,
    return_time_tail,
    transition_matrix,
)
from resistwalk.graphs import build_graph, family_graph
from resistwalk.resistance import effective_resistance, resistance_matrix


@pytest.fixture
def triangle():
    return build_graph([(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])


def test_transition_matrix_is_stochastic():
    g = family_graph("gasket", 2)

    tm = transition_matrix(g)

    assert np.allclose(np.asarray(tm.P.sum(axis=1)).ravel(), 1.0)
    assert tm.pi.sum() == pytest.approx(1.0)
    assert np.allclose(tm.pi @ tm.P.toarray(), tm.pi)


@pytest.mark.parametrize("family, level", [("path", 5), ("gasket", 2), ("vicsek", 1), ("carpet", 0)])
def test_escape_probability_identity(family, level):
    g = family_graph(family, level)
    R = resistance_matrix(g).R

    for x, y in [(0, 1), (1, 0), (0, g.n - 1)]:
        assert hit_before_return_prob(g, x, y) == pytest.approx(1.0 / (g.mu[x] * R[x, y]), abs=1e-10)


def test_hitting_probabilities_on_path():
    g = family_graph("path", 4)

    h = hitting_probabilities(g, [4], [0])

    assert np.allclose(h, [0.0, 0.25, 0.5, 0.75, 1.0])


def test_path_hitting_time_is_squared_length():
    g = family_graph("path", 5)

    assert expected_hitting_time(g, 0, 5) == pytest.approx(25.0)
    assert commute_time(g, 0, 5) == pytest.approx(g.total_mass * 5)


@pytest.mark.parametrize("family, level", [("gasket", 2), ("vicsek", 1), ("wired_carpet", 1)])
def test_expected_return_time_is_kac(family, level):
    g = family_graph(family, level)

    for x in (0, g.n // 2, g.n - 1):
        assert expected_return_time(g, x) == pytest.approx(g.total_mass / g.mu[x], rel=1e-10)


def test_commute_time_identity():
    g = family_graph("gasket", 2)

    assert commute_time(g, 0, 7) == pytest.approx(g.total_mass * effective_resistance(g, 0, 7), rel=1e-9)


def test_same_vertex_is_rejected(triangle):
    with pytest.raises(SameVertex):
        expected_hitting_time(triangle, 1, 1)


def test_return_time_tail_on_triangle(triangle):
    law = return_time_tail(triangle, 0, 30)

    # tau^+ = 1 + Geometric(1/2) on {1, 2, ...}
    assert law.pmf[0] == 0.0
    assert law.pmf[1] == 0.0
    assert law.pmf[2] == pytest.approx(0.5)
    assert law.pmf[3] == pytest.approx(0.25)
    assert law.total_mass == pytest.approx(1.0)
    assert law.survival()[2] == pytest.approx(1.0)
    assert law.moment() == pytest.approx(3.0, abs=1e-6)


def test_return_time_tail_mean_matches_kac():
    g = family_graph("gasket", 1)

    law = return_time_tail(g, 0, 5_000)

    assert law.tail_mass < 1e-12
    assert law.moment() == pytest.approx(g.total_mass / g.mu[0], rel=1e-8)


def test_hitting_time_tail_starts_at_zero_on_target():
    g = family_graph("path", 3)

    assert hitting_time_tail(g, 2, [2], 10).pmf[0] == 1.0
    law = hitting_time_tail(g, 0, [3], 2_000)
    assert law.moment() == pytest.approx(9.0, rel=1e-8)


@pytest.mark.parametrize("horizon, error", [(0, RangeError), (MAX_HORIZON + 1, HorizonTooLarge)])
def test_horizon_limits(triangle, horizon, error):
    with pytest.raises(error):
        return_time_tail(triangle, 0, horizon)


def test_return_time_laplace(triangle):
    assert return_time_laplace(triangle, 0, 0.0) == 1.0
    theta = 0.3
    expected = sum(0.5 ** (k - 1) * math.exp(-theta * k) for k in range(2, 400))
    assert return_time_laplace(triangle, 0, theta, 400) == pytest.approx(expected, rel=1e-9)
    with pytest.raises(NegativeTheta):
        return_time_laplace(triangle, 0, -1.0)


def test_laplace_bound_constant_is_finite_and_nonnegative():
    g = family_graph("gasket", 2)

    c = laplace_bound_constant(g, 0, [0.001, 0.01, 0.1], horizon=20_000)

    assert 0.0 <= c < math.inf


@pytest.mark.parametrize("family, level, x, y", [("gasket", 2, 0, 5), ("vicsek", 1, 0, 2), ("carpet", 1, 3, 40)])
def test_excursion_law_matches_closed_form(family, level, x, y):
    g = family_graph(family, level)
    R = effective_resistance(g, x, y)

    law = excursion_visit_law(g, x, y, 200)

    assert law.pmf[0] == pytest.approx(1 - 1 / (g.mu[x] * R))
    assert law.total_mass == pytest.approx(1.0)
    assert excursion_mean(g, x, y) == pytest.approx(1 / g.mu[x], rel=1e-9)
    second = excursion_second_moment(g, x, y)
    assert second == pytest.approx(excursion_second_moment_formula(g.mu[x], g.mu[y], R), rel=1e-8)
    assert second <= 2 * R / g.mu[x]


def test_excursion_law_degenerate_case():
    g = family_graph("path", 3)

    law = excursion_visit_law(g, 1, 0, 10)

    # every visit to an endpoint is followed by a return
    assert law.meta["degenerate"]
    assert law.pmf[1] == pytest.approx(0.5)
    assert law.pmf[2:].sum() == pytest.approx(0.0)


def test_excursion_mgf_diverges_past_radius():
    g = family_graph("gasket", 1)

    assert excursion_mgf(g, 0, 4, 0.0) == pytest.approx(1.0)
    assert excursion_mgf(g, 0, 4, 1e3) == math.inf


def test_expected_cover_time_on_path_and_triangle(triangle):
    # path of length n from an end: n^2; triangle: 1 + 2
    assert expected_cover_time(family_graph("path", 4), 0) == pytest.approx(16.0)
    assert expected_cover_time(triangle, 0) == pytest.approx(3.0)


def test_expected_cover_time_budget():
    with pytest.raises(BudgetExceeded):
        expected_cover_time(family_graph("gasket", 2), 0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(min_value=0.2, max_value=5.0), min_size=2, max_size=7))
def test_kac_on_weighted_paths(weights):
    g = build_graph([(i, i + 1, w) for i, w in enumerate(weights)])

    for x in range(g.n):
        assert expected_return_time(g, x) == pytest.approx(g.total_mass / g.mu[x], rel=1e-8)
