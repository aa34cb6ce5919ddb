import math

import numpy as np
import pytest

from resistwalk.errors import (
    ExcessiveCensoring,
    InsufficientData,
    InsufficientLevels,
    RangeError,
    SameVertex,
)
from resistwalk.experiments import (
    GASKET_DF,
    MIN_TRIALS,
    TailCurve,
    carpet_rho_estimate,
    check_uvd,
    confidence_halfwidth,
    cover_time_scaling,
    empirical_cdf,
    estimate_exponents,
    gamma_moment_study,
    garsia_verification,
    gasket_gauge_weights,
    inverse_local_time_concentration,
    local_time_scaling,
    modulus_equicontinuity_gasket,
    relative_spread,
    representative_starts,
    return_time_tail_study,
    running_gamma_maximum,
    sup_local_time_tail,
    tail_curve_modulus,
    tail_curve_thm_a,
    tail_curve_thm_b,
    thm_b_bound,
    uniformity_ratio,
    wired_monotonicity_check,
)
from resistwalk.garsia import MetricContext, PowerVolume, exponential_profile, gamma_functional
from resistwalk.graphs import build_graph, family_graph
from resistwalk.resistance import resistance_matrix
from resistwalk.walk_sim import RngStream, resistance_weights, run_walk

GRID = (0.0, 0.5, 1.0, 2.0, 4.0)


def _curve(prob_est, grid=GRID, bound=None):
    prob_est = np.asarray(prob_est, dtype=float)
    return TailCurve(
        kind="test",
        graph="g",
        level=1,
        lambda_grid=np.asarray(grid, dtype=float),
        prob_est=prob_est,
        ci_halfwidth=confidence_halfwidth(prob_est, 100),
        n_trials=100,
        starts=[0],
        bound=None if bound is None else np.asarray(bound, dtype=float),
    )


def test_confidence_halfwidth():
    assert confidence_halfwidth(0.5, 100) == pytest.approx(0.098)
    assert confidence_halfwidth(0.0, 100) == 0.0


def test_tail_curve_helpers():
    curve = _curve([1.0, 0.5, 0.25, 0.0625, 0.0], bound=[1.0, 1.0, 0.1, 0.1, 0.1])

    assert curve.log_slope() == pytest.approx(-2 * math.log(2))
    assert curve.probability_at(2.0) == 0.0625
    assert curve.bound_violations() == 1
    assert list(curve.to_frame().columns) == ["lambda", "prob_est", "ci_halfwidth", "bound", "n_trials", "kind", "graph", "level"]
    with pytest.raises(RangeError):
        curve.probability_at(3.0)
    with pytest.raises(InsufficientData):
        curve.quantile(0.5)


def test_log_slope_needs_two_positive_points():
    with pytest.raises(InsufficientData):
        _curve([1.0, 0.0, 0.0, 0.0, 0.0]).log_slope()


def test_uniformity_ratio_and_relative_spread():
    a = _curve([1.0, 0.5, 0.2, 0.1, 0.0])
    b = _curve([1.0, 0.4, 0.1, 0.1, 0.0])

    assert uniformity_ratio([a, b], 1.0) == pytest.approx(2.0)
    assert uniformity_ratio([a, b], 4.0) == 1.0
    assert relative_spread([1.0, 2.0, 3.0]) == pytest.approx(1.0)


def test_representative_starts():
    assert representative_starts(family_graph("gasket", 2)) == list(range(15))
    big = family_graph("gasket", 3)

    starts = representative_starts(big)

    assert starts[:3] == [0, 1, 2]
    assert len(starts) == len(set(starts)) <= 7


def test_thm_a_curve_is_monotone_and_reproducible():
    first = tail_curve_thm_a("gasket", [1], T=1.0, lambda_grid=GRID, n_trials=MIN_TRIALS, seed=4)
    second = tail_curve_thm_a("gasket", [1], T=1.0, lambda_grid=GRID, n_trials=MIN_TRIALS, seed=4)

    curve = first[0]
    assert curve.prob_est[0] == 1.0
    assert np.all(np.diff(curve.prob_est) <= 0)
    assert np.array_equal(curve.prob_est, second[0].prob_est)
    assert curve.starts == list(range(6))
    assert curve.extra["steps"] == math.floor(curve.extra["steps"])


@pytest.mark.parametrize(
    "kwargs",
    [
        {"lambda_grid": (1.0, 0.5)},
        {"lambda_grid": (-1.0, 0.5)},
        {"n_trials": MIN_TRIALS - 1},
        {"T": 0.0},
    ],
)
def test_thm_a_rejects_bad_arguments(kwargs):
    with pytest.raises(RangeError):
        tail_curve_thm_a("gasket", [1], **kwargs)


def test_thm_b_bound_holds_on_short_path():
    (curve,) = tail_curve_thm_b("path", [3], L_trunc=1.0, n_trials=MIN_TRIALS, seed=1)

    assert np.allclose(curve.bound, thm_b_bound(curve.lambda_grid, 1.0))
    assert curve.extra["violations"] == 0
    assert curve.extra["uncapped_trials"] == 0


def test_thm_b_rejects_small_truncation():
    with pytest.raises(RangeError):
        tail_curve_thm_b("path", [3], L_trunc=0.5)


def test_modulus_curve_keeps_samples():
    (curve,) = tail_curve_modulus("gasket", [1], lambda_grid=GRID, n_trials=MIN_TRIALS, seed=2)

    assert curve.samples.shape == (6, MIN_TRIALS)
    assert curve.quantile(0.5) <= curve.quantile(0.99)


def test_sup_local_time_respects_occupation_floor():
    (curve,) = sup_local_time_tail("vicsek", [1], T=0.5, lambda_grid=GRID, n_trials=MIN_TRIALS, seed=3)

    assert curve.samples.min() >= curve.extra["floor"] - 1e-12


def test_gasket_gauge_weights_are_symmetric():
    W = gasket_gauge_weights(family_graph("gasket", 2))

    assert np.allclose(W, W.T)
    assert np.all(np.diag(W) == 0)
    assert np.all(W[~np.eye(15, dtype=bool)] > 0)


def test_gasket_modulus_records_quantile():
    (curve,) = modulus_equicontinuity_gasket([1], T=1.0, lambda_grid=GRID, n_trials=MIN_TRIALS, seed=5)

    assert curve.extra["steps"] == 5
    assert curve.extra["quantile_value"] == pytest.approx(curve.quantile(0.99))


def test_inverse_local_time_on_an_edge_is_zero():
    g = build_graph([(0, 1, 1.0)])

    curve = inverse_local_time_concentration(g, 0, 1, 3, lambda_grid=GRID, n_trials=MIN_TRIALS, seed=0)

    assert np.all(curve.samples == 0.0)
    assert curve.prob_est[0] == 1.0
    assert np.all(curve.prob_est[1:] == 0.0)
    assert curve.extra["violations"] == 0


def test_inverse_local_time_rejects_same_vertex():
    with pytest.raises(SameVertex):
        inverse_local_time_concentration(family_graph("path", 2), 1, 1, 1)


def test_return_time_tails_decay():
    report = return_time_tail_study("gasket", [1, 2])

    assert report.all_negative
    assert len(report.rows) == (6 + 15) * len(report.lambda_grid)
    assert set(report.to_frame().columns) == {"level", "start", "lambda", "value"}


def test_uvd_on_paths():
    report = check_uvd("path", [4, 8])

    assert report.metric == "graph"
    assert report.passed
    constants = report.constants()
    assert list(constants["c1"]) == pytest.approx([1.0, 1.0])
    assert list(constants["c2"]) == pytest.approx([2.0, 2.0])
    assert list(constants["c3"]) == pytest.approx([2.0, 2.0])


def test_uvd_needs_an_exponent_for_carpets():
    with pytest.raises(RangeError):
        check_uvd("carpet", [0])


def test_path_exponents():
    estimate = estimate_exponents("path", [64, 128])

    assert estimate.alpha_hat == pytest.approx(1.0, abs=0.1)
    assert estimate.beta_hat - estimate.alpha_hat == pytest.approx(1.0, abs=1e-9)


def test_gasket_volume_exponent():
    estimate = estimate_exponents("gasket", [3, 4, 5])

    assert estimate.alpha_hat == pytest.approx(GASKET_DF, abs=0.1)


def test_exponents_need_two_levels():
    with pytest.raises(InsufficientData):
        estimate_exponents("path", [64])


def test_carpet_resistance_grows():
    report = carpet_rho_estimate((0, 1))

    assert report.rho_hat > 1
    assert report.ratio_spread == 0.0
    with pytest.raises(InsufficientLevels):
        carpet_rho_estimate((0,))


def test_wiring_never_increases_resistance():
    assert wired_monotonicity_check(1) <= 1e-9


def test_empirical_cdf():
    assert list(empirical_cdf(np.array([1.0, 2.0, 2.0, 3.0]), np.array([0.0, 2.0, 3.0]))) == [0.0, 0.75, 1.0]


def test_local_time_scaling_report():
    report = local_time_scaling([0, 1], t_values=(1.0,), n_trials=MIN_TRIALS, seed=6)

    assert set(report.grids) == {"corner@t=1", "max@t=1", "occupation@t=1", "interpolated@t=1"}
    assert all(len(values) == 1 for values in report.ks.values())
    assert report.to_frame()["cdf"].max() == 1.0


def test_cover_time_scaling_on_small_gaskets():
    report = cover_time_scaling([0, 1], n_trials=MIN_TRIALS, seed=7)

    assert report.extra["censored_fraction"] == {"0": 0.0, "1": 0.0}
    assert report.means["cover"][0] == pytest.approx(3.0, abs=0.5)


def test_cover_time_scaling_reports_censoring():
    with pytest.raises(ExcessiveCensoring):
        cover_time_scaling([0], n_trials=MIN_TRIALS, seed=0, cap=1)


def test_successive_level_ks_bounds_the_grid_gap():
    report = cover_time_scaling([0, 1], n_trials=MIN_TRIALS, seed=8)

    (ks,) = report.ks["cover"]
    grid_gap = np.abs(report.cdfs["cover"][0] - report.cdfs["cover"][1]).max()
    assert 0.0 <= ks <= 1.0
    assert ks >= grid_gap - 1e-12


def test_running_gamma_matches_direct_evaluation():
    g = family_graph("gasket", 1)
    R = resistance_matrix(g)
    ctx = MetricContext.from_matrix(R.rescaled().value, g.mu)
    profile = exponential_profile(0.5, PowerVolume(1.0))
    steps = 60

    running = running_gamma_maximum(g, 0, steps, RngStream(9), resistance_weights(R), 1.0 / R.r_diam, 0.5)

    path = run_walk(g, 0, steps, RngStream(9)).trajectory
    counts = np.zeros(g.n)
    direct = g.total_mass**2
    for x in path[:steps]:
        counts[x] += 1
        direct = max(direct, gamma_functional(g, ctx, counts / g.mu / R.r_diam, profile))
    assert running == pytest.approx(direct, rel=1e-10)


def test_gamma_moment_is_at_least_one():
    report = gamma_moment_study([0, 1], T=0.5, n_trials=20, seed=1)

    assert all(mean >= 1.0 for mean in report.means)
    assert report.to_dict()["c_psi"] == 0.25


def test_garsia_verification_on_small_gasket():
    report = garsia_verification(level=1, n_functions=5, n_snapshots=3, seed=0)

    assert report.passed
    assert report.tabulated == 8
    assert report.pairs_checked == 8 * 6 * 5


@pytest.mark.slow
def test_thm_b_bound_with_full_trial_count():
    curves = tail_curve_thm_b("gasket", [1, 2], L_trunc=1.0, n_trials=2_000, seed=11)

    assert all(curve.extra["violations"] == 0 for curve in curves)


@pytest.mark.slow
def test_gasket_and_vicsek_volume_growth_is_uniform():
    gasket = check_uvd("gasket", [1, 2, 3, 4])
    vicsek = check_uvd("vicsek", [1, 2, 3])

    for report in (gasket, vicsek):
        assert report.passed
        constants = report.constants()
        assert constants["c1"].max() <= 2 * constants["c1"].min()
        assert constants["c2"].max() <= 2 * constants["c2"].min()


@pytest.mark.slow
def test_gasket_exponents():
    estimate = estimate_exponents("gasket", [3, 4, 5, 6])

    assert estimate.alpha_hat == pytest.approx(GASKET_DF, abs=0.1)
    assert estimate.beta_hat - estimate.alpha_hat == pytest.approx(math.log(5 / 3) / math.log(2), abs=0.1)


@pytest.mark.slow
def test_vicsek_exponents():
    estimate = estimate_exponents("vicsek", [2, 3, 4])

    assert estimate.alpha_hat == pytest.approx(math.log(5) / math.log(3), abs=0.1)
    assert estimate.beta_hat == pytest.approx(estimate.alpha_hat + 1, abs=0.1)


@pytest.mark.slow
def test_gasket_tails_decay_uniformly_across_levels():
    for curves in (
        tail_curve_thm_a("gasket", [1, 2, 3], n_trials=2_000, seed=31),
        tail_curve_modulus("gasket", [1, 2, 3], n_trials=2_000, seed=32),
    ):
        assert all(curve.log_slope() < 0 for curve in curves)
        assert uniformity_ratio(curves, 1.0) <= 3.0


@pytest.mark.slow
def test_gasket_modulus_quantiles_are_stable():
    curves = modulus_equicontinuity_gasket([1, 2, 3, 4], n_trials=1_000, seed=33)

    assert relative_spread([curve.extra["quantile_value"] for curve in curves]) < 0.5


@pytest.mark.slow
def test_cover_time_scaling_settles():
    report = cover_time_scaling([2, 3, 4], n_trials=1_000, seed=34)

    means = report.means["cover"]
    assert abs(means[4] - means[3]) / means[3] < 0.1
    assert report.ks_decreasing("cover")
