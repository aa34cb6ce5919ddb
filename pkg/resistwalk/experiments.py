"""Desk-scale studies of local-time tails, volume growth and scaling across graph levels.

Every stochastic study draws trial ``j`` for level ``i`` and start ``z`` from the
stream keyed ``(study, i, z, j)``, so a report replays exactly from its seed
whatever the worker count.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .errors import (
    BudgetExceeded,
    CapExceeded,
    ExcessiveCensoring,
    GammaOverflow,
    InsufficientData,
    InsufficientLevels,
    InvariantViolation,
    RangeError,
    SameVertex,
)
from .exact_chain import return_time_tail
from .garsia import (
    LogLinearIntegrals,
    MetricContext,
    PowerVolume,
    bound_violations,
    gamma_functional,
    garsia_bound_matrix,
    garsia_integral_bounds,
    uvd_profile,
)
from .graphs import WeightedGraph, boundary_vertices, family_graph, hop_distance_matrix, wire_map
from .resistance import effective_resistance, resistance_matrix, set_resistance
from .walk_sim import (
    CHECKPOINT_EVERY,
    MAX_WALK_STEPS,
    LocalTimeField,
    RngStream,
    cover_time,
    default_cover_cap,
    interpolate_local_time,
    modulus_weights,
    occupation_integral,
    pair_running_maximum,
    resistance_weights,
    run_trials,
    run_walk,
    trajectory,
)

LAMBDA_GRID = tuple(0.5 * k for k in range(13))
RETURN_LAMBDA_GRID = tuple(0.5 * k for k in range(1, 9))
DEFAULT_TRIALS = 2_000
MIN_TRIALS = 100
SMALL_GRAPH = 30
CDF_GRID_POINTS = 200
CI_Z = 1.96
CENSORING_LIMIT = 0.01
UVD_FACTOR = 2.0
MONOTONICITY_TOL = 1e-9

GASKET_DF = math.log(3) / math.log(2)
GASKET_DW = math.log(5) / math.log(2)
GASKET_VOLUME_EXPONENT = GASKET_DF / (GASKET_DW - GASKET_DF)
GASKET_GAUGE_EXPONENT = math.log(5 / 3) / (2 * math.log(2))
VICSEK_EXPONENT = math.log(5) / math.log(3)

# exponent of v and the metric it is measured in
UVD_DEFAULTS = {
    "path": (1.0, "graph"),
    "vicsek": (VICSEK_EXPONENT, "graph"),
    "gasket": (GASKET_VOLUME_EXPONENT, "resistance"),
}
EXPONENT_BASES = {"path": 2, "gasket": 2, "vicsek": 3, "carpet": 3, "wired_carpet": 3}

_STUDY_KEYS = {
    "thm-a": 1,
    "thm-b": 2,
    "sup-localtime": 3,
    "modulus": 4,
    "gasket-modulus": 5,
    "local-time-scaling": 6,
    "cover-time": 7,
    "inverse-local-time": 8,
    "gamma-moment": 9,
    "garsia": 10,
}


def confidence_halfwidth(p, n: int) -> np.ndarray:
    """Normal-approximation 95% half-width of a binomial proportion."""
    p = np.asarray(p, dtype=float)
    return CI_Z * np.sqrt(p * (1.0 - p) / n)


def _lambda_grid(values: Sequence[float]) -> np.ndarray:
    grid = np.asarray(values, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise RangeError("lambda grid must be a nonempty sequence")
    if np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise RangeError(f"lambda grid must be nonnegative and increasing, got {grid.tolist()}")
    return grid


def _check_trials(n_trials: int) -> None:
    if n_trials < MIN_TRIALS:
        raise RangeError(f"n_trials must be at least {MIN_TRIALS}, got {n_trials}")


def _check_positive(name: str, value: float) -> None:
    if not value > 0:
        raise RangeError(f"{name} must be positive, got {value}")


def _study_key(kind: str, g: WeightedGraph, start: int) -> tuple[int, int, int]:
    return _STUDY_KEYS[kind], int(g.level or 0), start


def representative_starts(g: WeightedGraph) -> list[int]:
    """All vertices on small graphs, otherwise symmetry representatives.

    Gaskets use the corners, the side midpoints and the vertex nearest the
    centroid; other families use vertex 0, a vertex of maximal degree and the
    vertex nearest the centroid of the coordinates.
    """
    if g.n <= SMALL_GRAPH:
        return list(range(g.n))

    def nearest(points: np.ndarray, target: tuple[float, float]) -> int:
        distances = np.linalg.norm(points - np.asarray(target), axis=1)
        return int(np.nanargmin(distances))

    if g.family == "gasket":
        points = g.points()
        h = math.sqrt(3) / 2
        targets = [(0.5, 0.0), (0.25, h / 2), (0.75, h / 2), (0.5, h / 3)]
        starts = list(g.meta["corners"]) + [nearest(points, t) for t in targets]
    else:
        starts = [0, int(np.argmax(g.degrees))]
        if g.coords is not None:
            points = g.points()
            starts.append(nearest(points, tuple(np.nanmean(points, axis=0))))
    return list(dict.fromkeys(starts))


# Tail curves -----------------------------------------------------------------


@dataclass
class TailCurve:
    """Estimated tail probabilities of one statistic on one graph.

    ``prob_est[k]`` is the largest estimate over the start vertices (and over
    vertex pairs for pairwise statistics) of P(statistic >= lambda_grid[k]).
    """

    kind: str
    graph: str
    level: int | None
    lambda_grid: np.ndarray
    prob_est: np.ndarray
    ci_halfwidth: np.ndarray
    n_trials: int
    starts: list[int]
    bound: np.ndarray | None = None
    samples: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def log_slope(self) -> float:
        """Least-squares slope of log P against lambda over the positive estimates."""
        usable = (self.lambda_grid > 0) & (self.prob_est > 0)
        if np.count_nonzero(usable) < 2:
            raise InsufficientData(f"{self.kind} curve on {self.graph} has fewer than two positive estimates")
        slope, _ = np.polyfit(self.lambda_grid[usable], np.log(self.prob_est[usable]), 1)
        return float(slope)

    def quantile(self, q: float) -> float:
        """Largest per-start empirical quantile of the statistic."""
        if self.samples is None:
            raise InsufficientData(f"{self.kind} curve on {self.graph} kept no samples")
        return float(np.max(np.quantile(self.samples, q, axis=-1)))

    def probability_at(self, lam: float) -> float:
        matches = np.flatnonzero(np.isclose(self.lambda_grid, lam))
        if matches.size == 0:
            raise RangeError(f"lambda {lam} is not on the grid of {self.kind} curve")
        return float(self.prob_est[matches[0]])

    def bound_violations(self) -> int:
        """Grid points where the estimate minus its half-width exceeds the bound."""
        if self.bound is None:
            return 0
        return int(np.count_nonzero(self.prob_est - self.ci_halfwidth > self.bound))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "lambda": self.lambda_grid,
                "prob_est": self.prob_est,
                "ci_halfwidth": self.ci_halfwidth,
            }
        )
        if self.bound is not None:
            frame["bound"] = self.bound
        frame["n_trials"] = self.n_trials
        frame["kind"] = self.kind
        frame["graph"] = self.graph
        frame["level"] = self.level
        return frame

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "graph": self.graph,
            "level": self.level,
            "lambda_grid": self.lambda_grid.tolist(),
            "prob_est": self.prob_est.tolist(),
            "ci_halfwidth": self.ci_halfwidth.tolist(),
            "bound": None if self.bound is None else self.bound.tolist(),
            "n_trials": self.n_trials,
            "starts": list(self.starts),
            "extra": dict(self.extra),
        }


def uniformity_ratio(curves: Sequence[TailCurve], lam: float) -> float:
    """Largest over smallest estimate at ``lam`` across curves."""
    probs = [curve.probability_at(lam) for curve in curves]
    if min(probs) == 0:
        return math.inf if max(probs) > 0 else 1.0
    return max(probs) / min(probs)


def relative_spread(values: Sequence[float]) -> float:
    """(max - min) / mean."""
    values = np.asarray(values, dtype=float)
    return float((values.max() - values.min()) / values.mean())


def _trial_pair_maxima(stream: RngStream, index: int, *, g, start, steps, weights, scale, cap):
    return pair_running_maximum(g, start, steps, stream, weights, scale=scale, cap=cap)


def _trial_max_pair(stream: RngStream, index: int, *, g, start, steps, weights, scale):
    return pair_running_maximum(g, start, steps, stream, weights, scale=scale).maximum


def _trial_sup_local_time(stream: RngStream, index: int, *, g, start, steps, scale):
    return float(run_walk(g, start, steps, stream, retain=False).local_times.max() * scale)


def _pairwise_curve(
    kind: str,
    g: WeightedGraph,
    starts: Sequence[int],
    grid: np.ndarray,
    n_trials: int,
    seed: int,
    trial: Callable,
    workers: int,
    bound: np.ndarray | None = None,
) -> TailCurve:
    off = ~np.eye(g.n, dtype=bool)
    best = np.zeros(len(grid))
    worst = [starts[0]] * len(grid)
    uncapped = 0
    for z in starts:
        results = run_trials(partial(trial, start=z), n_trials, seed, _study_key(kind, g, z), workers)
        exceed = np.zeros((len(grid), g.n, g.n), dtype=np.int64)
        for maxima in results:
            exceed += maxima.matrix[None, :, :] >= grid[:, None, None]
            uncapped += not maxima.all_capped
        probs = exceed[:, off].max(axis=1) / n_trials
        for k in np.flatnonzero(probs > best):
            best[k], worst[k] = probs[k], z
    return TailCurve(
        kind=kind,
        graph=g.label,
        level=g.level,
        lambda_grid=grid,
        prob_est=best,
        ci_halfwidth=confidence_halfwidth(best, n_trials),
        n_trials=n_trials,
        starts=list(starts),
        bound=bound,
        extra={"worst_start": worst, "uncapped_trials": uncapped},
    )


def _global_curve(
    kind: str,
    g: WeightedGraph,
    starts: Sequence[int],
    grid: np.ndarray,
    n_trials: int,
    seed: int,
    trial: Callable,
    workers: int,
    bound: np.ndarray | None = None,
) -> TailCurve:
    samples = np.empty((len(starts), n_trials))
    for row, z in enumerate(starts):
        samples[row] = run_trials(partial(trial, start=z), n_trials, seed, _study_key(kind, g, z), workers)
    per_start = (samples[:, :, None] >= grid[None, None, :]).mean(axis=1)
    best = per_start.max(axis=0)
    worst = [starts[int(i)] for i in per_start.argmax(axis=0)]
    return TailCurve(
        kind=kind,
        graph=g.label,
        level=g.level,
        lambda_grid=grid,
        prob_est=best,
        ci_halfwidth=confidence_halfwidth(best, n_trials),
        n_trials=n_trials,
        starts=list(starts),
        bound=bound,
        samples=samples,
        extra={"worst_start": worst},
    )


def tail_curve_thm_a(
    family: str,
    levels: Sequence[int],
    T: float = 1.0,
    lambda_grid: Sequence[float] = LAMBDA_GRID,
    n_trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    *,
    workers: int = 1,
    starts: Sequence[int] | None = None,
) -> list[TailCurve]:
    """P(max_{t <= T m r} r^{-1}|L_t(x) - L_t(y)| >= lambda sqrt(R~(x, y))), worst pair and start."""
    _check_positive("T", T)
    _check_trials(n_trials)
    grid = _lambda_grid(lambda_grid)
    curves = []
    for level in levels:
        started = time.perf_counter()
        g = family_graph(family, level)
        R = resistance_matrix(g)
        steps = math.floor(T * g.total_mass * R.r_diam)
        trial = partial(
            _trial_pair_maxima, g=g, steps=steps, weights=resistance_weights(R), scale=1.0 / R.r_diam, cap=math.inf
        )
        curve = _pairwise_curve("thm-a", g, starts or representative_starts(g), grid, n_trials, seed, trial, workers)
        curve.extra.pop("uncapped_trials")
        curve.extra.update({"T": T, "steps": steps})
        curves.append(curve)
        logging.info("thm-a tail on %s: %s steps, %.1fs", g.label, steps, time.perf_counter() - started)
    return curves


def thm_b_bound(grid: np.ndarray, L_trunc: float) -> np.ndarray:
    return 2.0 * np.exp(0.5 - np.square(grid) / (8.0 * L_trunc))


def tail_curve_thm_b(
    family: str,
    levels: Sequence[int],
    L_trunc: float = 1.0,
    lambda_grid: Sequence[float] = LAMBDA_GRID,
    n_trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    *,
    workers: int = 1,
    starts: Sequence[int] | None = None,
    max_steps: int | None = None,
) -> list[TailCurve]:
    """Tail of sup_t |L ^ (L_t(x)/r) - L ^ (L_t(y)/r)| / sqrt(R~(x, y)) against 2 exp(1/2 - lambda^2 / 8L).

    A walk stops once every truncated local time has reached ``L_trunc``;
    otherwise it runs for ``max_steps`` (by default the cover-time cap times
    ceil(L_trunc)).
    """
    if L_trunc < 1:
        raise RangeError(f"L_trunc must be at least 1, got {L_trunc}")
    _check_trials(n_trials)
    grid = _lambda_grid(lambda_grid)
    curves = []
    for level in levels:
        started = time.perf_counter()
        g = family_graph(family, level)
        R = resistance_matrix(g)
        steps = max_steps or default_cover_cap(g, R.r_diam) * math.ceil(L_trunc)
        if steps > MAX_WALK_STEPS:
            raise BudgetExceeded(f"{steps} steps per trial on {g.label} exceeds {MAX_WALK_STEPS}")
        trial = partial(
            _trial_pair_maxima, g=g, steps=steps, weights=resistance_weights(R), scale=1.0 / R.r_diam, cap=L_trunc
        )
        curve = _pairwise_curve(
            "thm-b", g, starts or representative_starts(g), grid, n_trials, seed, trial, workers, thm_b_bound(grid, L_trunc)
        )
        curve.extra.update({"L_trunc": L_trunc, "max_steps": steps, "violations": curve.bound_violations()})
        if curve.extra["uncapped_trials"]:
            logging.warning(
                "%s of %s thm-b walks on %s stopped before every vertex reached L=%s",
                curve.extra["uncapped_trials"],
                n_trials * len(curve.starts),
                g.label,
                L_trunc,
            )
        curves.append(curve)
        logging.info("thm-b tail on %s (L=%s): %.1fs", g.label, L_trunc, time.perf_counter() - started)
    return curves


def tail_curve_modulus(
    family: str,
    levels: Sequence[int],
    T: float = 1.0,
    lambda_grid: Sequence[float] = LAMBDA_GRID,
    n_trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    *,
    workers: int = 1,
    starts: Sequence[int] | None = None,
) -> list[TailCurve]:
    """Tail of the modulus statistic max_{x != y, t <= T m r} r^{-1}|dL| / sqrt(R~(1 + ln 1/R~))."""
    _check_positive("T", T)
    _check_trials(n_trials)
    grid = _lambda_grid(lambda_grid)
    curves = []
    for level in levels:
        g = family_graph(family, level)
        R = resistance_matrix(g)
        steps = math.floor(T * g.total_mass * R.r_diam)
        trial = partial(_trial_max_pair, g=g, steps=steps, weights=modulus_weights(R), scale=1.0 / R.r_diam)
        curve = _global_curve("modulus", g, starts or representative_starts(g), grid, n_trials, seed, trial, workers)
        curve.extra.update({"T": T, "steps": steps})
        curves.append(curve)
        logging.info("Modulus tail on %s: %s steps", g.label, steps)
    return curves


def sup_local_time_tail(
    family: str,
    levels: Sequence[int],
    T: float = 1.0,
    lambda_grid: Sequence[float] = LAMBDA_GRID,
    n_trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    *,
    workers: int = 1,
    starts: Sequence[int] | None = None,
) -> list[TailCurve]:
    """Tail of max_x r^{-1} L_{T m r}(x).

    The occupation identity forces the statistic to be at least
    floor(T m r) / (m r), recorded as ``extra["floor"]``.
    """
    _check_positive("T", T)
    _check_trials(n_trials)
    grid = _lambda_grid(lambda_grid)
    curves = []
    for level in levels:
        g = family_graph(family, level)
        R = resistance_matrix(g)
        steps = math.floor(T * g.total_mass * R.r_diam)
        trial = partial(_trial_sup_local_time, g=g, steps=steps, scale=1.0 / R.r_diam)
        curve = _global_curve("sup-localtime", g, starts or representative_starts(g), grid, n_trials, seed, trial, workers)
        curve.extra.update({"T": T, "steps": steps, "floor": steps / (g.total_mass * R.r_diam)})
        curves.append(curve)
        logging.info("Sup local-time tail on %s: %s steps", g.label, steps)
    return curves


def gasket_gauge_weights(g: WeightedGraph) -> np.ndarray:
    """1 / (|x - y|^{ln(5/3) / 2 ln 2} (1 + ln 1/|x - y|)^{1/2}) in the Euclidean metric."""
    points = g.points()
    distance = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        gauge = np.power(distance, GASKET_GAUGE_EXPONENT) * np.sqrt(1.0 + np.log(1.0 / distance))
        W = np.where(distance > 0, 1.0 / gauge, 0.0)
    np.fill_diagonal(W, 0.0)
    return W


def modulus_equicontinuity_gasket(
    levels: Sequence[int],
    T: float = 1.0,
    lambda_grid: Sequence[float] = LAMBDA_GRID,
    n_trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    *,
    workers: int = 1,
    quantile: float = 0.99,
) -> list[TailCurve]:
    """Tail of max over pairs and t <= 5^i T of (3/5)^i |dL| over the Euclidean gauge."""
    _check_positive("T", T)
    _check_trials(n_trials)
    grid = _lambda_grid(lambda_grid)
    curves = []
    for level in levels:
        g = family_graph("gasket", level)
        steps = math.floor(5**level * T)
        trial = partial(_trial_max_pair, g=g, steps=steps, weights=gasket_gauge_weights(g), scale=(3 / 5) ** level)
        curve = _global_curve("gasket-modulus", g, representative_starts(g), grid, n_trials, seed, trial, workers)
        curve.extra.update({"T": T, "steps": steps, "quantile": quantile, "quantile_value": curve.quantile(quantile)})
        curves.append(curve)
        logging.info("Gasket modulus on level %s: q%.2f = %.4g", level, quantile, curve.extra["quantile_value"])
    return curves


def _inverse_local_time_trial(stream: RngStream, index: int, *, g, start, y, visits, mu_x, mu_y):
    seen = -1
    count_y = 0
    for t, z in enumerate(trajectory(g, start, stream)):
        if z == start:
            seen += 1
            if seen == visits:
                return visits / mu_x - count_y / mu_y
        elif z == y:
            count_y += 1
        if t >= MAX_WALK_STEPS:
            raise BudgetExceeded(f"no {visits}-th return to {start} within {MAX_WALK_STEPS} steps")
    raise AssertionError("unreachable")


def inverse_local_time_concentration(
    g: WeightedGraph,
    x: int,
    y: int,
    i: int,
    lambda_grid: Sequence[float] = LAMBDA_GRID,
    n_trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    *,
    workers: int = 1,
) -> TailCurve:
    """P_x(L_{tau_x(i)}(x) - L_{tau_x(i)}(y) >= lambda) against exp(-lambda^2 mu_x / (4 i R(x, y)))."""
    x, y = g.check_vertex(x), g.check_vertex(y)
    if x == y:
        raise SameVertex(f"x and y are both {x}")
    if i < 1:
        raise RangeError(f"i must be at least 1, got {i}")
    _check_trials(n_trials)
    grid = _lambda_grid(lambda_grid)
    R = effective_resistance(g, x, y)
    mu_x, mu_y = float(g.mu[x]), float(g.mu[y])
    bound = np.exp(-np.square(grid) * mu_x / (4.0 * i * R))
    trial = partial(_inverse_local_time_trial, g=g, y=y, visits=i, mu_x=mu_x, mu_y=mu_y)
    curve = _global_curve("inverse-local-time", g, [x], grid, n_trials, seed, trial, workers, bound)
    curve.extra.update({"x": x, "y": y, "i": i, "R": R, "violations": curve.bound_violations()})
    return curve


# Exact return-time tails ---------------------------------------------------------


@dataclass
class ReturnTailReport:
    family: str
    lambda_grid: np.ndarray
    rows: list[dict]
    slopes: dict[tuple[int, int], float]

    @property
    def all_negative(self) -> bool:
        return all(slope < 0 for slope in self.slopes.values())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["level", "start", "lambda", "value"])

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "lambda_grid": self.lambda_grid.tolist(),
            "rows": list(self.rows),
            "slopes": [{"level": lv, "start": z, "slope": s} for (lv, z), s in self.slopes.items()],
        }


def return_time_tail_study(
    family: str,
    levels: Sequence[int],
    lambda_grid: Sequence[float] = RETURN_LAMBDA_GRID,
) -> ReturnTailReport:
    """mu_x r P_x(tau_x^+ >= lambda m r) from the exact first-passage law."""
    grid = _lambda_grid(lambda_grid)
    rows: list[dict] = []
    slopes: dict[tuple[int, int], float] = {}
    for level in levels:
        g = family_graph(family, level)
        r_diam = resistance_matrix(g).r_diam
        scale = g.total_mass * r_diam
        thresholds = np.ceil(grid * scale).astype(np.int64)
        for z in representative_starts(g):
            survival = return_time_tail(g, z, int(thresholds.max()) + 1).survival()
            values = float(g.mu[z]) * r_diam * survival[np.minimum(thresholds, len(survival) - 1)]
            rows.extend({"level": level, "start": z, "lambda": float(lam), "value": float(v)} for lam, v in zip(grid, values))
            positive = values > 0
            if np.count_nonzero(positive) >= 2:
                slopes[(level, z)] = float(np.polyfit(grid[positive], np.log(values[positive]), 1)[0])
            else:
                slopes[(level, z)] = math.nan
        logging.info("Return-time tails on %s over %s starts", g.label, len(representative_starts(g)))
    return ReturnTailReport(family=family, lambda_grid=grid, rows=rows, slopes=slopes)


# Volume growth -------------------------------------------------------------------


@dataclass
class UvdReport:
    family: str
    metric: str
    exponent: float
    factor: float
    per_level: list[dict]
    passed: bool

    def constants(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{k: entry[k] for k in ("level", "c1", "c2", "c3", "passed")} for entry in self.per_level]
        )

    def to_frame(self) -> pd.DataFrame:
        frames = [
            pd.DataFrame({"level": entry["level"], "radius": entry["radii"], "min_volume": entry["min_volumes"]})
            for entry in self.per_level
        ]
        return pd.concat(frames, ignore_index=True)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "metric": self.metric,
            "exponent": self.exponent,
            "factor": self.factor,
            "passed": self.passed,
            "levels": [
                {**entry, "radii": list(map(float, entry["radii"])), "min_volumes": list(map(float, entry["min_volumes"]))}
                for entry in self.per_level
            ],
        }


def _metric_matrix(g: WeightedGraph, metric: str) -> np.ndarray:
    if metric == "resistance":
        return np.array(resistance_matrix(g).R)
    if metric == "graph":
        return hop_distance_matrix(g).astype(float)
    raise RangeError(f"metric must be 'resistance' or 'graph', got {metric!r}")


def check_uvd(
    family: str,
    levels: Sequence[int],
    v_spec: float | None = None,
    *,
    metric: str | None = None,
    factor: float = UVD_FACTOR,
) -> UvdReport:
    """Fit c1, c2, c3 of v(r) = r^{v_spec} on every level.

    c1 is the largest constant with c1 v(r) <= min_x mu(B(x, r)) over the
    realized radii, c2 the smallest with m <= c2 v(diameter) and c3 the
    doubling ratio sup v(2r)/v(r). The family passes when each level does and
    c1, c2 vary across levels by at most ``factor``.
    """
    default_exponent, default_metric = UVD_DEFAULTS.get(family, (None, "resistance"))
    exponent = v_spec if v_spec is not None else default_exponent
    if exponent is None:
        raise RangeError(f"no default volume exponent for {family!r}; pass v_spec")
    metric = metric or default_metric
    shape = PowerVolume(exponent)

    per_level = []
    for level in levels:
        g = family_graph(family, level)
        ctx = MetricContext.from_matrix(_metric_matrix(g, metric), g.mu, label=f"{g.label}/{metric}")
        c1 = ctx.fit_volume_constant(shape)
        c2 = g.total_mass / float(shape(ctx.diameter))
        c3 = float(np.max(shape(2.0 * ctx.radii) / shape(ctx.radii)))
        passed = c1 > 0 and ctx.verify_volume_bound(shape.with_constant(c1)) and math.isfinite(c3)
        per_level.append(
            {
                "level": level,
                "radii": ctx.radii,
                "min_volumes": ctx.ball_volumes,
                "c1": c1,
                "c2": c2,
                "c3": c3,
                "passed": bool(passed),
            }
        )
        logging.info("UVD on %s (%s metric): c1=%.4g c2=%.4g c3=%.4g", g.label, metric, c1, c2, c3)

    c1s = [entry["c1"] for entry in per_level]
    c2s = [entry["c2"] for entry in per_level]
    uniform = max(c1s) <= factor * min(c1s) and max(c2s) <= factor * min(c2s)
    passed = uniform and all(entry["passed"] for entry in per_level)
    return UvdReport(family=family, metric=metric, exponent=exponent, factor=factor, per_level=per_level, passed=passed)


@dataclass
class ExponentEstimate:
    alpha_hat: float
    beta_hat: float
    alpha_residual: float
    beta_residual: float
    points: pd.DataFrame

    def to_dict(self) -> dict:
        return {
            "alpha_hat": self.alpha_hat,
            "beta_hat": self.beta_hat,
            "alpha_residual": self.alpha_residual,
            "beta_residual": self.beta_residual,
            "points": self.points.to_dict(orient="records"),
        }


def _fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(np.std(y - (slope * x + intercept)))


def estimate_exponents(family: str, levels: Sequence[int], base: int | None = None) -> ExponentEstimate:
    """Pooled log-log fits of min_x mu(B(x, r)) ~ r^alpha and R ~ d^{beta - alpha}.

    Radii are the powers of ``base`` from base^2 up to half the hop diameter;
    balls are closed in the hop metric and R is averaged over pairs at hop
    distance exactly r.
    """
    if len(levels) < 2:
        raise InsufficientData(f"need at least two levels, got {list(levels)}")
    base = base or EXPONENT_BASES[family]
    rows = []
    for level in levels:
        g = family_graph(family, level)
        hops = hop_distance_matrix(g)
        R = resistance_matrix(g).R
        diameter = int(hops.max())
        r = base**2
        while r <= diameter / 2:
            volume = float(((hops <= r) @ g.mu).min())
            at_distance = hops == r
            if at_distance.any():
                rows.append({"level": level, "radius": r, "volume": volume, "resistance": float(R[at_distance].mean())})
            r *= base
    points = pd.DataFrame(rows, columns=["level", "radius", "volume", "resistance"])
    if len(points) < 3:
        raise InsufficientData(f"only {len(points)} radii for {family} levels {list(levels)}")

    log_r = np.log(points["radius"].to_numpy(dtype=float))
    alpha, alpha_residual = _fit(log_r, np.log(points["volume"].to_numpy()))
    gap, beta_residual = _fit(log_r, np.log(points["resistance"].to_numpy()))
    logging.info("Exponents for %s: alpha=%.4f beta=%.4f from %s points", family, alpha, alpha + gap, len(points))
    return ExponentEstimate(
        alpha_hat=alpha,
        beta_hat=alpha + gap,
        alpha_residual=alpha_residual,
        beta_residual=beta_residual,
        points=points,
    )


# Scaling across levels -------------------------------------------------------------


@dataclass
class ScalingReport:
    """Empirical CDFs of rescaled functionals per level on shared grids."""

    quantity: str
    levels: list[int]
    n_trials: int
    grids: dict[str, np.ndarray]
    cdfs: dict[str, dict[int, np.ndarray]]
    ks: dict[str, list[float]]
    means: dict[str, dict[int, float]]
    extra: dict = field(default_factory=dict)

    def ks_decreasing(self, key: str) -> bool:
        values = self.ks[key]
        return all(b <= a for a, b in zip(values, values[1:]))

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"functional": key, "level": level, "value": float(x), "cdf": float(F)}
            for key, per_level in self.cdfs.items()
            for level, cdf in per_level.items()
            for x, F in zip(self.grids[key], cdf)
        ]
        return pd.DataFrame(rows, columns=["functional", "level", "value", "cdf"])

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "levels": list(self.levels),
            "n_trials": self.n_trials,
            "grids": {k: v.tolist() for k, v in self.grids.items()},
            "cdfs": {k: {str(lv): c.tolist() for lv, c in per.items()} for k, per in self.cdfs.items()},
            "ks": {k: list(v) for k, v in self.ks.items()},
            "means": {k: {str(lv): m for lv, m in per.items()} for k, per in self.means.items()},
            "extra": dict(self.extra),
        }


def empirical_cdf(samples: np.ndarray, grid: np.ndarray) -> np.ndarray:
    ordered = np.sort(np.asarray(samples, dtype=float))
    return np.searchsorted(ordered, grid, side="right") / len(ordered)


def _summarize(
    quantity: str,
    samples: dict[str, dict[int, np.ndarray]],
    levels: list[int],
    n_trials: int,
) -> ScalingReport:
    grids, cdfs, ks, means = {}, {}, {}, {}
    for key, per_level in samples.items():
        pooled = np.concatenate([per_level[level] for level in levels])
        grid = np.linspace(pooled.min(), pooled.max(), CDF_GRID_POINTS)
        grids[key] = grid
        cdfs[key] = {level: empirical_cdf(per_level[level], grid) for level in levels}
        ks[key] = [float(stats.ks_2samp(per_level[a], per_level[b]).statistic) for a, b in zip(levels, levels[1:])]
        means[key] = {level: float(np.mean(per_level[level])) for level in levels}
    return ScalingReport(quantity=quantity, levels=levels, n_trials=n_trials, grids=grids, cdfs=cdfs, ks=ks, means=means)


LOCAL_TIME_FUNCTIONALS = ("corner", "max", "occupation", "interpolated")
INTERPOLATION_POINT = (1.0 / 3.0, 0.0)


def smooth_test_function(points: np.ndarray) -> np.ndarray:
    return np.exp(-np.sum(np.square(points - np.array([0.5, 0.3])), axis=1))


def _local_time_trial(stream: RngStream, index: int, *, g, step_counts, smooth):
    field_ = run_walk(g, 0, max(step_counts), stream)
    path = field_.trajectory
    factor = 6.0 * (3 / 5) ** g.level
    rows = []
    for steps in step_counts:
        counts = np.bincount(path[:steps], minlength=g.n)
        snapshot = LocalTimeField(
            mu=g.mu, counts=counts, t=steps, position=int(path[steps]), uncovered=0, trajectory=path[: steps + 1]
        )
        occupation = occupation_integral(snapshot, smooth) / 5**g.level
        rescaled = factor * snapshot.local_times
        rows.append(
            (
                rescaled[0],
                rescaled.max(),
                occupation,
                interpolate_local_time(g, rescaled, INTERPOLATION_POINT),
            )
        )
    return np.array(rows)


def local_time_scaling(
    levels: Sequence[int],
    t_values: Sequence[float] = (0.5, 1.0),
    n_trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    *,
    workers: int = 1,
) -> ScalingReport:
    """CDFs of functionals of 6 (3/5)^i L_{5^i t} on gaskets started at the corner (0, 0).

    Functionals are the value at the starting corner, the maximum over
    vertices, the occupation integral 5^{-i} sum_x f(x) L(x) mu_x of a fixed
    smooth f and the interpolated value at (1/3, 0).
    """
    levels = list(levels)
    if not t_values or min(t_values) <= 0:
        raise RangeError(f"t_values must be positive, got {list(t_values)}")
    _check_trials(n_trials)
    samples: dict[str, dict[int, np.ndarray]] = {}
    for level in levels:
        started = time.perf_counter()
        g = family_graph("gasket", level)
        step_counts = [round(5**level * t) for t in t_values]
        trial = partial(_local_time_trial, g=g, step_counts=step_counts, smooth=smooth_test_function(g.points()))
        results = np.stack(run_trials(trial, n_trials, seed, _study_key("local-time-scaling", g, 0), workers))
        for k, t in enumerate(t_values):
            for j, name in enumerate(LOCAL_TIME_FUNCTIONALS):
                samples.setdefault(f"{name}@t={t:g}", {})[level] = results[:, k, j]
        logging.info("Local-time scaling on %s: %s trials, %.1fs", g.label, n_trials, time.perf_counter() - started)
    report = _summarize("local_time", samples, levels, n_trials)
    report.extra["t_values"] = list(t_values)
    return report


def _cover_trial(stream: RngStream, index: int, *, g, cap):
    try:
        sample = cover_time(g, 0, stream, cap)
    except CapExceeded as exc:
        logging.warning("Cover-time trial %s on %s censored at %s (%s unvisited)", index, g.label, cap, exc.uncovered)
        return float(cap), True
    if sample.tau_cov_tilde != sample.tau_cov + 1:
        logging.error("Cover-time sample %s on %s breaks tau~ = tau + 1", index, g.label)
        raise InvariantViolation(f"tau_cov_tilde {sample.tau_cov_tilde} != tau_cov + 1 = {sample.tau_cov + 1}")
    return float(sample.tau_cov), False


def cover_time_scaling(
    levels: Sequence[int],
    n_trials: int = 1_000,
    seed: int = 0,
    *,
    cap: int | None = None,
    workers: int = 1,
) -> ScalingReport:
    """CDFs of 5^{-i} tau_cov on gaskets from the corner (0, 0), censored at the cap."""
    levels = list(levels)
    _check_trials(n_trials)
    samples: dict[int, np.ndarray] = {}
    censored: dict[int, float] = {}
    for level in levels:
        g = family_graph("gasket", level)
        level_cap = cap or default_cover_cap(g, resistance_matrix(g).r_diam)
        results = run_trials(partial(_cover_trial, g=g, cap=level_cap), n_trials, seed, _study_key("cover-time", g, 0), workers)
        values = np.array([value for value, _ in results])
        fraction = sum(flag for _, flag in results) / n_trials
        if fraction > CENSORING_LIMIT:
            logging.error("%.2f%% of cover-time samples on %s hit the cap %s", 100 * fraction, g.label, level_cap)
            raise ExcessiveCensoring(f"{fraction:.2%} of cover times on {g.label} censored at {level_cap}")
        samples[level] = values / 5**level
        censored[level] = fraction
        logging.info("Cover times on %s: mean %.4g (rescaled)", g.label, samples[level].mean())
    report = _summarize("cover_time", {"cover": samples}, levels, n_trials)
    report.extra["censored_fraction"] = {str(level): fraction for level, fraction in censored.items()}
    return report


# Carpets ------------------------------------------------------------------------------


@dataclass
class CarpetReport:
    levels: list[int]
    resistances: list[float]
    ratios: list[float]
    rho_hat: float

    @property
    def ratio_spread(self) -> float:
        """Relative difference of the last two successive ratios (0 with a single ratio)."""
        if len(self.ratios) < 2:
            return 0.0
        return abs(self.ratios[-1] - self.ratios[-2]) / self.ratios[-2]

    def to_dict(self) -> dict:
        return {
            "levels": list(self.levels),
            "resistances": list(self.resistances),
            "ratios": list(self.ratios),
            "rho_hat": self.rho_hat,
            "ratio_spread": self.ratio_spread,
        }


def opposite_side_resistance(g: WeightedGraph) -> float:
    """Set resistance between the left-most and right-most columns of carpet cells."""
    columns = [cell[0] for cell in g.meta["cells_grid"]]
    left = [v for v, c in enumerate(columns) if c == min(columns)]
    right = [v for v, c in enumerate(columns) if c == max(columns)]
    return set_resistance(g, left, right)


def carpet_rho_estimate(levels: Sequence[int] = (0, 1, 2)) -> CarpetReport:
    """Geometric mean of successive per-level ratios of opposite-side resistance."""
    levels = sorted(levels)
    if len(levels) < 2:
        raise InsufficientLevels(f"need at least two carpet levels, got {levels}")
    resistances = [opposite_side_resistance(family_graph("carpet", level)) for level in levels]
    ratios = [
        (b / a) ** (1.0 / (lb - la))
        for (la, a), (lb, b) in zip(zip(levels, resistances), zip(levels[1:], resistances[1:]))
    ]
    rho_hat = float(np.exp(np.mean(np.log(ratios))))
    logging.info("Carpet resistance ratios %s give rho=%.6f", ["%.6f" % r for r in ratios], rho_hat)
    if not rho_hat > 1:
        logging.error("Carpet resistance does not grow across levels %s: rho=%.6f", levels, rho_hat)
        raise InvariantViolation(f"carpet rho estimate {rho_hat:.6f} is not above 1")
    return CarpetReport(levels=levels, resistances=resistances, ratios=ratios, rho_hat=rho_hat)


def wired_monotonicity_check(level: int) -> float:
    """max over pairs of R_wired(x', y') - R(x, y); Rayleigh monotonicity makes it <= 0."""
    carpet = family_graph("carpet", level)
    wired = family_graph("wired_carpet", level)
    mapping = wire_map(carpet, boundary_vertices(carpet))
    image = np.array([mapping[v] for v in range(carpet.n)])
    R = resistance_matrix(carpet).R
    R_wired = resistance_matrix(wired).R[np.ix_(image, image)]
    excess = float(np.max(R_wired - R))
    if excess > MONOTONICITY_TOL:
        logging.error("Wiring increased a resistance on carpet(%s) by %.3g", level, excess)
        raise InvariantViolation(f"wired resistance exceeds unwired by {excess:.3g} on carpet({level})")
    return excess


# Garsia functional along walks ---------------------------------------------------------


@dataclass
class GammaMomentReport:
    family: str
    levels: list[int]
    means: list[float]
    stderrs: list[float]
    n_trials: int
    c_psi: float
    T: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"level": self.levels, "mean": self.means, "stderr": self.stderrs, "n_trials": self.n_trials}
        )

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "levels": list(self.levels),
            "means": list(self.means),
            "stderrs": list(self.stderrs),
            "n_trials": self.n_trials,
            "c_psi": self.c_psi,
            "T": self.T,
        }


def running_gamma_maximum(
    g: WeightedGraph,
    start: int,
    steps: int,
    rng: RngStream,
    weights: np.ndarray,
    scale: float,
    c_psi: float,
) -> float:
    """max_{t <= steps} of sum_{x,y} exp(c |f_t(x) - f_t(y)| W(x, y)) mu_x mu_y with f_t = scale L_t.

    Each step rewrites one row and column of the psi matrix; the total is
    recomputed in full every ``CHECKPOINT_EVERY`` steps.
    """
    mu = g.mu
    values = np.zeros(g.n)
    counts = np.zeros(g.n, dtype=np.int64)
    psi = np.ones((g.n, g.n))
    gamma = float(mu.sum()) ** 2
    best = gamma
    walker = trajectory(g, start, rng)
    for taken in range(1, steps + 1):
        x = next(walker)
        counts[x] += 1
        values[x] = scale * counts[x] / mu[x]
        argument = c_psi * np.abs(values[x] - values) * weights[x]
        with np.errstate(over="ignore"):
            row = np.exp(argument)
        if not np.all(np.isfinite(row)):
            y = int(np.argmax(argument))
            raise GammaOverflow(x, y, float(argument[y] / c_psi))
        gamma += 2.0 * mu[x] * float(np.dot(mu, row - psi[x]))
        psi[x, :] = row
        psi[:, x] = row
        if taken % CHECKPOINT_EVERY == 0:
            gamma = float(mu @ psi @ mu)
        best = max(best, gamma)
    return best


def _gamma_trial(stream: RngStream, index: int, *, g, start, steps, weights, scale, c_psi):
    return running_gamma_maximum(g, start, steps, stream, weights, scale, c_psi) / g.total_mass**2


def gamma_moment_study(
    levels: Sequence[int],
    T: float = 1.0,
    n_trials: int = 200,
    seed: int = 0,
    c_psi: float = 0.25,
    *,
    family: str = "gasket",
    workers: int = 1,
) -> GammaMomentReport:
    """Per-level mean of m^{-2} max_{t <= T m r} Gamma(r^{-1} L_t) with psi = exp(c|x|), p = sqrt, d = R~."""
    _check_positive("T", T)
    _check_positive("c_psi", c_psi)
    if n_trials < 2:
        raise RangeError(f"n_trials must be at least 2, got {n_trials}")
    means, stderrs = [], []
    for level in levels:
        g = family_graph(family, level)
        R = resistance_matrix(g)
        steps = math.floor(T * g.total_mass * R.r_diam)
        trial = partial(
            _gamma_trial, g=g, start=0, steps=steps, weights=resistance_weights(R), scale=1.0 / R.r_diam, c_psi=c_psi
        )
        values = np.array(run_trials(trial, n_trials, seed, _study_key("gamma-moment", g, 0), workers))
        means.append(float(values.mean()))
        stderrs.append(float(values.std(ddof=1) / math.sqrt(n_trials)))
        logging.info("Gamma moment on %s: %.4g +/- %.2g", g.label, means[-1], stderrs[-1])
    return GammaMomentReport(
        family=family, levels=list(levels), means=means, stderrs=stderrs, n_trials=n_trials, c_psi=c_psi, T=T
    )


@dataclass
class GarsiaReport:
    level: int
    n_functions: int
    n_snapshots: int
    pairs_checked: int
    pointwise_violations: int
    domination_violations: int
    profile: str
    tabulated: int

    @property
    def passed(self) -> bool:
        return self.pointwise_violations == 0 and self.domination_violations == 0

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "n_functions": self.n_functions,
            "n_snapshots": self.n_snapshots,
            "pairs_checked": self.pairs_checked,
            "pointwise_violations": self.pointwise_violations,
            "domination_violations": self.domination_violations,
            "profile": self.profile,
            "tabulated": self.tabulated,
            "passed": self.passed,
        }


def _snapshot(stream: RngStream, index: int, *, g, starts, max_steps, scale):
    steps = int(stream.generator().integers(1, max_steps + 1))
    start = starts[index % len(starts)]
    return run_walk(g, start, steps, stream, retain=False).local_times * scale


def garsia_verification(
    level: int = 3,
    n_functions: int = 1_000,
    n_snapshots: int = 100,
    seed: int = 0,
    *,
    c_psi: float = 1.0,
    T: float = 1.0,
    workers: int = 1,
) -> GarsiaReport:
    """Check |f(x) - f(y)| <= chaining bound <= integral bound from 0 on gasket(level).

    The profile is d = R~, v(s) = c1 (r s)^{d_f / (d_w - d_f)}, p = sqrt and
    psi = exp(c_psi |x|). Test functions are scaled uniform noise and
    snapshots r^{-1} L_t at uniform times t <= T m r.
    """
    g = family_graph("gasket", level)
    R = resistance_matrix(g)
    ctx = MetricContext.from_matrix(R.rescaled().value, g.mu, label=f"{g.label}/R~")
    profile = uvd_profile(ctx, GASKET_VOLUME_EXPONENT, R.r_diam, c_psi=c_psi)
    table = LogLinearIntegrals.build(ctx, profile, lower=0.0)

    noise = RngStream(seed, (_STUDY_KEYS["garsia"], level, 0)).generator()
    functions = [noise.uniform(0.0, 2.0) * noise.uniform(-1.0, 1.0, g.n) for _ in range(n_functions)]
    snapshot = partial(
        _snapshot,
        g=g,
        starts=representative_starts(g),
        max_steps=max(1, math.floor(T * g.total_mass * R.r_diam)),
        scale=1.0 / R.r_diam,
    )
    functions += run_trials(snapshot, n_snapshots, seed, (_STUDY_KEYS["garsia"], level, 1), workers)

    pointwise = dominated = tabulated = 0
    for f in functions:
        gamma = gamma_functional(g, ctx, f, profile)
        chaining = garsia_bound_matrix(g, ctx, f, profile)
        if table.applies(gamma):
            integral = table.bounds(ctx, gamma)
            tabulated += 1
        else:
            integral = garsia_integral_bounds(g, ctx, f, profile, lower=0.0)
        p, d = bound_violations(f, chaining, integral)
        pointwise += p
        dominated += d
    report = GarsiaReport(
        level=level,
        n_functions=n_functions,
        n_snapshots=n_snapshots,
        pairs_checked=len(functions) * g.n * (g.n - 1),
        pointwise_violations=pointwise,
        domination_violations=dominated,
        profile=profile.name,
        tabulated=tabulated,
    )
    logging.info(
        "Garsia check on %s: %s pointwise and %s domination violations over %s functions",
        g.label,
        pointwise,
        dominated,
        len(functions),
    )
    return report


STUDIES = (
    "thm-a",
    "thm-b",
    "modulus",
    "sup-localtime",
    "gasket-modulus",
    "uvd",
    "exponents",
    "local-time-scaling",
    "cover-time-scaling",
    "carpet-rho",
    "wired-monotonicity",
    "return-tail",
    "inverse-local-time",
    "gamma-moment",
    "garsia",
)
DETERMINISTIC_STUDIES = frozenset({"uvd", "exponents", "carpet-rho", "wired-monotonicity", "return-tail"})
