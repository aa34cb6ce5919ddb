"""Random-walk simulation with local-time accounting.

Local times follow L_t(x) = #{0 <= j <= t-1 : X_j = x} / mu_x, so L_0 = 0 and
the step spent at X_j is credited at time j + 1.
"""

from __future__ import annotations

import logging
import math
import time
from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import repeat
from typing import Any, Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    BudgetExceeded,
    CapExceeded,
    GraphError,
    InvariantViolation,
    MissingValue,
    NotReached,
    RangeError,
    TrajectoryNotRetained,
)
from .graphs import WeightedGraph
from .resistance import ResistanceMatrix

DRAW_BATCH = 4096
MAX_WALK_STEPS = 10**8
CHECKPOINT_EVERY = 1_000
OCCUPATION_RTOL = 1e-9


class RngStream:
    """Counter-based stream keyed by ``(seed, key)``.

    Streams with different keys are independent; the same key replays the
    same draws.
    """

    def __init__(self, seed: int, key: Sequence[int] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._generator = np.random.Generator(np.random.Philox(sequence))
        self.counter = 0

    def generator(self) -> np.random.Generator:
        return self._generator

    def uniforms(self, size: int) -> np.ndarray:
        self.counter += size
        return self._generator.random(size)

    def spawn(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.key + (index,))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self.key}, counter={self.counter})"


def _call_trial(fn: Callable[[RngStream, int], Any], seed: int, key: tuple[int, ...], index: int) -> Any:
    return fn(RngStream(seed, key + (index,)), index)


def run_trials(
    fn: Callable[[RngStream, int], Any],
    n_trials: int,
    seed: int,
    key: Sequence[int] = (),
    workers: int = 1,
) -> list:
    """Run ``fn(stream, index)`` for each trial and return results in index order.

    Trial ``index`` always receives the stream keyed ``key + (index,)``, so the
    output does not depend on ``workers``. With several workers ``fn`` must be
    picklable.
    """
    if n_trials < 0:
        raise RangeError(f"n_trials must be nonnegative, got {n_trials}")
    if workers < 1:
        raise RangeError(f"workers must be positive, got {workers}")
    key = tuple(key)
    started = time.perf_counter()
    if workers == 1 or n_trials < 2:
        results = [_call_trial(fn, seed, key, index) for index in range(n_trials)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunksize = max(1, n_trials // (4 * workers))
            results = list(
                pool.map(_call_trial, repeat(fn), repeat(seed), repeat(key), range(n_trials), chunksize=chunksize)
            )
    logging.info("Ran %s trials (key=%s) on %s worker(s) in %.3fs", n_trials, key, workers, time.perf_counter() - started)
    return results


class _Stepper:
    """Samples the next vertex by bisecting per-row cumulative weights.

    Row ``x`` stores ``x + F_x(j)`` where ``F_x`` is the cumulative transition
    law, so one flat list serves every row.
    """

    def __init__(self, g: WeightedGraph):
        adj = g.adjacency
        self.indptr = adj.indptr.tolist()
        self.indices = adj.indices.tolist()
        cumulative: list[float] = []
        for x in range(g.n):
            lo, hi = adj.indptr[x], adj.indptr[x + 1]
            row = np.cumsum(adj.data[lo:hi]) / g.mu[x]
            row[-1] = 1.0
            cumulative.extend((x + row).tolist())
        self.cumulative = cumulative

    def walk(self, start: int, stream: RngStream) -> Iterator[int]:
        """Yield X_0, X_1, ... indefinitely."""
        indptr, indices, cumulative = self.indptr, self.indices, self.cumulative
        x = start
        while True:
            for u in stream.uniforms(DRAW_BATCH).tolist():
                yield x
                j = bisect_right(cumulative, x + u, indptr[x], indptr[x + 1] - 1)
                x = indices[j]


@lru_cache(maxsize=16)
def _stepper_for(g: WeightedGraph) -> _Stepper:
    return _Stepper(g)


def trajectory(g: WeightedGraph, start: int, rng: RngStream) -> Iterator[int]:
    """Yield X_0 = start, X_1, ... without end."""
    return _stepper_for(g).walk(g.check_vertex(start), rng)


@dataclass
class LocalTimeField:
    mu: np.ndarray
    counts: np.ndarray
    t: int
    position: int
    uncovered: int
    trajectory: np.ndarray | None = None
    start: int = 0

    @property
    def local_times(self) -> np.ndarray:
        return self.counts / self.mu

    def local_time(self, x: int) -> float:
        return float(self.counts[x] / self.mu[x])

    def check(self) -> None:
        if int(self.counts.sum()) != self.t:
            logging.error("Local-time counts sum to %s at t=%s", int(self.counts.sum()), self.t)
            raise InvariantViolation(f"visit counts sum to {int(self.counts.sum())}, expected {self.t}")


def run_walk(
    g: WeightedGraph,
    start: int,
    steps: int,
    rng: RngStream,
    *,
    retain: bool = True,
) -> LocalTimeField:
    """Walk ``steps`` steps from ``start``; the trajectory holds X_0 .. X_steps."""
    start = g.check_vertex(start)
    if steps < 0:
        raise RangeError(f"steps must be nonnegative, got {steps}")
    if steps > MAX_WALK_STEPS:
        raise BudgetExceeded(f"{steps} steps exceeds the walk budget of {MAX_WALK_STEPS}")

    walker = trajectory(g, start, rng)
    path = np.fromiter(walker, dtype=np.int64, count=steps + 1)
    counts = np.bincount(path[:steps], minlength=g.n).astype(np.int64)
    visited = np.zeros(g.n, dtype=bool)
    visited[path] = True
    return LocalTimeField(
        mu=g.mu,
        counts=counts,
        t=steps,
        position=int(path[-1]),
        uncovered=int(g.n - visited.sum()),
        trajectory=path if retain else None,
        start=start,
    )


def _vertex_values(field: LocalTimeField, f: Mapping[int, float] | Sequence[float] | np.ndarray) -> np.ndarray:
    n = len(field.counts)
    if isinstance(f, Mapping):
        missing = [v for v in range(n) if v not in f]
        if missing:
            raise MissingValue(f"f is undefined at vertices {missing[:10]}")
        return np.array([f[v] for v in range(n)], dtype=float)
    values = np.asarray(f, dtype=float)
    if values.shape != (n,):
        raise MissingValue(f"f has shape {values.shape}, expected ({n},)")
    return values


def occupation_counts(field: LocalTimeField) -> np.ndarray:
    """Visit counts of X_0 .. X_{t-1}, checked to equal mu_x L_t(x) exactly."""
    if field.trajectory is None:
        raise TrajectoryNotRetained("occupation identity needs the retained trajectory")
    visits = np.bincount(field.trajectory[: field.t], minlength=len(field.counts))
    if not np.array_equal(visits, field.counts):
        bad = int(np.flatnonzero(visits != field.counts)[0])
        logging.error("Vertex %s has %s visits but a recorded count of %s", bad, visits[bad], field.counts[bad])
        raise InvariantViolation(f"visit count of vertex {bad} is {visits[bad]}, recorded {field.counts[bad]}")
    return visits


def occupation_sides(field: LocalTimeField, f) -> tuple[float, float]:
    """(sum_x f(x) count(x), sum_{j<t} f(X_j)) with count(x) = mu_x L_t(x) an integer."""
    counts = occupation_counts(field)
    values = _vertex_values(field, f)
    lhs = math.fsum(values * counts)
    rhs = math.fsum(values[field.trajectory[: field.t]])
    return lhs, rhs


def occupation_integral(field: LocalTimeField, f) -> float:
    lhs, rhs = occupation_sides(field, f)
    scale = math.fsum(np.abs(_vertex_values(field, f)) * field.counts)
    if abs(lhs - rhs) > OCCUPATION_RTOL * max(1.0, scale):
        logging.error("Occupation identity failed: %.15g vs %.15g", lhs, rhs)
        raise InvariantViolation(f"occupation identity failed: {lhs!r} != {rhs!r}")
    return lhs


def inverse_local_time(field: LocalTimeField, x: int, i: int) -> int:
    """tau_x(i): the time of the i-th visit to x after the first.

    tau_x(0) is 0 for a walk started at x and the first hitting time of x
    otherwise.
    """
    if field.trajectory is None:
        raise TrajectoryNotRetained("inverse local time needs the retained trajectory")
    if i < 0:
        raise RangeError(f"i must be nonnegative, got {i}")
    visits = np.flatnonzero(field.trajectory == x)
    if len(visits) <= i:
        raise NotReached(f"only {len(visits)} visits to {x} within {field.t} steps")
    return int(visits[i])


@dataclass(frozen=True)
class CoverTimeSample:
    tau_cov: int
    tau_cov_tilde: int
    seed: int
    start: int
    key: tuple[int, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "tau_cov": self.tau_cov,
            "tau_cov_tilde": self.tau_cov_tilde,
            "seed": self.seed,
            "start": self.start,
            "key": list(self.key),
        }


def default_cover_cap(g: WeightedGraph, r_diam: float) -> int:
    return math.ceil(1e3 * g.total_mass * r_diam * (1 + math.log(g.n)))


def cover_time(g: WeightedGraph, start: int, rng: RngStream, cap: int) -> CoverTimeSample:
    start = g.check_vertex(start)
    if cap < 1:
        raise RangeError(f"cap must be at least 1, got {cap}")
    visited = np.zeros(g.n, dtype=bool)
    uncovered = g.n
    for t, x in enumerate(trajectory(g, start, rng)):
        if not visited[x]:
            visited[x] = True
            uncovered -= 1
            if uncovered == 0:
                return CoverTimeSample(tau_cov=t, tau_cov_tilde=t + 1, seed=rng.seed, start=start, key=rng.key)
        if t >= cap:
            raise CapExceeded(cap, uncovered)
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class PairMaxima:
    """Running maxima over 0 <= t <= steps of |f(L_t(x)) - f(L_t(y))| W(x, y)."""

    matrix: np.ndarray
    steps: int
    final_local_times: np.ndarray
    all_capped: bool = False

    @property
    def maximum(self) -> float:
        return float(self.matrix.max())


def pair_running_maximum(
    g: WeightedGraph,
    start: int,
    steps: int,
    rng: RngStream,
    weights: np.ndarray,
    scale: float = 1.0,
    cap: float = math.inf,
    *,
    validate: bool = False,
) -> PairMaxima:
    """Per-pair running maxima with f(l) = min(cap, scale * l).

    Each step changes one local time, so only the row of that vertex is
    recomputed. With ``validate`` a brute-force running maximum is kept
    alongside and compared every ``CHECKPOINT_EVERY`` steps. The walk stops
    early once every vertex has reached ``cap``, after which no pair can change.
    """
    start = g.check_vertex(start)
    if steps < 0:
        raise RangeError(f"steps must be nonnegative, got {steps}")
    if steps > MAX_WALK_STEPS:
        raise BudgetExceeded(f"{steps} steps exceeds the walk budget of {MAX_WALK_STEPS}")
    W = np.asarray(weights, dtype=float)
    if W.shape != (g.n, g.n):
        raise GraphError(f"weight matrix has shape {W.shape}, expected ({g.n}, {g.n})")

    mu = g.mu
    counts = np.zeros(g.n, dtype=np.int64)
    values = np.zeros(g.n)
    running = np.zeros((g.n, g.n))
    brute = np.zeros((g.n, g.n)) if validate else None
    capped = 0
    taken = 0

    walker = trajectory(g, start, rng)
    for taken in range(1, steps + 1):
        x = next(walker)
        counts[x] += 1
        updated = min(cap, scale * counts[x] / mu[x])
        if updated != values[x]:
            values[x] = updated
            np.maximum(running[x], np.abs(updated - values) * W[x], out=running[x])
            if updated == cap:
                capped += 1
        if brute is not None:
            np.maximum(brute, np.abs(values[:, None] - values[None, :]) * W, out=brute)
            if taken % CHECKPOINT_EVERY == 0 or taken == steps or capped == g.n:
                _compare_running(running, brute, taken)
        if capped == g.n:
            break

    matrix = np.maximum(running, running.T)
    np.fill_diagonal(matrix, 0.0)
    return PairMaxima(matrix=matrix, steps=taken, final_local_times=counts / mu, all_capped=capped == g.n)


def _compare_running(running: np.ndarray, brute: np.ndarray, t: int) -> None:
    incremental = np.maximum(running, running.T)
    np.fill_diagonal(incremental, 0.0)
    reference = brute.copy()
    np.fill_diagonal(reference, 0.0)
    if not np.allclose(incremental, reference, rtol=1e-12, atol=1e-12):
        logging.error("Incremental running maximum diverged at t=%s", t)
        raise InvariantViolation(f"incremental running maximum differs from full recomputation at t={t}")


def _check_resistance(g: WeightedGraph, R: ResistanceMatrix) -> np.ndarray:
    if R.n != g.n:
        raise GraphError(f"resistance matrix has {R.n} vertices, graph has {g.n}")
    return R.R / R.r_diam


def modulus_weights(R: ResistanceMatrix) -> np.ndarray:
    """1 / sqrt(R~(1 + ln 1/R~)) off the diagonal, 0 on it."""
    rescaled = R.R / R.r_diam
    with np.errstate(divide="ignore", invalid="ignore"):
        gauge = np.sqrt(rescaled * (1.0 - np.log(rescaled)))
        W = np.where(rescaled > 0, 1.0 / gauge, 0.0)
    np.fill_diagonal(W, 0.0)
    return W


def resistance_weights(R: ResistanceMatrix) -> np.ndarray:
    """1 / sqrt(R~) off the diagonal, 0 on it."""
    rescaled = R.R / R.r_diam
    with np.errstate(divide="ignore"):
        W = np.where(rescaled > 0, 1.0 / np.sqrt(rescaled), 0.0)
    np.fill_diagonal(W, 0.0)
    return W


def modulus_statistic(
    g: WeightedGraph,
    R: ResistanceMatrix,
    start: int,
    T_horizon: float,
    rng: RngStream,
    *,
    validate: bool = False,
) -> float:
    """max over x != y and 0 <= t <= T m r of r^{-1}|L_t(x) - L_t(y)| / sqrt(R~(1 + ln 1/R~))."""
    if T_horizon <= 0:
        raise RangeError(f"T_horizon must be positive, got {T_horizon}")
    _check_resistance(g, R)
    steps = math.floor(T_horizon * g.total_mass * R.r_diam)
    maxima = pair_running_maximum(g, start, steps, rng, modulus_weights(R), scale=1.0 / R.r_diam, validate=validate)
    return maxima.maximum


def truncated_modulus_statistic(
    g: WeightedGraph,
    R: ResistanceMatrix,
    start: int,
    L_trunc: float,
    steps: int,
    rng: RngStream,
    *,
    validate: bool = False,
) -> float:
    """Running max of |L ^ (L_t(x)/r) - L ^ (L_t(y)/r)| / sqrt(R~(x, y))."""
    if L_trunc < 1:
        raise RangeError(f"L_trunc must be at least 1, got {L_trunc}")
    _check_resistance(g, R)
    maxima = pair_running_maximum(
        g, start, steps, rng, resistance_weights(R), scale=1.0 / R.r_diam, cap=L_trunc, validate=validate
    )
    return maxima.maximum


def _inside_triangle(point: np.ndarray, corners: np.ndarray, tol: float = 1e-9) -> bool:
    a, b, c = corners
    basis = np.column_stack((b - a, c - a))
    s, u = np.linalg.solve(basis, point - a)
    return s >= -tol and u >= -tol and s + u <= 1 + tol


def interpolate_local_time(g: WeightedGraph, values: Sequence[float] | np.ndarray, point: Sequence[float]) -> float:
    """Inverse-distance weighted value at ``point`` from the corners of its cell."""
    cells = g.meta.get("cells")
    if not cells:
        raise GraphError(f"{g.label} records no cells to interpolate over")
    values = np.asarray(values, dtype=float)
    if values.shape != (g.n,):
        raise MissingValue(f"values have shape {values.shape}, expected ({g.n},)")
    p = np.asarray(point, dtype=float)
    coords = g.points()
    for cell in cells:
        corners = coords[list(cell)]
        if not _inside_triangle(p, corners):
            continue
        distances = np.linalg.norm(corners - p, axis=1)
        nearest = int(np.argmin(distances))
        if distances[nearest] < 1e-12:
            return float(values[cell[nearest]])
        inverse = 1.0 / distances
        return float(np.dot(inverse, values[list(cell)]) / inverse.sum())
    raise RangeError(f"point {tuple(point)} lies outside every cell of {g.label}")
