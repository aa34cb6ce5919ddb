"""Exact Markov-chain oracle for the walk on a weighted graph.

Hitting probabilities and expected hitting times are discrete harmonic
problems, so they go through the same grounded-Laplacian machinery as the
resistance computations. Time laws use sub-stochastic (taboo) matrix
iteration.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .errors import (
    BudgetExceeded,
    EmptySet,
    HorizonTooLarge,
    InvariantViolation,
    NegativeTheta,
    RangeError,
    SameVertex,
)
from .graphs import WeightedGraph
from .resistance import effective_resistance, harmonic_potential, resistance_matrix, solver_for

ROW_TOL = 1e-12
IDENTITY_TOL = 1e-10
DEGENERATE_TOL = 1e-9
EARLY_EXIT_MASS = 1e-14
MAX_HORIZON = 10**6
COVER_DP_LIMIT = 12


@dataclass(frozen=True)
class TransitionMatrix:
    P: sparse.csr_matrix
    pi: np.ndarray

    def row(self, x: int) -> np.ndarray:
        return self.P.getrow(x).toarray().ravel()


@dataclass(frozen=True)
class FirstPassageLaw:
    """Law of a first-passage time (or count) truncated at ``horizon``.

    ``pmf[k]`` is the probability of the value ``k``; ``tail_mass`` is the
    probability of exceeding ``horizon``.
    """

    kind: str
    params: dict
    pmf: np.ndarray
    tail_mass: float
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def horizon(self) -> int:
        return len(self.pmf) - 1

    @property
    def total_mass(self) -> float:
        return float(self.pmf.sum() + self.tail_mass)

    def survival(self) -> np.ndarray:
        """``s[k] = P(T >= k)`` for ``k = 0 .. horizon + 1``."""
        tail_sums = np.cumsum(self.pmf[::-1])[::-1]
        return np.append(tail_sums, 0.0) + self.tail_mass

    def moment(self, order: int = 1) -> float:
        """Moment of the truncated part of the law."""
        k = np.arange(len(self.pmf), dtype=float)
        return float(np.sum(self.pmf * k**order))

    def to_dict(self) -> dict:
        return {
            "type": self.kind,
            "params": dict(self.params),
            "pmf": [float(v) for v in self.pmf],
            "tail_mass": float(self.tail_mass),
        }


def transition_matrix(g: WeightedGraph) -> TransitionMatrix:
    P = sparse.diags(1.0 / g.mu) @ g.adjacency
    P = sparse.csr_matrix(P)
    rows = np.asarray(P.sum(axis=1)).ravel()
    if np.max(np.abs(rows - 1.0)) > ROW_TOL:
        logging.error("Transition matrix of %s is not stochastic (max row error %.3g)", g.label, np.max(np.abs(rows - 1)))
        raise InvariantViolation(f"rows of P do not sum to 1 on {g.label}")
    pi = g.mu / g.total_mass
    return TransitionMatrix(P=P, pi=pi)


def _distinct(g: WeightedGraph, x: int, y: int) -> tuple[int, int]:
    x, y = g.check_vertex(x), g.check_vertex(y)
    if x == y:
        raise SameVertex(f"x and y are both {x}")
    return x, y


def hitting_probabilities(g: WeightedGraph, target: Iterable[int], avoid: Iterable[int]) -> np.ndarray:
    """h(z) = P_z(tau_target < tau_avoid); 1 on ``target`` and 0 on ``avoid``."""
    return harmonic_potential(g, avoid, target)


def hit_before_return_prob(g: WeightedGraph, x: int, y: int) -> float:
    """P_x(tau_y < tau_x^+) by first-step analysis from x."""
    x, y = _distinct(g, x, y)
    h = hitting_probabilities(g, [y], [x])
    neighbours, weights = g.neighbors(x)
    return float(np.dot(weights, h[neighbours]) / g.mu[x])


def hitting_times_to(g: WeightedGraph, y: int) -> np.ndarray:
    """Vector k(z) = E_z tau_y.

    Solves L k = mu off ``y``. The right-hand side ``mu - m e_y`` sums to zero,
    so the shared grounded solver applies and the result is shifted so that
    k(y) = 0.
    """
    y = g.check_vertex(y)
    rhs = g.mu.copy()
    rhs[y] -= g.total_mass
    potential = solver_for(g).solve(rhs)
    return potential - potential[y]


def expected_hitting_time(g: WeightedGraph, x: int, y: int) -> float:
    """E_x tau_y."""
    x, y = _distinct(g, x, y)
    return float(hitting_times_to(g, y)[x])


def expected_return_time(g: WeightedGraph, x: int) -> float:
    x = g.check_vertex(x)
    k = hitting_times_to(g, x)
    neighbours, weights = g.neighbors(x)
    return float(1.0 + np.dot(weights, k[neighbours]) / g.mu[x])


def commute_time(g: WeightedGraph, x: int, y: int) -> float:
    x, y = _distinct(g, x, y)
    return float(hitting_times_to(g, y)[x] + hitting_times_to(g, x)[y])


def _taboo_iteration(
    P: sparse.csr_matrix,
    targets: Sequence[int],
    initial: np.ndarray,
    start_time: int,
    horizon: int,
) -> tuple[np.ndarray, float]:
    n = P.shape[0]
    is_target = np.zeros(n, dtype=bool)
    is_target[list(targets)] = True
    keep = np.flatnonzero(~is_target)
    stay = P[keep][:, keep].T.tocsr()
    into = np.asarray(P[keep][:, np.flatnonzero(is_target)].sum(axis=1)).ravel()

    pmf = np.zeros(horizon + 1)
    if start_time <= horizon:
        pmf[start_time] = initial[is_target].sum()
    alive = initial[keep].astype(float)
    for k in range(start_time + 1, horizon + 1):
        pmf[k] = float(alive @ into)
        alive = stay @ alive
        if alive.sum() < EARLY_EXIT_MASS:
            break
    return pmf, float(alive.sum())


def _check_horizon(horizon: int) -> None:
    if horizon < 1:
        raise RangeError(f"horizon must be at least 1, got {horizon}")
    if horizon > MAX_HORIZON:
        raise HorizonTooLarge(f"horizon {horizon} exceeds {MAX_HORIZON}")


def return_time_tail(g: WeightedGraph, x: int, horizon: int) -> FirstPassageLaw:
    """Exact law of tau_x^+ up to ``horizon``; ``survival()[k]`` is P(tau_x^+ >= k)."""
    x = g.check_vertex(x)
    _check_horizon(horizon)
    P = transition_matrix(g).P
    pmf, tail = _taboo_iteration(P, [x], P.getrow(x).toarray().ravel(), 1, horizon)
    return FirstPassageLaw(kind="return_time", params={"x": x, "horizon": horizon}, pmf=pmf, tail_mass=tail)


def hitting_time_tail(g: WeightedGraph, x: int, targets: Iterable[int], horizon: int) -> FirstPassageLaw:
    """Exact law of the hitting time of ``targets`` from ``x`` up to ``horizon``."""
    x = g.check_vertex(x)
    targets = sorted({g.check_vertex(a) for a in targets})
    if not targets:
        raise EmptySet("target set is empty")
    _check_horizon(horizon)
    initial = np.zeros(g.n)
    initial[x] = 1.0
    pmf, tail = _taboo_iteration(transition_matrix(g).P, targets, initial, 0, horizon)
    return FirstPassageLaw(
        kind="hitting_time", params={"x": x, "targets": targets, "horizon": horizon}, pmf=pmf, tail_mass=tail
    )


def return_time_laplace(g: WeightedGraph, x: int, theta: float, horizon: int = MAX_HORIZON) -> float:
    """E_x exp(-theta tau_x^+) from the exact tail law.

    The truncated remainder contributes at most ``tail_mass * exp(-theta (horizon + 1))``
    and is added in full, so the value never underestimates.
    """
    if theta < 0:
        raise NegativeTheta(f"theta must be nonnegative, got {theta}")
    if theta == 0:
        return 1.0
    law = return_time_tail(g, x, horizon)
    k = np.arange(len(law.pmf), dtype=float)
    value = float(np.sum(law.pmf * np.exp(-theta * k)))
    return value + law.tail_mass * math.exp(-theta * (law.horizon + 1))


def laplace_bound_constant(
    g: WeightedGraph,
    x: int,
    thetas: Sequence[float],
    r_diam: float | None = None,
    horizon: int = MAX_HORIZON,
) -> float:
    """Smallest c with E exp(-theta tau^+) <= exp(-theta m/mu_x + c theta^2 m^2 r / mu_x) on ``thetas``."""
    x = g.check_vertex(x)
    if r_diam is None:
        r_diam = resistance_matrix(g).r_diam
    m, mu_x = g.total_mass, float(g.mu[x])
    law = return_time_tail(g, x, horizon)
    k = np.arange(len(law.pmf), dtype=float)
    constant = 0.0
    for theta in thetas:
        if theta < 0:
            raise NegativeTheta(f"theta must be nonnegative, got {theta}")
        if theta == 0:
            continue
        value = float(np.sum(law.pmf * np.exp(-theta * k))) + law.tail_mass * math.exp(-theta * (law.horizon + 1))
        needed = (math.log(value) + theta * m / mu_x) * mu_x / (theta**2 * m**2 * r_diam)
        constant = max(constant, needed)
    return constant


@dataclass(frozen=True)
class _ExcursionParameters:
    mu_x: float
    mu_y: float
    R: float
    hit: float  # P_x(tau_y < tau_x^+)
    again: float  # P_y(tau_y^+ < tau_x)

    @property
    def degenerate(self) -> bool:
        return abs(self.mu_y * self.R - 1.0) < DEGENERATE_TOL


def _excursion_parameters(g: WeightedGraph, x: int, y: int) -> _ExcursionParameters:
    x, y = _distinct(g, x, y)
    mu_x, mu_y = float(g.mu[x]), float(g.mu[y])
    R = effective_resistance(g, x, y)
    hit = hit_before_return_prob(g, x, y)
    escape = hit_before_return_prob(g, y, x)

    for name, solved, closed in (("x", hit, 1 / (mu_x * R)), ("y", escape, 1 / (mu_y * R))):
        if abs(solved - closed) > IDENTITY_TOL:
            logging.error("Escape probability from %s on %s: %.15g vs %.15g", name, g.label, solved, closed)
            raise InvariantViolation(f"escape probability {solved!r} disagrees with 1/(mu R) = {closed!r}")

    params = _ExcursionParameters(mu_x=mu_x, mu_y=mu_y, R=R, hit=hit, again=1.0 - escape)
    if params.degenerate:
        params = _ExcursionParameters(mu_x=mu_x, mu_y=mu_y, R=R, hit=hit, again=0.0)
    return params


def excursion_visit_law(g: WeightedGraph, x: int, y: int, kmax: int) -> FirstPassageLaw:
    """Law of the number of visits to y during one excursion away from x.

    Zero visits with probability 1 - 1/(mu_x R); otherwise geometric with
    success probability 1/(mu_y R). When mu_y R = 1 every visit to y is
    followed by a return to x and the law has two points.
    """
    if kmax < 1:
        raise RangeError(f"kmax must be at least 1, got {kmax}")
    e = _excursion_parameters(g, x, y)
    k = np.arange(1, kmax + 1, dtype=float)
    pmf = np.empty(kmax + 1)
    pmf[0] = 1.0 - e.hit
    pmf[1:] = e.hit * e.again ** (k - 1) * (1.0 - e.again)
    tail = e.hit * e.again**kmax

    closed = np.empty(kmax + 1)
    closed[0] = 1.0 - 1.0 / (e.mu_x * e.R)
    if e.degenerate:
        closed[1:] = 0.0
        closed[1] = 1.0 / (e.mu_x * e.R)
    else:
        q = 1.0 - 1.0 / (e.mu_y * e.R)
        closed[1:] = q ** (k - 1) / (e.mu_x * e.mu_y * e.R**2)
    if np.max(np.abs(pmf - closed)) > IDENTITY_TOL:
        logging.error("Excursion law on %s deviates from closed form by %.3g", g.label, np.max(np.abs(pmf - closed)))
        raise InvariantViolation("excursion visit law disagrees with its closed form")

    return FirstPassageLaw(
        kind="excursion_visits",
        params={"x": int(x), "y": int(y), "kmax": kmax, "mu_x": e.mu_x, "mu_y": e.mu_y, "R": e.R},
        pmf=pmf,
        tail_mass=float(tail),
        meta={"degenerate": e.degenerate, "hit": e.hit, "again": e.again},
    )


def excursion_mean(g: WeightedGraph, x: int, y: int) -> float:
    """E_x eta, the local time at y accrued in one excursion from x (equals 1/mu_x)."""
    e = _excursion_parameters(g, x, y)
    return e.hit / (1.0 - e.again) / e.mu_y


def excursion_second_moment(g: WeightedGraph, x: int, y: int) -> float:
    """E_x (eta - 1/mu_x)^2 from the moments of the excursion visit law."""
    e = _excursion_parameters(g, x, y)
    s = 1.0 - e.again
    first = e.hit / s
    second = e.hit * (2.0 - s) / s**2
    return second / e.mu_y**2 - 2.0 * first / (e.mu_x * e.mu_y) + 1.0 / e.mu_x**2


def excursion_second_moment_formula(mu_x: float, mu_y: float, R: float) -> float:
    return 2.0 * (1.0 - 1.0 / (mu_y * R)) * R / mu_x + 1.0 / (mu_x * mu_y) - 1.0 / mu_x**2


def excursion_mgf(g: WeightedGraph, x: int, y: int, theta: float) -> float:
    """E_x exp(theta (eta - 1/mu_x)); infinite once the geometric series diverges."""
    e = _excursion_parameters(g, x, y)
    growth = e.again * math.exp(theta / e.mu_y)
    if growth >= 1.0:
        return math.inf
    visits = e.hit * (1.0 - e.again) * math.exp(theta / e.mu_y) / (1.0 - growth)
    return math.exp(-theta / e.mu_x) * ((1.0 - e.hit) + visits)


def expected_cover_time(g: WeightedGraph, start: int) -> float:
    """Exact E tau_cov by dynamic programming over (visited set, position)."""
    start = g.check_vertex(start)
    n = g.n
    if n > COVER_DP_LIMIT:
        raise BudgetExceeded(f"exact cover time is limited to {COVER_DP_LIMIT} vertices, got {n}")
    P = transition_matrix(g).P.toarray()
    full = (1 << n) - 1
    remaining: dict[int, np.ndarray] = {full: np.zeros(n)}

    masks = sorted(range(1, full), key=lambda mask: -bin(mask).count("1"))
    for mask in masks:
        inside = [v for v in range(n) if mask >> v & 1]
        outside = [v for v in range(n) if not mask >> v & 1]
        block = np.eye(len(inside)) - P[np.ix_(inside, inside)]
        rhs = np.ones(len(inside))
        for u in outside:
            rhs += P[inside, u] * remaining[mask | 1 << u][u]
        values = np.zeros(n)
        values[inside] = np.linalg.solve(block, rhs)
        remaining[mask] = values
    return float(remaining[1 << start][start])
