"""Effective resistance, the resistance metric and Dirichlet energies."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy.sparse import linalg as splinalg

from .errors import (
    BudgetExceeded,
    EmptySet,
    InvariantViolation,
    MissingValue,
    OverlappingSets,
    SolverFailure,
)
from .graphs import WeightedGraph, wire_map, wire_vertices

DENSE_LIMIT = 5_000
ALL_PAIRS_BUDGET = 3_000
CG_RTOL = 1e-12
METRIC_TOL = 1e-9
TRIANGLE_CHECK_LIMIT = 1_000


class LaplacianSolver:
    """Solves ``L u = b`` with vertex ``ground`` held at potential zero.

    The reduced Laplacian is factored once (Cholesky up to ``dense_limit``
    vertices, Jacobi-preconditioned conjugate gradients above). ``solve``
    allocates its own vectors, so one solver may serve concurrent queries.
    """

    def __init__(self, g: WeightedGraph, ground: int = 0, dense_limit: int = DENSE_LIMIT):
        self.graph = g
        self.ground = g.check_vertex(ground)
        self._keep = np.array([v for v in range(g.n) if v != self.ground], dtype=np.int64)
        reduced = g.laplacian[self._keep][:, self._keep]
        self.dense = len(self._keep) <= dense_limit

        started = time.perf_counter()
        if self.dense:
            try:
                self._factor = scipy.linalg.cho_factor(reduced.toarray(), lower=True, check_finite=True)
            except np.linalg.LinAlgError as exc:
                raise SolverFailure(f"reduced Laplacian of {g.label} is not positive definite") from exc
        else:
            self._matrix = reduced.tocsr()
            inv_diag = 1.0 / self._matrix.diagonal()
            self._preconditioner = splinalg.LinearOperator(
                self._matrix.shape, matvec=lambda r: inv_diag * r, dtype=float
            )
        logging.info(
            "Built %s Laplacian solver for %s in %.3fs",
            "dense" if self.dense else "iterative",
            g.label,
            time.perf_counter() - started,
        )

    def solve(self, b: np.ndarray) -> np.ndarray:
        rhs = np.asarray(b, dtype=float)[self._keep]
        if self.dense:
            reduced = scipy.linalg.cho_solve(self._factor, rhs)
        else:
            reduced, info = splinalg.cg(
                self._matrix,
                rhs,
                rtol=CG_RTOL,
                atol=0.0,
                maxiter=20 * self.graph.n,
                M=self._preconditioner,
            )
            if info != 0:
                raise SolverFailure(f"conjugate gradients did not converge on {self.graph.label} (info={info})")
        potential = np.zeros(self.graph.n)
        potential[self._keep] = reduced
        return potential

    def green(self) -> np.ndarray:
        """Inverse of the grounded Laplacian, padded with the zero ground row."""
        if not self.dense:
            raise BudgetExceeded(f"{self.graph.label} is above the dense factorization limit")
        n = self.graph.n
        inverse = scipy.linalg.cho_solve(self._factor, np.eye(n - 1))
        green = np.zeros((n, n))
        green[np.ix_(self._keep, self._keep)] = inverse
        return green


@lru_cache(maxsize=16)
def solver_for(g: WeightedGraph) -> LaplacianSolver:
    return LaplacianSolver(g)


@dataclass(frozen=True)
class RescaledResistance:
    value: np.ndarray


@dataclass(frozen=True)
class ResistanceMatrix:
    R: np.ndarray
    r_diam: float
    r_min: float
    graph_ref: str

    @property
    def n(self) -> int:
        return self.R.shape[0]

    def rescaled(self) -> RescaledResistance:
        return rescaled(self)

    def pairs(self) -> Iterable[tuple[int, int, float]]:
        rows, cols = np.triu_indices(self.n, k=1)
        for i, j in zip(rows.tolist(), cols.tolist()):
            yield i, j, float(self.R[i, j])


def rescaled(R: ResistanceMatrix) -> RescaledResistance:
    value = R.R / R.r_diam
    value.flags.writeable = False
    return RescaledResistance(value)


def effective_resistance(g: WeightedGraph, x: int, y: int) -> float:
    x, y = g.check_vertex(x), g.check_vertex(y)
    if x == y:
        return 0.0
    current = np.zeros(g.n)
    current[x], current[y] = 1.0, -1.0
    potential = solver_for(g).solve(current)
    value = float(potential[x] - potential[y])
    if not np.isfinite(value) or value <= 0:
        raise SolverFailure(f"nonpositive resistance {value!r} between {x} and {y} on {g.label}")
    return value


def _disjoint_sets(g: WeightedGraph, A: Iterable[int], B: Iterable[int]) -> tuple[set[int], set[int]]:
    A = {g.check_vertex(a) for a in A}
    B = {g.check_vertex(b) for b in B}
    if not A or not B:
        raise EmptySet("both vertex sets must be nonempty")
    if A & B:
        raise OverlappingSets(f"sets share vertices {sorted(A & B)}")
    return A, B


def set_resistance(g: WeightedGraph, A: Iterable[int], B: Iterable[int]) -> float:
    """R_G(A, B): wire each set to a super-node and measure between them."""

    A, B = _disjoint_sets(g, A, B)
    map_a = wire_map(g, A)
    wired_a = wire_vertices(g, A)
    B_image = {map_a[b] for b in B}
    map_b = wire_map(wired_a, B_image)
    wired = wire_vertices(wired_a, B_image)
    return effective_resistance(wired, map_b[map_a[min(A)]], map_b[min(B_image)])


def harmonic_potential(g: WeightedGraph, A: Iterable[int], B: Iterable[int]) -> np.ndarray:
    """Potential equal to 0 on ``A``, 1 on ``B`` and harmonic elsewhere."""

    A, B = _disjoint_sets(g, A, B)
    potential = np.zeros(g.n)
    potential[sorted(B)] = 1.0
    interior = np.array([v for v in range(g.n) if v not in A and v not in B], dtype=np.int64)
    if interior.size == 0:
        return potential
    boundary = np.array(sorted(A | B), dtype=np.int64)
    lap = g.laplacian
    rhs = -(lap[interior][:, boundary] @ potential[boundary])
    potential[interior] = splinalg.spsolve(lap[interior][:, interior].tocsc(), rhs)
    return potential


def resistance_matrix(
    g: WeightedGraph,
    *,
    budget: int = ALL_PAIRS_BUDGET,
    validate: bool = False,
) -> ResistanceMatrix:
    if g.n > budget:
        raise BudgetExceeded(f"{g.label} has {g.n} vertices, above the all-pairs budget of {budget}")

    started = time.perf_counter()
    green = solver_for(g).green()
    diag = np.diag(green)
    R = diag[:, None] + diag[None, :] - 2.0 * green
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 0.0)
    R.flags.writeable = False

    off_diagonal = R[~np.eye(g.n, dtype=bool)]
    matrix = ResistanceMatrix(R=R, r_diam=float(R.max()), r_min=float(off_diagonal.min()), graph_ref=g.label)
    logging.info("All-pairs resistance for %s in %.3fs (r=%.6g)", g.label, time.perf_counter() - started, matrix.r_diam)
    if validate:
        check_metric(matrix, mu=g.mu)
    return matrix


def check_metric(matrix: ResistanceMatrix, mu: np.ndarray | None = None, tol: float = METRIC_TOL) -> None:
    check_metric_matrix(matrix.R, matrix.graph_ref, mu=mu, tol=tol)


def check_metric_matrix(R: np.ndarray, label: str, mu: np.ndarray | None = None, tol: float = METRIC_TOL) -> None:
    """Raise InvariantViolation unless ``R`` is a metric (and mu_x R(x, y) >= 1 when ``mu`` is given)."""
    n = R.shape[0]
    problems = []
    if np.any(np.abs(np.diag(R)) > tol):
        problems.append("nonzero diagonal")
    if np.any(np.abs(R - R.T) > tol):
        problems.append("asymmetric")
    off_diagonal = R[~np.eye(n, dtype=bool)]
    if off_diagonal.size and not off_diagonal.min() > 0:
        problems.append(f"minimum off-diagonal distance {off_diagonal.min()!r} is not positive")
    if mu is not None:
        scaled = np.asarray(mu)[:, None] * R
        np.fill_diagonal(scaled, np.inf)
        if scaled.min() < 1 - tol:
            problems.append(f"mu_x R(x,y) drops to {scaled.min():.6g} < 1")
    if n <= TRIANGLE_CHECK_LIMIT:
        for k in range(n):
            detour = R[:, k][:, None] + R[k, :][None, :]
            excess = R - detour
            if excess.max() > tol:
                x, y = np.unravel_index(int(np.argmax(excess)), excess.shape)
                problems.append(f"triangle inequality fails for ({x}, {y}) via {k}")
                break
    else:
        logging.warning("Skipping triangle check on %s vertices (limit %s)", n, TRIANGLE_CHECK_LIMIT)

    if problems:
        logging.error("Metric check failed on %s: %s", label, "; ".join(problems))
        raise InvariantViolation(f"metric check failed on {label}: {'; '.join(problems)}")


def dirichlet_energy(g: WeightedGraph, f: Mapping[int, float] | Sequence[float] | np.ndarray) -> float:
    """(1/2) sum over ordered adjacent pairs of (f(x) - f(y))^2 mu_xy."""

    if isinstance(f, Mapping):
        missing = [v for v in g.vertices if v not in f]
        if missing:
            raise MissingValue(f"f is undefined at vertices {missing[:10]}")
        values = np.array([f[v] for v in g.vertices], dtype=float)
    else:
        values = np.asarray(f, dtype=float)
        if values.shape != (g.n,):
            raise MissingValue(f"f has shape {values.shape}, expected ({g.n},)")
    if np.isnan(values).any():
        raise MissingValue("f contains NaN values")
    if not g.edges:
        return 0.0
    u, v, w = (np.asarray(col) for col in zip(*g.edges))
    u, v = u.astype(np.int64), v.astype(np.int64)
    return float(np.sum(w * (values[u] - values[v]) ** 2))
