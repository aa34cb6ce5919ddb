"""Discrete Garsia lemma: the Gamma functional, the chaining bound and its integral form.

Profile callables (``v``, ``p``, ``psi``) must accept numpy arrays.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .errors import (
    GammaOverflow,
    InvalidProfile,
    QuadratureFailure,
    RangeError,
    SameVertex,
    VolumeBoundUnverified,
)
from .graphs import WeightedGraph
from .resistance import check_metric_matrix

PROFILE_GRID = np.geomspace(1e-6, 1e6, 64)
VOLUME_RTOL = 1e-12
QUAD_RTOL = 1e-6
QUAD_ATOL = 1e-12
BOUND_SLACK = 1e-9


def _evaluate(fn: Callable, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return np.broadcast_to(np.asarray(fn(s), dtype=float), s.shape)


def _scalar(fn: Callable, s: float) -> float:
    return float(_evaluate(fn, np.array([s]))[0])


class _ExpPsi:
    def __init__(self, c: float):
        self.c = c

    def __call__(self, x):
        return np.exp(self.c * np.abs(x))

    def inverse(self, u: float) -> float:
        return math.log(u) / self.c if u >= 1 else 0.0


class _GaussPsi:
    def __init__(self, c: float):
        self.c = c

    def __call__(self, x):
        return np.exp(self.c * np.square(x))

    def inverse(self, u: float) -> float:
        return math.sqrt(math.log(u) / self.c) if u >= 1 else 0.0


class PowerVolume:
    """v(s) = constant * (scale * s) ** exponent."""

    def __init__(self, exponent: float, scale: float = 1.0, constant: float = 1.0):
        self.exponent = exponent
        self.scale = scale
        self.constant = constant

    def __call__(self, s):
        return self.constant * np.power(self.scale * np.asarray(s, dtype=float), self.exponent)

    def with_constant(self, constant: float) -> "PowerVolume":
        return PowerVolume(self.exponent, self.scale, constant)


@dataclass(frozen=True)
class GarsiaProfile:
    """The gauge triple (v, p, psi).

    v is nondecreasing, p is nondecreasing with p(0) = 0, psi is symmetric and
    convex with psi(0) = 1 and grows without bound. The conditions are checked
    on a geometric grid at construction.
    """

    v: Callable
    p: Callable
    psi: Callable
    psi_inv: Callable[[float], float] | None = None
    name: str = "custom"

    def __post_init__(self):
        with np.errstate(over="ignore", invalid="ignore"):
            problems = self._problems(PROFILE_GRID)
        if problems:
            raise InvalidProfile(f"profile {self.name!r} rejected: {'; '.join(problems)}")

    def _problems(self, grid: np.ndarray) -> list[str]:
        problems = []
        v = _evaluate(self.v, grid)
        p = _evaluate(self.p, np.concatenate(([0.0], grid)))
        psi_pos = _evaluate(self.psi, grid)
        psi_neg = _evaluate(self.psi, -grid)
        psi_zero = _scalar(self.psi, 0.0)
        midpoints = _evaluate(self.psi, 0.5 * (grid[1:] + grid[:-1]))

        if np.any(v < 0) or np.any(np.diff(v) < 0):
            problems.append("v is not nonnegative and nondecreasing")
        if p[0] != 0:
            problems.append(f"p(0) = {p[0]!r}")
        if np.any(np.diff(p) < 0):
            problems.append("p is not nondecreasing")
        if psi_zero != 1.0:
            problems.append(f"psi(0) = {psi_zero!r}")
        if not np.array_equal(psi_pos, psi_neg):
            problems.append("psi is not symmetric")
        chords = 0.5 * (psi_pos[1:] + psi_pos[:-1])
        finite = np.isfinite(chords)
        if np.any(midpoints[finite] > chords[finite] * (1 + 1e-12)):
            problems.append("psi is not convex")
        if not psi_pos[-1] > psi_pos[0] or np.any(np.diff(psi_pos) < 0):
            problems.append("psi does not grow")
        return problems


def exponential_profile(c: float, v: Callable) -> GarsiaProfile:
    """psi(x) = exp(c|x|) and p = sqrt."""
    if c <= 0:
        raise RangeError(f"c must be positive, got {c}")
    psi = _ExpPsi(c)
    return GarsiaProfile(v=v, p=np.sqrt, psi=psi, psi_inv=psi.inverse, name=f"exp(c={c:g})")


def gaussian_profile(c: float, v: Callable) -> GarsiaProfile:
    """psi(x) = exp(c x^2) and p = sqrt."""
    if c <= 0:
        raise RangeError(f"c must be positive, got {c}")
    psi = _GaussPsi(c)
    return GarsiaProfile(v=v, p=np.sqrt, psi=psi, psi_inv=psi.inverse, name=f"gauss(c={c:g})")


def psi_inverse(profile: GarsiaProfile, x: float) -> float:
    """inf{y >= 0 : psi(y) > x}."""
    if x < 0:
        raise RangeError(f"psi_inverse needs x >= 0, got {x}")
    if math.isinf(x):
        return math.inf
    if profile.psi_inv is not None:
        return float(profile.psi_inv(x))
    if x < 1.0:
        return 0.0

    def excess(y: float) -> float:
        with np.errstate(over="ignore"):
            return _scalar(profile.psi, y) - x

    upper = 1.0
    while excess(upper) <= 0:
        upper *= 2.0
        if upper > 1e300:
            return math.inf
    if excess(0.0) > 0:
        return 0.0
    return float(optimize.brentq(excess, 0.0, upper, xtol=1e-14, rtol=1e-14))


@dataclass(frozen=True)
class MetricContext:
    """A metric on V(G) with its realized radii and open-ball volumes."""

    d: np.ndarray
    mu: np.ndarray
    d0: float
    diameter: float
    radii: np.ndarray
    ball_volumes: np.ndarray
    label: str = "metric"

    @classmethod
    def from_matrix(cls, d: np.ndarray, mu: np.ndarray, label: str = "metric", validate: bool = True) -> "MetricContext":
        d = np.asarray(d, dtype=float)
        mu = np.asarray(mu, dtype=float)
        if validate:
            check_metric_matrix(d, label)
        n = d.shape[0]
        off = d[~np.eye(n, dtype=bool)]
        radii = np.unique(off)

        volumes = np.full(radii.shape, np.inf)
        for x in range(n):
            order = np.argsort(d[x], kind="stable")
            sorted_d = d[x][order]
            cumulative = np.concatenate(([0.0], np.cumsum(mu[order])))
            inside = np.searchsorted(sorted_d, radii, side="left")
            np.minimum(volumes, cumulative[inside], out=volumes)

        return cls(
            d=d,
            mu=mu,
            d0=float(off.min()),
            diameter=float(off.max()),
            radii=radii,
            ball_volumes=volumes,
            label=label,
        )

    def min_ball_volume(self, r: float) -> float:
        """min_x mu(B_d(x, r)) for the open ball."""
        return float(((self.d < r) @ self.mu).min())

    def verify_volume_bound(self, v: Callable) -> bool:
        """v(r) <= min_x mu(B(x, r)) on [d0, diameter].

        Open-ball volumes are left-continuous step functions that jump just
        after each realized distance, so checking the realized radii is exact.
        """
        required = _evaluate(v, self.radii)
        return bool(np.all(required <= self.ball_volumes * (1 + VOLUME_RTOL)))

    def fit_volume_constant(self, v: Callable) -> float:
        """Largest c with c v(r) <= min_x mu(B(x, r)) on every realized radius."""
        shape = _evaluate(v, self.radii)
        positive = shape > 0
        if not positive.any():
            raise InvalidProfile("volume shape vanishes on every realized radius")
        return float(np.min(self.ball_volumes[positive] / shape[positive]))


def _require_volume(ctx: MetricContext, profile: GarsiaProfile) -> None:
    if not ctx.verify_volume_bound(profile.v):
        logging.error("Volume lower bound of %s fails on %s", profile.name, ctx.label)
        raise VolumeBoundUnverified(f"v of profile {profile.name!r} exceeds the ball volumes of {ctx.label}")


def gamma_functional(g: WeightedGraph, ctx: MetricContext, f, profile: GarsiaProfile) -> float:
    """Gamma(f) = sum_{x,y} psi((f(x) - f(y)) / p(d(x, y))) mu_x mu_y; diagonal terms use psi(0)."""
    f = np.asarray(f, dtype=float)
    n = g.n
    diff = f[:, None] - f[None, :]
    gauge = _evaluate(profile.p, ctx.d)
    diagonal = np.eye(n, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        argument = np.where(diagonal, 0.0, diff / gauge)
        argument = np.where(diagonal | (diff == 0), 0.0, argument)
        values = _evaluate(profile.psi, argument)
    if not np.all(np.isfinite(values)):
        x, y = (int(i) for i in np.argwhere(~np.isfinite(values))[0])
        raise GammaOverflow(x, y, float(argument[x, y]))
    total = float(g.mu @ values @ g.mu)
    if not math.isfinite(total):
        x, y = (int(i) for i in np.unravel_index(int(np.argmax(values)), values.shape))
        raise GammaOverflow(x, y, float(argument[x, y]))
    return total


def _chain_length(distance: float, d0: float) -> int:
    """min{i : d0 2^i > distance}."""
    i = int(math.floor(math.log2(distance / d0))) + 1
    while d0 * 2**i <= distance:
        i += 1
    while i > 1 and d0 * 2 ** (i - 1) > distance:
        i -= 1
    return i


def _chain_terms(ctx: MetricContext, profile: GarsiaProfile, gamma: float, count: int) -> np.ndarray:
    terms = np.empty(count)
    for i in range(1, count + 1):
        volume = _scalar(profile.v, ctx.d0 * 2 ** (i - 1))
        ratio = gamma / volume**2 if volume > 0 else math.inf
        terms[i - 1] = _scalar(profile.p, ctx.d0 * 2 ** (i + 1)) * psi_inverse(profile, ratio)
    return terms


def garsia_bound(
    g: WeightedGraph,
    ctx: MetricContext,
    f,
    x: int,
    y: int,
    profile: GarsiaProfile,
    gamma: float | None = None,
) -> float:
    """2 sum_{i=1}^{n} p(d0 2^{i+1}) psi^{-1}(Gamma / v(d0 2^{i-1})^2), n = floor(log2(d/d0)) + 1."""
    x, y = g.check_vertex(x), g.check_vertex(y)
    if x == y:
        raise SameVertex(f"x and y are both {x}")
    _require_volume(ctx, profile)
    if gamma is None:
        gamma = gamma_functional(g, ctx, f, profile)
    count = _chain_length(float(ctx.d[x, y]), ctx.d0)
    return float(2.0 * _chain_terms(ctx, profile, gamma, count).sum())


def garsia_bound_matrix(g: WeightedGraph, ctx: MetricContext, f, profile: GarsiaProfile) -> np.ndarray:
    """All-pairs chaining bounds (zero on the diagonal)."""
    _require_volume(ctx, profile)
    gamma = gamma_functional(g, ctx, f, profile)
    n = g.n
    per_radius = np.array([_chain_length(float(r), ctx.d0) for r in ctx.radii], dtype=np.int64)
    lengths = per_radius[np.searchsorted(ctx.radii, ctx.d)]
    np.fill_diagonal(lengths, 0)
    partial = np.concatenate(([0.0], np.cumsum(_chain_terms(ctx, profile, gamma, int(lengths.max())))))
    return 2.0 * partial[lengths]


def _integrand(profile: GarsiaProfile, gamma: float) -> Callable[[float], float]:
    def value(s: float) -> float:
        volume = _scalar(profile.v, s / 2.0)
        ratio = gamma / volume**2 if volume > 0 else math.inf
        return _scalar(profile.p, 4.0 * s) / s * psi_inverse(profile, ratio)

    return value


def _kink(profile: GarsiaProfile, gamma: float, d0: float) -> float | None:
    """The s at which v(s/2)^2 = Gamma, where psi^{-1}(Gamma / v(s/2)^2) reaches zero."""

    def excess(s: float) -> float:
        return _scalar(profile.v, s / 2.0) ** 2 - gamma

    low, high = d0 * 2.0**-40, d0
    if excess(low) >= 0:
        return None
    while excess(high) < 0:
        high *= 2.0
        if high > 1e300:
            return None
    return float(optimize.brentq(excess, low, high, xtol=1e-15, rtol=1e-12))


def _breakpoints(lower: float, upper: float, d0: float, kink: float | None = None) -> list[float]:
    points = {lower, upper}
    if kink is not None and lower < kink < upper:
        points.add(kink)
    k = math.floor(math.log2(max(lower, d0 * 2.0**-40) / d0)) if lower > 0 else -40
    while d0 * 2.0**k < upper:
        if d0 * 2.0**k > lower:
            points.add(d0 * 2.0**k)
        k += 1
    return sorted(points)


def _integrate(fn: Callable[[float], float], points: list[float]) -> float:
    total = 0.0
    for a, b in zip(points[:-1], points[1:]):
        if b <= a:
            continue
        piece, lo, hi = fn, a, b
        if a == 0:
            # s = u^2 tames the p(4s)/s singularity at the origin
            piece, lo, hi = (lambda u: fn(u * u) * 2.0 * u), 0.0, math.sqrt(b)
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", integrate.IntegrationWarning)
                value, error = integrate.quad(piece, lo, hi, epsabs=QUAD_ATOL * 0.1, epsrel=QUAD_RTOL * 0.1, limit=500)
        except (ZeroDivisionError, OverflowError, ValueError) as exc:
            raise QuadratureFailure(f"quadrature failed on [{a:.6g}, {b:.6g}]: {exc}") from exc
        if not math.isfinite(value) or error > QUAD_RTOL * abs(value) + QUAD_ATOL:
            detail = "; ".join(str(w.message) for w in caught)
            raise QuadratureFailure(f"quadrature on [{a:.6g}, {b:.6g}] gave {value!r} +/- {error!r} {detail}".rstrip())
        total += value
    return total


def _lower_limit(ctx: MetricContext, lower: str | float) -> float:
    if lower == "d0":
        return ctx.d0
    lower = float(lower)
    if lower < 0 or lower > ctx.d0:
        raise RangeError(f"integral lower limit must lie in [0, d0], got {lower}")
    return lower


def garsia_integral_bound(
    g: WeightedGraph,
    ctx: MetricContext,
    f,
    x: int,
    y: int,
    profile: GarsiaProfile,
    lower: str | float = "d0",
    gamma: float | None = None,
) -> float:
    """4 int_{lower}^{2 d(x, y)} p(4s)/s psi^{-1}(Gamma / v(s/2)^2) ds.

    ``lower`` is ``"d0"`` or a number in [0, d0]; pieces are split at d0 2^k.
    """
    x, y = g.check_vertex(x), g.check_vertex(y)
    if x == y:
        raise SameVertex(f"x and y are both {x}")
    _require_volume(ctx, profile)
    if gamma is None:
        gamma = gamma_functional(g, ctx, f, profile)
    a = _lower_limit(ctx, lower)
    upper = 2.0 * float(ctx.d[x, y])
    kink = _kink(profile, gamma, ctx.d0)
    return 4.0 * _integrate(_integrand(profile, gamma), _breakpoints(a, upper, ctx.d0, kink))


def garsia_integral_bounds(
    g: WeightedGraph,
    ctx: MetricContext,
    f,
    profile: GarsiaProfile,
    lower: str | float = "d0",
) -> np.ndarray:
    """All-pairs integral bounds by cumulative quadrature over the sorted realized distances."""
    _require_volume(ctx, profile)
    gamma = gamma_functional(g, ctx, f, profile)
    integrand = _integrand(profile, gamma)
    a = _lower_limit(ctx, lower)
    kink = _kink(profile, gamma, ctx.d0)

    cumulative = np.empty(len(ctx.radii))
    running = 0.0
    previous = a
    for k, distance in enumerate(ctx.radii):
        upper = 2.0 * float(distance)
        running += _integrate(integrand, _breakpoints(previous, upper, ctx.d0, kink))
        cumulative[k] = running
        previous = upper

    bounds = np.zeros_like(ctx.d)
    index = np.searchsorted(ctx.radii, ctx.d)
    off = ~np.eye(g.n, dtype=bool)
    bounds[off] = 4.0 * cumulative[index[off]]
    return bounds


@dataclass(frozen=True)
class LogLinearIntegrals:
    """Integral bounds for psi = exp(c|x|), tabulated once per metric and profile.

    Once Gamma >= v(diameter)^2 the argument of psi^{-1} never drops below one
    on the integration range, and the bound becomes 4 (A ln Gamma - B) / c where
    A and B are cumulative integrals that do not depend on f.
    """

    radii: np.ndarray
    weight_part: np.ndarray
    volume_part: np.ndarray
    c: float
    gamma_floor: float

    @classmethod
    def build(cls, ctx: MetricContext, profile: GarsiaProfile, lower: str | float = "d0") -> "LogLinearIntegrals":
        if not isinstance(profile.psi, _ExpPsi):
            raise InvalidProfile(f"profile {profile.name!r} is not of the form exp(c|x|)")
        _require_volume(ctx, profile)
        a = _lower_limit(ctx, lower)

        def weight(s: float) -> float:
            return _scalar(profile.p, 4.0 * s) / s

        def weighted_log_volume(s: float) -> float:
            return weight(s) * 2.0 * math.log(_scalar(profile.v, s / 2.0))

        weight_part = np.empty(len(ctx.radii))
        volume_part = np.empty(len(ctx.radii))
        running_weight = running_volume = 0.0
        previous = a
        for k, distance in enumerate(ctx.radii):
            points = _breakpoints(previous, 2.0 * float(distance), ctx.d0)
            running_weight += _integrate(weight, points)
            running_volume += _integrate(weighted_log_volume, points)
            weight_part[k], volume_part[k] = running_weight, running_volume
            previous = 2.0 * float(distance)
        return cls(
            radii=ctx.radii,
            weight_part=weight_part,
            volume_part=volume_part,
            c=profile.psi.c,
            gamma_floor=_scalar(profile.v, ctx.diameter) ** 2,
        )

    def applies(self, gamma: float) -> bool:
        return gamma >= self.gamma_floor

    def bounds(self, ctx: MetricContext, gamma: float) -> np.ndarray:
        if not self.applies(gamma):
            raise RangeError(f"Gamma {gamma:.6g} is below the tabulation floor {self.gamma_floor:.6g}")
        per_radius = 4.0 * (self.weight_part * math.log(gamma) - self.volume_part) / self.c
        bounds = np.zeros_like(ctx.d)
        off = ~np.eye(ctx.d.shape[0], dtype=bool)
        bounds[off] = per_radius[np.searchsorted(self.radii, ctx.d)[off]]
        return bounds


def uvd_profile(
    ctx: MetricContext,
    exponent: float,
    r_scale: float,
    c_psi: float = 1.0,
    kind: str = "exponential",
) -> GarsiaProfile:
    """Profile on the rescaled metric with v(s) = c1 (r s)^exponent, c1 fitted on the realized radii."""
    shape = PowerVolume(exponent, scale=r_scale)
    volume = shape.with_constant(ctx.fit_volume_constant(shape))
    if kind == "exponential":
        return exponential_profile(c_psi, volume)
    if kind == "gaussian":
        return gaussian_profile(c_psi, volume)
    raise InvalidProfile(f"unknown profile kind {kind!r}")


def bound_violations(f, chaining: np.ndarray, integral: np.ndarray | None = None) -> tuple[int, int]:
    """Count pairs with |f(x) - f(y)| > chaining bound, and chaining > integral bound."""
    f = np.asarray(f, dtype=float)
    off = ~np.eye(len(f), dtype=bool)
    diff = np.abs(f[:, None] - f[None, :])
    pointwise = int(np.count_nonzero((diff > chaining + BOUND_SLACK) & off))
    dominated = 0
    if integral is not None:
        dominated = int(np.count_nonzero((chaining > integral * (1 + QUAD_RTOL) + BOUND_SLACK) & off))
    return pointwise, dominated
