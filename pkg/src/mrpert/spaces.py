"""Discrete function spaces on a finite-dimensional Hilbert scale.

The scale is realized by a diagonal positive generator with eigenvalues
``lam_1 <= ... <= lam_n`` (``lam_1 >= 1``).  Fractional levels use the norm
``||x||_gamma = ||lam**gamma * x||_2``; real interpolation levels use the
quadratic K-functional.  Time-dependent objects live on graded grids of
``[0, T]`` and are integrated against power weights ``t**kappa`` whose cell
moments are evaluated in closed form.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate

from ._validation import (
    InvalidInputError,
    ParameterError,
    check_exponent,
    check_finite_array,
    check_weight,
)

__all__ = [
    "HilbertScale",
    "InterpLevel",
    "trace_level",
    "TimeGrid",
    "GridFunction",
    "CellFunction",
    "NormComponent",
    "power_moment",
    "level_norm",
    "quadratic_k_functional",
    "real_interp_norm",
    "weighted_lp_norm",
    "derivative_lp_norm",
    "mr_norm",
    "rung_norm",
    "trace_sup_norm",
    "ep_norm",
    "sum_norm_upper",
]

# three-point Gauss-Legendre rule mapped to [0, 1]
_GX, _GW = np.polynomial.legendre.leggauss(3)
GAUSS_POINTS = (_GX + 1.0) / 2.0
GAUSS_WEIGHTS = _GW / 2.0

_POINTS_PER_DECADE = 200
_DECADES_BEYOND = 6.0


@dataclass(frozen=True, eq=False)
class HilbertScale:
    """Diagonal realization of the scale ``X_gamma``.

    Parameters
    ----------
    eigenvalues : array_like
        Generator eigenvalues, sorted ascending, smallest at least 1 so that
        every embedding ``X_gamma' -> X_gamma`` (gamma <= gamma') has norm 1.
    gamma_star : float
        Top of the scale is ``X_{1 + gamma_star}``.
    """

    eigenvalues: np.ndarray
    gamma_star: float = 1.0

    def __post_init__(self):
        lam = check_finite_array(self.eigenvalues, "eigenvalues").reshape(-1)
        if lam.size == 0:
            raise InvalidInputError("scale needs at least one eigenvalue")
        if np.any(np.diff(lam) < 0):
            raise InvalidInputError("eigenvalues must be sorted ascending")
        if lam[0] < 1.0:
            raise InvalidInputError(
                f"smallest eigenvalue must be >= 1 (got {lam[0]}) so embeddings have constant 1"
            )
        gs = float(self.gamma_star)
        if not 0.0 < gs <= 1.0:
            raise ParameterError(f"gamma_star must lie in (0, 1], got {gs}")
        lam = lam.copy()
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "gamma_star", gs)

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def weights(self, level: float) -> np.ndarray:
        return self.eigenvalues ** float(level)

    def norm(self, x, level: float = 0.0):
        """Fractional-power norm along the last axis."""
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x * self.weights(level), axis=-1)

    def _key(self):
        return (self.eigenvalues.tobytes(), self.gamma_star)

    def __eq__(self, other):
        return isinstance(other, HilbertScale) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        return f"HilbertScale(n={self.dim}, lam=[{self.eigenvalues[0]:.4g}..{self.eigenvalues[-1]:.4g}], gamma_star={self.gamma_star})"


class InterpLevel(NamedTuple):
    """Real interpolation level ``(X_0, X_upper)_{theta, q}``.

    ``upper=None`` means the top of the scale ``1 + gamma_star``.
    """

    theta: float
    q: float
    upper: float | None = None


def trace_level(p: float, kappa: float = 0.0) -> InterpLevel:
    """Trace space ``(X_0, X_1)_{1-(1+kappa)/p, p}`` of the weighted MR class."""
    theta = 1.0 - (1.0 + kappa) / p
    if not 0.0 < theta < 1.0:
        raise ParameterError(f"trace exponent {theta} not in (0, 1)")
    return InterpLevel(theta, float(p), 1.0)


def power_moment(a, b, exponent: float):
    """Closed form of ``int_a^b t**exponent dt`` (elementwise, 0 <= a <= b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    e = float(exponent)
    if e == -1.0:
        with np.errstate(divide="ignore"):
            return np.log(b) - np.log(a)
    e1 = e + 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (np.power(b, e1) - np.power(a, e1)) / e1
    return np.where(b > a, out, 0.0)


# ---------------------------------------------------------------------------
# real interpolation


@functools.lru_cache(maxsize=64)
def _interp_table(eig_bytes: bytes, upper: float):
    lam = np.frombuffer(eig_bytes, dtype=float)
    mu = lam**upper
    lo = np.log10(10.0**-_DECADES_BEYOND / mu[-1])
    hi = np.log10(10.0**_DECADES_BEYOND / mu[0])
    npts = int(np.ceil((hi - lo) * _POINTS_PER_DECADE)) + 1
    log_t = np.linspace(lo, hi, npts) * np.log(10.0)
    t = np.exp(log_t)
    tm = t[:, None] * mu[None, :]
    kweights = tm**2 / (1.0 + tm**2)
    return log_t, kweights, mu


def _upper(scale: HilbertScale, upper):
    return 1.0 + scale.gamma_star if upper is None else float(upper)


def quadratic_k_functional(t, x, scale: HilbertScale, upper=None):
    """``K_2(t, x)`` for the couple ``(X_0, X_upper)``; broadcasts over t."""
    mu = scale.eigenvalues ** _upper(scale, upper)
    t = np.asarray(t, dtype=float)[..., None]
    tm = t * mu
    x = np.asarray(x, dtype=float)
    return np.sqrt(np.sum(tm**2 / (1.0 + tm**2) * x**2, axis=-1))


def real_interp_norm(x, theta: float, q: float, scale: HilbertScale, upper=None):
    """Quadratic-K-functional norm of ``x`` in ``(X_0, X_upper)_{theta, q}``.

    The dt/t integral runs over a log-spaced grid (200 points per decade)
    extending six decades past the spectrum on both sides; the two
    truncated tails are added in closed form from the small-t and large-t
    asymptotics of K_2.  Accepts a single vector or a stack of shape (k, n).
    """
    theta = float(theta)
    if not 0.0 < theta < 1.0:
        raise ParameterError(f"theta must lie in (0, 1), got {theta}")
    q = float(q)
    if q < 1.0:
        raise ParameterError(f"q must be >= 1, got {q}")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[-1] != scale.dim:
        raise InvalidInputError(f"vector length {X.shape[-1]} != scale dimension {scale.dim}")
    up = _upper(scale, upper)
    log_t, kweights, mu = _interp_table(scale.eigenvalues.tobytes(), up)
    ksq = (X**2) @ kweights.T  # (k, nt)
    with np.errstate(divide="ignore"):
        log_k = 0.5 * np.log(ksq)
    if np.isinf(q):
        out = np.max(np.exp(log_k - theta * log_t), axis=1)
    else:
        integrand = np.exp(q * (log_k - theta * log_t))
        body = integrate.trapezoid(integrand, log_t, axis=1)
        t0, t1 = np.exp(log_t[0]), np.exp(log_t[-1])
        low = np.linalg.norm(X * mu, axis=1) ** q * t0 ** (q * (1 - theta)) / (q * (1 - theta))
        high = np.linalg.norm(X, axis=1) ** q * t1 ** (-q * theta) / (q * theta)
        out = (body + low + high) ** (1.0 / q)
    return float(out[0]) if single else out


def level_norm(values, level, scale: HilbertScale | None):
    """Norm of each row of ``values`` at a fractional or interpolation level."""
    values = np.asarray(values, dtype=float)
    if isinstance(level, InterpLevel):
        if scale is None:
            raise InvalidInputError("an interpolation level needs a HilbertScale")
        return real_interp_norm(np.atleast_2d(values), level.theta, level.q, scale, level.upper)
    level = float(level)
    if level == 0.0 or scale is None:
        if level != 0.0:
            raise InvalidInputError(f"level {level} needs a HilbertScale")
        return np.linalg.norm(values, axis=-1)
    return scale.norm(values, level)


# ---------------------------------------------------------------------------
# time grids and grid functions


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Partition ``0 = t_0 < ... < t_m = T`` of a time interval."""

    nodes: np.ndarray
    grading: float = 1.0

    def __post_init__(self):
        nodes = check_finite_array(self.nodes, "nodes", ndim=1).copy()
        if nodes.size < 2:
            raise InvalidInputError("a grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise InvalidInputError("first node must be exactly 0")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidInputError("nodes must be strictly increasing")
        if self.grading < 1:
            raise ParameterError(f"grading exponent must be >= 1, got {self.grading}")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "grading", float(self.grading))

    @classmethod
    def graded(cls, T: float, m: int, grading: float = 3.0) -> "TimeGrid":
        """Nodes ``T * (j/m)**grading``, clustered toward 0."""
        if T <= 0 or m < 1:
            raise ParameterError("need T > 0 and m >= 1")
        nodes = T * (np.arange(m + 1) / m) ** grading
        nodes[-1] = T
        return cls(nodes, grading)

    @classmethod
    def uniform(cls, T: float, m: int) -> "TimeGrid":
        return cls.graded(T, m, 1.0)

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def m(self) -> int:
        return self.nodes.shape[0] - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def refine(self, factor: int = 2) -> "TimeGrid":
        """Split every cell into ``factor`` equal parts."""
        factor = int(factor)
        if factor == 1:
            return self
        frac = np.arange(factor) / factor
        inner = self.nodes[:-1, None] + self.steps[:, None] * frac[None, :]
        return TimeGrid(np.append(inner.ravel(), self.T), self.grading)

    def weight_moments(self, kappa: float, interval=None) -> np.ndarray:
        """Per-cell ``int t**kappa`` over cells clipped to ``interval``."""
        lo, hi = self._clip(interval)
        return power_moment(lo, hi, kappa)

    def _clip(self, interval):
        a, b = (0.0, self.T) if interval is None else (float(interval[0]), float(interval[1]))
        lo = np.clip(self.nodes[:-1], a, b)
        hi = np.clip(self.nodes[1:], a, b)
        return lo, hi

    def index_of(self, t: float) -> int:
        """Index of the node equal to ``t`` (within rounding), else error."""
        j = int(np.argmin(np.abs(self.nodes - t)))
        if abs(self.nodes[j] - t) > 1e-12 * max(1.0, self.T):
            raise InvalidInputError(f"time {t} is not a grid node")
        return j

    def cell_of(self, times) -> np.ndarray:
        idx = np.searchsorted(self.nodes, times, side="right") - 1
        return np.clip(idx, 0, self.m - 1)

    def contains(self, other: "TimeGrid") -> bool:
        """True when every node of ``other`` is a node of this grid."""
        pos = np.searchsorted(self.nodes, other.nodes)
        pos = np.clip(pos, 0, self.m)
        near = np.minimum(
            np.abs(self.nodes[pos] - other.nodes),
            np.abs(self.nodes[np.maximum(pos - 1, 0)] - other.nodes),
        )
        return bool(np.all(near <= 1e-13 * max(1.0, self.T)))

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.nodes, other.nodes)

    def __hash__(self):
        return hash(self.nodes.tobytes())

    def __repr__(self):
        return f"TimeGrid(T={self.T}, m={self.m}, grading={self.grading})"


def _as_values(values, m1) -> np.ndarray:
    vals = check_finite_array(values, "values")
    if vals.ndim == 1:
        vals = vals[:, None]
    if vals.ndim != 2 or vals.shape[0] != m1:
        raise InvalidInputError(f"values must have leading length {m1}, got shape {vals.shape}")
    vals = vals.copy()
    vals.setflags(write=False)
    return vals


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Nodal values of a trajectory, interpolated piecewise linearly.

    ``level`` records which ``X_gamma`` the values are meant to live in; it is
    informational and does not change any norm computation.
    """

    grid: TimeGrid
    values: np.ndarray
    level: float = 0.0
    scale: HilbertScale | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", _as_values(self.values, self.grid.m + 1))
        if self.scale is not None and self.scale.dim != self.values.shape[1]:
            raise InvalidInputError("value dimension does not match the scale")

    @classmethod
    def from_callable(cls, grid, func, level=0.0, scale=None) -> "GridFunction":
        """Sample ``func`` at the nodes.

        A non-finite value at ``t = 0`` (integrable singularity) is replaced
        by the value at the first positive node; the resulting first-cell
        error vanishes under refinement.
        """
        t = grid.nodes
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = np.asarray(func(t), dtype=float)
        if raw.ndim == 1:
            raw = raw[:, None]
        raw = raw.copy()
        if not np.all(np.isfinite(raw[0])):
            raw[0] = raw[1]
        return cls(grid, raw, level, scale)

    @classmethod
    def zeros(cls, grid, dim, level=0.0, scale=None):
        return cls(grid, np.zeros((grid.m + 1, dim)), level, scale)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def evaluate(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        j = self.grid.cell_of(times)
        t0 = self.grid.nodes[j]
        h = self.grid.steps[j]
        s = ((times - t0) / h)[:, None]
        return (1.0 - s) * self.values[j] + s * self.values[j + 1]

    def derivative(self) -> np.ndarray:
        """Backward difference quotient, one row per cell."""
        return np.diff(self.values, axis=0) / self.grid.steps[:, None]

    def cell_linear(self, grid: TimeGrid):
        """Left/right endpoint values on the cells of ``grid``."""
        return self.evaluate(grid.nodes[:-1]), self.evaluate(grid.nodes[1:])

    def restrict(self, grid: TimeGrid) -> "GridFunction":
        """Values on a sub-grid (every node of ``grid`` must be a node here)."""
        if not self.grid.contains(grid):
            raise InvalidInputError("target grid is not contained in the source grid")
        return GridFunction(grid, self.evaluate(grid.nodes), self.level, self.scale)

    def _binary(self, other, op):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise InvalidInputError("grid functions live on different grids")
            other = other.values
        return GridFunction(self.grid, op(self.values, other), self.level, self.scale)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, c):
        return GridFunction(self.grid, self.values * c, self.level, self.scale)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


@dataclass(frozen=True, eq=False)
class CellFunction:
    """Piecewise-constant function, one value row per grid cell."""

    grid: TimeGrid
    values: np.ndarray
    level: float = 0.0
    scale: HilbertScale | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", _as_values(self.values, self.grid.m))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def evaluate(self, times) -> np.ndarray:
        return self.values[self.grid.cell_of(np.asarray(times, dtype=float))]

    def cell_linear(self, grid: TimeGrid):
        mid = 0.5 * (grid.nodes[:-1] + grid.nodes[1:])
        v = self.evaluate(mid)
        return v, v

    def __mul__(self, c):
        return CellFunction(self.grid, self.values * c, self.level, self.scale)

    __rmul__ = __mul__


class NormComponent(NamedTuple):
    """One term of an explicit sum-space decomposition.

    ``kind='lp'`` prices ``func`` in ``L^p(w_weight; X_level)``;
    ``kind='mr'`` prices it in the rung
    ``L^p(w_weight; X_{1+level}) cap W^{1,p}(w_weight; X_level)``.
    """

    func: object
    p: float
    weight: float
    level: object = 0.0
    kind: str = "lp"


# ---------------------------------------------------------------------------
# weighted norms


def _scale_of(u, scale):
    return scale if scale is not None else getattr(u, "scale", None)


def _grid_of(u):
    grid = getattr(u, "grid", None)
    if grid is None:
        raise InvalidInputError(f"{type(u).__name__} has no time grid; pass one explicitly")
    return grid


def _interval(grid, interval):
    if interval is None:
        return (0.0, grid.T)
    a, b = float(interval[0]), float(interval[1])
    if not 0.0 <= a < b <= grid.T * (1 + 1e-14):
        raise ParameterError(f"interval ({a}, {b}) not inside (0, {grid.T})")
    return (a, min(b, grid.T))


def _gauss_samples(grid: TimeGrid, kappa: float, interval):
    lo, hi = grid._clip(interval)
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    times = lo[:, None] + (hi - lo)[:, None] * GAUSS_POINTS[None, :]
    weights = power_moment(lo, hi, kappa)[:, None] * GAUSS_WEIGHTS[None, :]
    return times.ravel(), weights.ravel()


def weighted_lp_norm(u, p, kappa=0.0, level=0.0, interval=None, scale=None, grid=None) -> float:
    """``L^p(a, b, w_kappa; X_level)`` norm of a time function.

    Any weight ``kappa >= 0`` is accepted here (t**kappa is integrable);
    the restriction ``kappa < p - 1`` belongs to the maximal-regularity
    norms built on top of this one.

    Grid-based functions are sampled at three Gauss points per cell and each
    sampled ``||u||**p`` is integrated against the exact weight moment of the
    cell.  Objects that know their norm in closed form (separable sources)
    provide ``exact_weighted_norm``.
    """
    p = check_exponent(p, allow_one=True)
    kappa = check_weight(p, kappa, touches_zero=False)
    scale = _scale_of(u, scale)
    exact = getattr(u, "exact_weighted_norm", None)
    if exact is not None:
        span = (0.0, u.T) if interval is None else (float(interval[0]), float(interval[1]))
        return exact(p, kappa, level, span, scale)
    grid = grid if grid is not None else _grid_of(u)
    a, b = _interval(grid, interval)
    times, weights = _gauss_samples(grid, kappa, (a, b))
    if times.size == 0:
        return 0.0
    norms = level_norm(u.evaluate(times), level, scale)
    if np.isinf(p):
        return float(np.max(norms))
    return float(np.sum(weights * norms**p) ** (1.0 / p))


def derivative_lp_norm(u: GridFunction, p, kappa=0.0, level=0.0, interval=None, scale=None) -> float:
    """Weighted L^p norm of the per-cell backward difference quotient."""
    p = check_exponent(p)
    a, b = _interval(u.grid, interval)
    kappa = check_weight(p, kappa, touches_zero=False)
    moments = u.grid.weight_moments(kappa, (a, b))
    keep = moments > 0
    norms = level_norm(u.derivative()[keep], level, _scale_of(u, scale))
    return float(np.sum(moments[keep] * norms**p) ** (1.0 / p))


def rung_norm(u: GridFunction, p, kappa=0.0, level=0.0, interval=None, scale=None) -> float:
    """``max(||u||_{L^p(X_{1+level})}, ||u||_{W^{1,p}(X_level)})`` with weight t^kappa.

    The W^{1,p} part is the max of the L^p norms of ``u`` and of its
    discrete derivative.  The weight must satisfy ``kappa < p - 1`` on
    intervals touching 0.
    """
    a, _ = _interval(u.grid, interval)
    check_weight(float(p), kappa, touches_zero=(a == 0.0))
    top = weighted_lp_norm(u, p, kappa, float(level) + 1.0, interval, scale)
    low = weighted_lp_norm(u, p, kappa, level, interval, scale)
    der = derivative_lp_norm(u, p, kappa, level, interval, scale)
    return max(top, low, der)


def mr_norm(u: GridFunction, p, kappa=0.0, interval=None, scale=None) -> float:
    """Weighted maximal-regularity norm ``MR^p(a, b, w_kappa)``."""
    return rung_norm(u, p, kappa, 0.0, interval, scale)


def trace_sup_norm(u: GridFunction, weight_exponent=0.0, level=0.0, interval=None, scale=None) -> float:
    """``max_t t**exponent * ||u(t)||_level`` over grid nodes.

    ``t = 0`` is included only when the exponent is zero.
    """
    e = float(weight_exponent)
    if e < 0:
        raise ParameterError("weight exponent must be >= 0")
    a, b = _interval(u.grid, interval)
    t = u.grid.nodes
    keep = (t >= a - 1e-15) & (t <= b + 1e-15)
    if e > 0:
        keep &= t > 0
    if not np.any(keep):
        return 0.0
    norms = level_norm(u.values[keep], level, _scale_of(u, scale))
    return float(np.max(t[keep] ** e * norms))


def ep_norm(u: GridFunction, p, interval=None, scale=None) -> float:
    """Norm of ``L^p(X_1) cap C((X_0, X_1)_{1-1/p, p})`` taken as the max of both parts."""
    lp = weighted_lp_norm(u, p, 0.0, 1.0, interval, scale)
    sup = trace_sup_norm(u, 0.0, trace_level(p), interval, scale)
    return max(lp, sup)


def sum_norm_upper(components: Sequence, scale=None) -> float:
    """Sum of the component norms of an explicit decomposition.

    This is an upper bound for the sum-space norm; the infimum over all
    decompositions is not computed.
    """
    comps = [c if isinstance(c, NormComponent) else NormComponent(*c) for c in components]
    grids = [getattr(c.func, "grid", None) for c in comps]
    grids = [g for g in grids if g is not None]
    if any(g.T != grids[0].T for g in grids[1:]):
        raise InvalidInputError("components live on different time intervals")
    nodal = [c.func.grid for c in comps if isinstance(c.func, GridFunction)]
    if any(g != nodal[0] for g in nodal[1:]):
        raise InvalidInputError("grid-function components live on different grids")
    total = 0.0
    for c in comps:
        if c.kind == "mr":
            total += rung_norm(c.func, c.p, c.weight, c.level, scale=scale)
        elif c.kind == "lp":
            total += weighted_lp_norm(c.func, c.p, c.weight, c.level, scale=scale, grid=grids[0] if grids else None)
        else:
            raise ParameterError(f"unknown component kind {c.kind!r}")
    return total
