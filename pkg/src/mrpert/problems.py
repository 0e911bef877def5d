"""Model problems: operator families, singular perturbations, right-hand sides.

Every concrete problem is diagonal on a :class:`~mrpert.spaces.HilbertScale`
(one non-normal Jordan example aside), so per-mode scalar closed forms are
available as oracles.  Scalar time profiles (envelopes, forcing shapes,
operator multipliers) are stored symbolically so that their weighted
Lebesgue norms over any subinterval are closed-form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import optimize, special

from ._validation import (
    EnvelopeClassError,
    InvalidInputError,
    ParameterError,
    check_finite_array,
    check_vector,
)
from .spaces import (
    CellFunction,
    GridFunction,
    HilbertScale,
    InterpLevel,
    NormComponent,
    TimeGrid,
    level_norm,
    power_moment,
    trace_level,
    weighted_lp_norm,
)

__all__ = [
    "TimeProfile",
    "PowerEnvelope",
    "ConstantEnvelope",
    "PiecewiseEnvelope",
    "zero_envelope",
    "envelope_from_config",
    "OperatorFamily",
    "make_diagonal",
    "make_diagonal_heat",
    "make_geometric",
    "make_jordan_example",
    "make_nonautonomous",
    "random_step_profile",
    "PerturbationComponent",
    "Perturbation",
    "make_perturbation",
    "interp_eigen_constant",
    "SeparableSource",
    "InhomogeneityComponent",
    "Inhomogeneity",
    "make_inhomogeneity",
    "random_cell_forcing",
    "random_smooth_forcing",
]


# ---------------------------------------------------------------------------
# scalar time profiles


class TimeProfile:
    """Scalar function of time with closed-form weighted power integrals.

    Subclasses implement ``__call__``, ``weighted_power_integral`` and
    ``moment``.  The same objects serve as perturbation envelopes, forcing
    shapes and operator multipliers.
    """

    def __call__(self, t):
        raise NotImplementedError

    def weighted_power_integral(self, q, mu, a, b) -> float:
        """``int_a^b t**mu |phi(t)|**q dt``."""
        raise NotImplementedError

    def moment(self, lo, hi, k: int = 0) -> np.ndarray:
        """Elementwise ``int_lo^hi t**k phi(t) dt``."""
        raise NotImplementedError

    def norm(self, q, mu=0.0, interval=(0.0, 1.0)) -> float:
        a, b = interval
        if np.isinf(q):
            t = np.linspace(a, b, 2049)[1:]
            return float(np.max(np.abs(self(t))))
        return float(self.weighted_power_integral(q, mu, a, b) ** (1.0 / q))

    def in_class(self, q, mu, T) -> bool:
        """Finite ``L^q(0, T; w_mu)`` norm."""
        return bool(np.isfinite(self.weighted_power_integral(q, mu, 0.0, T)))

    def is_zero(self) -> bool:
        return False

    def nonnegative(self) -> bool:
        return True

    def cell_means(self, grid: TimeGrid) -> np.ndarray:
        lo, hi = grid.nodes[:-1], grid.nodes[1:]
        return self.moment(lo, hi, 0) / (hi - lo)

    def invert(self, q, mu, a, budget, T) -> float:
        """Largest ``sigma <= T`` with ``||phi||_{L^q(a, sigma; w_mu)} <= budget``."""
        target = budget**q

        def excess(s):
            return self.weighted_power_integral(q, mu, a, s) - target

        if excess(T) <= 1e-12 * target:
            return float(T)
        return float(optimize.brentq(excess, a, T, xtol=1e-15, rtol=1e-14))

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class PowerEnvelope(TimeProfile):
    """``phi(t) = c * t**(-alpha)``."""

    c: float
    alpha: float = 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.alpha == 0.0:
            return np.full_like(t, self.c)
        with np.errstate(divide="ignore"):
            return self.c * np.power(t, -self.alpha)

    def weighted_power_integral(self, q, mu, a, b) -> float:
        if self.c == 0.0 or b <= a:
            return 0.0
        e = float(mu) - self.alpha * float(q)
        if a == 0.0 and e <= -1.0:
            return math.inf
        return abs(self.c) ** q * float(power_moment(a, b, e))

    def moment(self, lo, hi, k: int = 0):
        if self.c == 0.0:
            return np.zeros_like(np.asarray(lo, dtype=float))
        return self.c * power_moment(lo, hi, k - self.alpha)

    def is_zero(self) -> bool:
        return self.c == 0.0

    def nonnegative(self) -> bool:
        return self.c >= 0.0

    def invert(self, q, mu, a, budget, T) -> float:
        if self.c == 0.0:
            return float(T)
        q = float(q)
        e = float(mu) - self.alpha * q
        if a == 0.0 and e <= -1.0:
            raise EnvelopeClassError("envelope is not integrable at 0")
        mass = (budget / abs(self.c)) ** q
        if e == -1.0:
            sigma = a * math.exp(mass)
        else:
            base = a ** (e + 1.0) + (e + 1.0) * mass
            sigma = math.inf if base <= 0 else base ** (1.0 / (e + 1.0))
        if sigma >= T or self.weighted_power_integral(q, mu, a, T) <= budget**q * (1 + 1e-12):
            return float(T)
        return float(sigma)

    def to_config(self) -> dict:
        return {"shape": "power", "c": self.c, "alpha": self.alpha}


def ConstantEnvelope(c: float) -> PowerEnvelope:
    """Constant profile ``phi(t) = c``."""
    return PowerEnvelope(float(c), 0.0)


def zero_envelope() -> PowerEnvelope:
    return PowerEnvelope(0.0, 0.0)


@dataclass(frozen=True)
class PiecewiseEnvelope(TimeProfile):
    """Piecewise-constant profile: ``values[k]`` on ``[breaks[k], breaks[k+1])``, 0 beyond."""

    breaks: tuple
    values: tuple

    def __post_init__(self):
        br = tuple(float(b) for b in self.breaks)
        vals = tuple(float(v) for v in self.values)
        if len(br) != len(vals) + 1 or br[0] != 0.0 or any(np.diff(br) <= 0):
            raise InvalidInputError("breaks must start at 0, increase, and have len(values)+1 entries")
        object.__setattr__(self, "breaks", br)
        object.__setattr__(self, "values", vals)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breaks, t, side="right") - 1
        vals = np.append(np.asarray(self.values), 0.0)
        idx = np.where((idx < 0) | (idx >= len(self.values)), len(self.values), idx)
        return vals[idx]

    def _pieces(self):
        return zip(self.breaks[:-1], self.breaks[1:], self.values)

    def weighted_power_integral(self, q, mu, a, b) -> float:
        total = 0.0
        for lo, hi, v in self._pieces():
            lo, hi = max(lo, a), min(hi, b)
            if hi > lo and v != 0.0:
                total += abs(v) ** q * float(power_moment(lo, hi, mu))
        return total

    def moment(self, lo, hi, k: int = 0):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        out = np.zeros(np.broadcast(lo, hi).shape)
        for plo, phi, v in self._pieces():
            a = np.clip(lo, plo, phi)
            b = np.clip(hi, plo, phi)
            out += v * power_moment(a, b, k)
        return out

    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.values)

    def nonnegative(self) -> bool:
        return all(v >= 0.0 for v in self.values)

    def to_config(self) -> dict:
        return {"shape": "piecewise", "breaks": list(self.breaks), "values": list(self.values)}


def envelope_from_config(cfg: dict) -> TimeProfile:
    shape = cfg.get("shape", "power")
    if shape in ("power", "constant", "zero"):
        return PowerEnvelope(float(cfg.get("c", 0.0 if shape == "zero" else 1.0)), float(cfg.get("alpha", 0.0)))
    if shape == "piecewise":
        return PiecewiseEnvelope(tuple(cfg["breaks"]), tuple(cfg["values"]))
    raise ParameterError(f"unknown envelope shape {shape!r}")


def random_step_profile(pieces: int, low: float, high: float, T: float, rng) -> PiecewiseEnvelope:
    """Random piecewise-constant profile with ``pieces`` equal steps in ``[low, high]``."""
    breaks = np.linspace(0.0, T, pieces + 1)
    values = rng.uniform(low, high, size=pieces)
    return PiecewiseEnvelope(tuple(breaks), tuple(values))


# ---------------------------------------------------------------------------
# operator families


@dataclass(frozen=True, eq=False)
class OperatorFamily:
    """``A(t) = a(t) * matrix`` on a Hilbert scale; ``a = None`` means autonomous."""

    scale: HilbertScale
    matrix: np.ndarray
    profile: TimeProfile | None = None
    mapping_constant: float | None = None
    name: str = ""

    def __post_init__(self):
        mat = check_finite_array(self.matrix, "matrix", ndim=2).copy()
        n = self.scale.dim
        if mat.shape != (n, n):
            raise InvalidInputError(f"matrix shape {mat.shape} does not match scale dimension {n}")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def dim(self) -> int:
        return self.scale.dim

    @property
    def autonomous(self) -> bool:
        return self.profile is None

    @property
    def diagonal(self) -> bool:
        return bool(np.count_nonzero(self.matrix - np.diag(np.diag(self.matrix))) == 0)

    @property
    def diag(self) -> np.ndarray:
        return np.diag(self.matrix).copy()

    def matrix_at(self, t: float) -> np.ndarray:
        if self.profile is None:
            return self.matrix.copy()
        return float(self.profile(np.array([t]))[0]) * self.matrix

    evaluator = matrix_at

    def cell_factors(self, grid: TimeGrid) -> np.ndarray:
        """Cell mean of the scalar profile (ones when autonomous)."""
        if self.profile is None:
            return np.ones(grid.m)
        return self.profile.cell_means(grid)

    def time_average(self, T: float) -> "OperatorFamily":
        """Autonomous family with the profile replaced by its mean over ``(0, T)``."""
        if self.profile is None:
            return self
        mean = float(self.profile.moment(0.0, T, 0)) / T
        return OperatorFamily(self.scale, mean * self.matrix, None, self.mapping_constant, self.name + "-avg")


def make_diagonal(eigenvalues, gamma_star: float = 1.0, name="diagonal"):
    """Autonomous diagonal family ``A = diag(lam)`` on its own scale."""
    scale = HilbertScale(np.asarray(eigenvalues, dtype=float), gamma_star)
    family = OperatorFamily(scale, np.diag(scale.eigenvalues), None, 1.0, name)
    return scale, family


def make_diagonal_heat(n: int, T: float = 1.0, gamma_star: float = 1.0):
    """Spectral Galerkin truncation of the Dirichlet Laplacian shifted by one."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    if T <= 0:
        raise ParameterError("T must be > 0")
    lam = 1.0 + (np.arange(1, n + 1) * np.pi) ** 2
    return make_diagonal(lam, gamma_star, name=f"heat{n}")


def make_geometric(n: int, lam_min: float = 1.0, lam_max: float = 1e4, gamma_star: float = 1.0):
    """Log-uniformly spaced spectrum; approximates a scale-invariant continuum of modes."""
    lam = np.geomspace(lam_min, lam_max, n)
    return make_diagonal(lam, gamma_star, name=f"geom{n}")


def make_jordan_example(n: int = 4, coupling: float = 1.0, gamma_star: float = 1.0):
    """Heat spectrum with a non-normal 2x2 block ``[[l1, c*l1], [0, l2]]`` in the first two modes."""
    if n < 2:
        raise ParameterError("the Jordan example needs n >= 2")
    scale, fam = make_diagonal_heat(n, gamma_star=gamma_star)
    mat = np.array(fam.matrix)
    mat[0, 1] = coupling * scale.eigenvalues[0]
    return scale, OperatorFamily(scale, mat, None, None, "jordan")


def make_nonautonomous(base: OperatorFamily, profile: TimeProfile, bounds=None) -> OperatorFamily:
    """``t -> a(t) * A`` for a positive bounded profile ``a``."""
    if not base.autonomous:
        raise ParameterError("base family must be autonomous")
    if isinstance(profile, PiecewiseEnvelope):
        vals = np.asarray(profile.values)
    elif isinstance(profile, PowerEnvelope):
        if profile.alpha != 0.0:
            raise ParameterError("operator profiles must be bounded")
        vals = np.array([profile.c])
    else:
        vals = np.asarray(profile(np.linspace(0, 1, 257)))
    if np.any(vals <= 0):
        raise ParameterError("operator profile must be positive")
    if bounds is not None and (vals.min() < bounds[0] or vals.max() > bounds[1]):
        raise ParameterError(f"profile leaves the declared bounds {bounds}")
    return OperatorFamily(base.scale, base.matrix, profile, base.mapping_constant, base.name + "-nonaut")


# ---------------------------------------------------------------------------
# perturbations


def interp_eigen_constant(theta: float, q: float) -> float:
    """Norm of a unit eigenvector with eigenvalue 1 in the quadratic-K space ``(theta, q)``.

    Equals ``(B(q(1-theta)/2, q*theta/2) / 2)**(1/q)``; an eigenvector with
    generator eigenvalue ``mu`` has norm ``mu**theta`` times this.
    """
    return float((0.5 * special.beta(q * (1 - theta) / 2, q * theta / 2)) ** (1.0 / q))


@dataclass(frozen=True, eq=False)
class PerturbationComponent:
    """``B_i(t) = sign * b_i(t) * matrix`` from ``domain_level`` into ``target_level``."""

    matrix: np.ndarray
    envelope: TimeProfile
    kind: str
    domain_level: object = 1.0
    target_level: object = 0.0
    q_b: float | None = None
    mu_b: float = 0.0
    triple: tuple | None = None
    sign: float = 1.0

    @property
    def diagonal(self) -> bool:
        m = self.matrix
        return bool(np.count_nonzero(m - np.diag(np.diag(m))) == 0)


@dataclass(frozen=True, eq=False)
class Perturbation:
    """Finite sum of scalar-envelope perturbations ``B = sum_i B_i``."""

    scale: HilbertScale
    components: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    @classmethod
    def zero(cls, scale):
        return cls(scale, ())

    @property
    def dim(self) -> int:
        return self.scale.dim

    def is_zero(self) -> bool:
        return all(c.envelope.is_zero() for c in self.components)

    @property
    def diagonal(self) -> bool:
        return all(c.diagonal for c in self.components)

    def cell_matrices(self, grid: TimeGrid) -> np.ndarray:
        """Cell averages of ``B``: shape (m, n) if diagonal, else (m, n, n)."""
        lo, hi = grid.nodes[:-1], grid.nodes[1:]
        if self.diagonal:
            out = np.zeros((grid.m, self.dim))
            for c in self.components:
                if not c.envelope.is_zero():
                    mean = c.envelope.moment(lo, hi, 0) / (hi - lo)
                    out += c.sign * mean[:, None] * np.diag(c.matrix)[None, :]
            return out
        out = np.zeros((grid.m, self.dim, self.dim))
        for c in self.components:
            if not c.envelope.is_zero():
                mean = c.envelope.moment(lo, hi, 0) / (hi - lo)
                out += c.sign * mean[:, None, None] * c.matrix[None]
        return out

    def apply(self, times, values, component=None) -> np.ndarray:
        """``B(t) x`` row by row for values of shape (k, n)."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        comps = self.components if component is None else (self.components[component],)
        out = np.zeros_like(values)
        for c in comps:
            if not c.envelope.is_zero():
                out += c.sign * c.envelope(times)[:, None] * (values @ c.matrix.T)
        return out

    def scaled(self, factor: float) -> "Perturbation":
        """``factor * B`` (signs absorb negative factors)."""
        comps = []
        for c in self.components:
            comps.append(PerturbationComponent(c.matrix, c.envelope, c.kind, c.domain_level, c.target_level,
                                               c.q_b, c.mu_b, c.triple, c.sign * float(factor)))
        return Perturbation(self.scale, tuple(comps))

    def operator_norm_ratio(self, component: int = 0, samples: int = 64, seed: int = 0) -> float:
        """Operator norm of ``matrix`` from domain into target level.

        Exact for fractional levels and diagonal matrices; for interpolation
        levels the max over basis vectors and random vectors is returned.
        """
        c = self.components[component]
        lam = self.scale.eigenvalues
        frac = not isinstance(c.domain_level, InterpLevel) and not isinstance(c.target_level, InterpLevel)
        if frac and c.diagonal:
            d = np.abs(np.diag(c.matrix)) * lam ** (float(c.target_level) - float(c.domain_level))
            return float(np.max(d))
        rng = np.random.default_rng(seed)
        X = np.vstack([np.eye(self.dim), rng.standard_normal((samples, self.dim))])
        num = level_norm(X @ c.matrix.T, c.target_level, self.scale)
        den = level_norm(X, c.domain_level, self.scale)
        return float(np.max(num / den))

    def envelope_check(self, times, tol: float = 1e-12) -> bool:
        """Operator norm of ``B_i(t)`` is at most ``b_i(t) (1 + tol)`` at every sampled time."""
        for i, c in enumerate(self.components):
            ratio = self.operator_norm_ratio(i) * abs(c.sign)
            if isinstance(c.domain_level, InterpLevel) or isinstance(c.target_level, InterpLevel):
                # interpolation norms carry quadrature error well above rounding
                tol = max(tol, 1e-8)
            b = np.abs(c.envelope(np.asarray(times, dtype=float)))
            if np.any(ratio * b > b * (1 + tol) + 1e-300):
                return False
        return True


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x).limit_denominator(10**6)


def make_perturbation(scale: HilbertScale, kind: str, envelope: TimeProfile, *, p=None, kappa=0.0,
                      q=None, triple=None, sign: float = 1.0, T=None) -> Perturbation:
    """Diagonal perturbation ``B(t) = sign * b(t) * Lambda``.

    kind ``lower_order``: ``Lambda = lam**(1-1/q)`` from ``X_{1-1/q}`` into ``X_0``;
        with ``q == p`` the domain is the trace space ``(X_0, X_1)_{1-1/p,p}``
        and ``Lambda`` is a scaled ``lam**(1-1/p)`` bounded by that norm.
    kind ``mixed_scale``: ``Lambda = lam**(1-gamma)`` from ``X_1`` into ``X_gamma``
        (exact envelope equality).
    kind ``trace_valued``: from ``X_1`` into ``(X_0, X_1)_{1-1/p, p}``.
    """
    if not envelope.nonnegative():
        raise InvalidInputError("envelope must be nonnegative")
    lam = scale.eigenvalues
    n = scale.dim
    if kind == "lower_order":
        if q is None:
            raise ParameterError("lower_order perturbations need q")
        q = float(q)
        if p is not None and q == float(p):
            lev = trace_level(q)
            const = interp_eigen_constant(lev.theta, q)
            if q > 2:
                const *= n ** (1.0 / q - 0.5)
            mat = np.diag(const * lam**lev.theta)
            comp = PerturbationComponent(mat, envelope, "lower_order_trace", lev, 0.0, q, 0.0, None, sign)
        else:
            mat = np.diag(lam ** (1.0 - 1.0 / q))
            comp = PerturbationComponent(mat, envelope, "lower_order", 1.0 - 1.0 / q, 0.0, q, 0.0, None, sign)
    elif kind == "mixed_scale":
        if triple is None or p is None:
            raise ParameterError("mixed_scale perturbations need p and a triple (r, nu, gamma)")
        from .admissibility import holder_exponents, P_EQUALS_R

        r, nu, gamma = (_frac(v) for v in triple)
        hx = holder_exponents(_frac(p), _frac(kappa), r, nu)
        if hx is P_EQUALS_R:
            if not envelope.is_zero():
                raise EnvelopeClassError("p = r forces a zero envelope")
            q_b, mu_b = math.inf, 0.0
        else:
            q_b, mu_b = float(hx[0]), float(hx[1])
        mat = np.diag(lam ** (1.0 - float(gamma)))
        comp = PerturbationComponent(mat, envelope, "mixed_scale", 1.0, float(gamma), q_b, mu_b,
                                     (r, nu, gamma), sign)
    elif kind == "trace_valued":
        if p is None:
            raise ParameterError("trace_valued perturbations need p")
        p = float(p)
        lev = trace_level(p)
        const = interp_eigen_constant(lev.theta, p)
        if p < 2:
            const *= n ** (1.0 / p - 0.5)
        mat = np.diag(lam ** (1.0 - lev.theta) / const)
        comp = PerturbationComponent(mat, envelope, "trace_valued", 1.0, lev, p / (p - 1.0), 0.0, None, sign)
    else:
        raise ParameterError(f"unknown perturbation kind {kind!r}")
    return Perturbation(scale, (comp,))


# ---------------------------------------------------------------------------
# right-hand sides


@dataclass(frozen=True, eq=False)
class SeparableSource:
    """``f(t) = phi(t) * vector`` with a symbolic scalar profile."""

    profile: TimeProfile
    vector: np.ndarray
    T: float
    scale: HilbertScale | None = None
    level: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "vector", check_finite_array(self.vector, "vector").reshape(-1).copy())

    grid = None

    @property
    def dim(self) -> int:
        return self.vector.shape[0]

    def evaluate(self, times) -> np.ndarray:
        return np.asarray(self.profile(times))[:, None] * self.vector[None, :]

    def cell_linear(self, grid: TimeGrid):
        """Per-cell linear L2 projection (exact mass and first moment)."""
        lo, hi = grid.nodes[:-1], grid.nodes[1:]
        h = hi - lo
        m0 = self.profile.moment(lo, hi, 0)
        m1 = (self.profile.moment(lo, hi, 1) - lo * m0) / h
        left = (4.0 * m0 - 6.0 * m1) / h
        right = (6.0 * m1 - 2.0 * m0) / h
        return left[:, None] * self.vector, right[:, None] * self.vector

    def exact_weighted_norm(self, p, kappa, level, interval, scale) -> float:
        scale = scale if scale is not None else self.scale
        vec = float(level_norm(self.vector[None, :], level, scale)[0])
        if vec == 0.0:
            return 0.0
        if np.isinf(p):
            return vec * self.profile.norm(np.inf, 0.0, interval)
        integral = self.profile.weighted_power_integral(p, kappa, interval[0], interval[1])
        return vec * float(integral) ** (1.0 / p)


@dataclass(frozen=True, eq=False)
class InhomogeneityComponent:
    """One slot of an explicit decomposition ``f = f_0 + sum_i f_i``.

    ``kind`` is ``'lp'`` for ``L^p(w_weight; X_level)`` slots; an
    ``InterpLevel`` level with ``p = 1`` gives the L1 trace-space slot.
    """

    source: object
    p: float
    weight: float = 0.0
    level: object = 0.0
    norm: float = 0.0

    def norm_component(self) -> NormComponent:
        return NormComponent(self.source, self.p, self.weight, self.level, "lp")


@dataclass(frozen=True, eq=False)
class Inhomogeneity:
    scale: HilbertScale
    components: tuple = ()
    T: float = 1.0

    @classmethod
    def zero(cls, scale, T=1.0):
        return cls(scale, (), T)

    @property
    def dim(self) -> int:
        return self.scale.dim

    def is_zero(self) -> bool:
        return len(self.components) == 0

    def cell_linear(self, grid: TimeGrid, which=None):
        left = np.zeros((grid.m, self.dim))
        right = np.zeros((grid.m, self.dim))
        comps = self.components if which is None else [self.components[i] for i in which]
        for c in comps:
            lft, rgt = c.source.cell_linear(grid)
            left += lft
            right += rgt
        return left, right

    def evaluate(self, times):
        out = np.zeros((len(np.atleast_1d(times)), self.dim))
        for c in self.components:
            out += c.source.evaluate(times)
        return out

    def norm_components(self):
        return [c.norm_component() for c in self.components]

    def total_norm(self) -> float:
        return float(sum(c.norm for c in self.components))

    def scaled(self, c: float) -> "Inhomogeneity":
        comps = []
        for comp in self.components:
            src = comp.source
            if isinstance(src, SeparableSource):
                src = SeparableSource(src.profile, c * src.vector, src.T, src.scale, src.level)
            else:
                src = src * c
            comps.append(InhomogeneityComponent(src, comp.p, comp.weight, comp.level, abs(c) * comp.norm))
        return Inhomogeneity(self.scale, tuple(comps), self.T)


def make_inhomogeneity(scale: HilbertScale, components: Sequence, T: float = 1.0,
                       p=None, kappa=0.0, grid: TimeGrid | None = None) -> Inhomogeneity:
    """Build a decomposed right-hand side.

    ``components`` is a sequence of ``(source, (p_i, weight_i, level_i))``.
    When ``p`` is given, every slot other than ``(p, kappa, 0)`` and the L1
    trace slot must be a ``(p, kappa)``-admissible triple.
    """
    out = []
    for source, slot in components:
        pi, wi, li = slot
        if getattr(source, "dim", scale.dim) != scale.dim:
            raise InvalidInputError("component dimension does not match the scale")
        if p is not None and not isinstance(li, InterpLevel) and not (float(pi) == float(p) and float(wi) == float(kappa) and float(li) == 0.0):
            from .admissibility import is_admissible

            verdict = is_admissible(_frac(p), _frac(kappa), _frac(scale.gamma_star), _frac(pi), _frac(wi), _frac(li))
            if not verdict.admissible:
                raise ParameterError(f"slot {slot} is not admissible: {verdict.reason}")
        value = weighted_lp_norm(source, pi, wi, li, scale=scale, grid=grid if getattr(source, "grid", None) is None else None,
                                 interval=(0.0, T))
        if not np.isfinite(value):
            raise InvalidInputError(f"component has infinite norm in slot {slot}")
        out.append(InhomogeneityComponent(source, float(pi), float(wi), li, float(value)))
    return Inhomogeneity(scale, tuple(out), float(T))


def random_cell_forcing(grid: TimeGrid, dim: int, rng, scale=None) -> CellFunction:
    """Independent standard normal amplitudes per mode and per cell."""
    return CellFunction(grid, rng.standard_normal((grid.m, dim)), 0.0, scale)


def random_smooth_forcing(grid: TimeGrid, dim: int, rng, frequencies: int = 4, scale=None) -> GridFunction:
    """Random trigonometric polynomial in time per mode (smooth, grid-independent)."""
    t = grid.nodes / grid.T
    k = np.arange(frequencies)
    basis = np.cos(np.pi * np.outer(t, k))  # (m+1, F)
    coef = rng.standard_normal((frequencies, dim)) / (1.0 + k[:, None])
    return GridFunction(grid, basis @ coef, 0.0, scale)
