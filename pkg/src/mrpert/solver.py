"""Solution schemes for ``u' + A(t) u + B(t) u = f``.

All schemes share one discretization: implicit Euler with cell-averaged
coefficients and cell-integrated forcing, run on the experiment grid and
on its midpoint refinement, combined by one Richardson extrapolation.  The
perturbation ``B`` enters either implicitly (monolithic oracle) or as a
forcing ``-B v`` of the previous iterate (partition + contraction schemes);
both produce the same discrete fixed point, so scheme and oracle agree to
iteration tolerance on a common grid.

Solver objects follow the estimator convention: hyperparameters go to
``__init__``, ``fit(problem)`` runs the scheme and stores results in
trailing-underscore attributes, ``predict(times)`` evaluates the fitted
trajectory.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import integrate, special
from sklearn.base import BaseEstimator

from ._validation import (
    ContractionError,
    EnvelopeClassError,
    InvalidInputError,
    ParameterError,
    RefinementError,
    check_exponent,
    check_is_fitted,
    check_vector,
    check_weight,
)
from .admissibility import P_EQUALS_R, envelope_class_check
from .problems import (
    Inhomogeneity,
    OperatorFamily,
    Perturbation,
    SeparableSource,
    ConstantEnvelope,
    random_cell_forcing,
)
from .spaces import (
    GAUSS_POINTS,
    GAUSS_WEIGHTS,
    GridFunction,
    InterpLevel,
    TimeGrid,
    ep_norm,
    mr_norm,
    power_moment,
    trace_level,
    trace_sup_norm,
    weighted_lp_norm,
)

logger = logging.getLogger(__name__)

__all__ = [
    "EvolutionProblem",
    "SolveReport",
    "MrEstimate",
    "oracle_solve",
    "estimate_mr_constant",
    "partition_by_budget",
    "partition_count_bound",
    "picard_solve",
    "gronwall_check",
    "mixed_scale_solve",
    "semigroup_mild_solve",
    "transference_solve",
    "key_estimate_ratio",
    "measure_budget_constants",
    "measure_trace_constant",
    "OracleSolver",
    "PicardSolver",
    "MixedScaleSolver",
    "TransferenceSolver",
    "MRConstantEstimator",
    "DEFAULT_TOL",
    "CONTRACTION_CAP",
]

CONTRACTION_CAP = 0.75
DEFAULT_TOL = 1e-10


# ---------------------------------------------------------------------------
# problem container and reports


@dataclass(frozen=True, eq=False)
class EvolutionProblem:
    """Data of one linear evolution problem on ``[0, T]``."""

    A: OperatorFamily
    grid: TimeGrid
    u0: np.ndarray = None
    B: Perturbation | None = None
    f: Inhomogeneity | None = None

    def __post_init__(self):
        n = self.A.dim
        u0 = np.zeros(n) if self.u0 is None else check_vector(self.u0, n)
        object.__setattr__(self, "u0", u0)
        B = self.B if self.B is not None else Perturbation.zero(self.A.scale)
        if B.dim != n:
            raise InvalidInputError("perturbation dimension does not match the operator")
        object.__setattr__(self, "B", B)
        f = self.f if self.f is not None else Inhomogeneity.zero(self.A.scale, self.grid.T)
        if f.dim != n:
            raise InvalidInputError("right-hand side dimension does not match the operator")
        object.__setattr__(self, "f", f)

    @property
    def scale(self):
        return self.A.scale

    @property
    def T(self) -> float:
        return self.grid.T


def check_problem(problem) -> EvolutionProblem:
    if not isinstance(problem, EvolutionProblem):
        raise InvalidInputError(f"expected an EvolutionProblem, got {type(problem).__name__}")
    return problem


@dataclass(frozen=True, eq=False)
class SolveReport:
    """Trajectory plus partition, iteration diagnostics, norms and constants."""

    trajectory: GridFunction
    partition: tuple
    budget_partition: tuple = ()
    iterations: tuple = ()
    contraction_factors: tuple = ()
    distances: tuple = ()
    norms: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    residual: float = 0.0
    tolerance: float = DEFAULT_TOL
    components: dict = field(default_factory=dict)
    method: str = ""

    @property
    def N(self) -> int:
        return len(self.partition) - 1

    @property
    def budget_N(self) -> int:
        return len(self.budget_partition) - 1 if self.budget_partition else self.N


@dataclass(frozen=True)
class MrEstimate:
    """Sampled lower bound for the maximal-regularity constant."""

    value: float
    sample_count: int
    ratios: tuple
    refinement_level: int
    mode_ratios: tuple = ()


# ---------------------------------------------------------------------------
# discrete core


class _Stepper:
    """Implicit Euler with cell-averaged ``A`` (and optionally ``B``) on one grid."""

    def __init__(self, A: OperatorFamily, grid: TimeGrid, B: Perturbation | None = None):
        self.grid = grid
        self.h = grid.steps
        self.n = A.dim
        fac = A.cell_factors(grid)
        use_b = B is not None and not B.is_zero()
        self.diagonal = A.diagonal and (not use_b or B.diagonal)
        if self.diagonal:
            self.a = fac[:, None] * A.diag[None, :]
            self.b = B.cell_matrices(grid) if use_b else None
            shift = self.a + (self.b if use_b else 0.0)
            denom = 1.0 + self.h[:, None] * shift
            if np.any(denom <= 1e-12):
                raise RefinementError("implicit step is singular; refine the grid near the failing cell")
            self.inv = 1.0 / denom
        else:
            self.a = fac[:, None, None] * A.matrix[None]
            if use_b:
                bm = B.cell_matrices(grid)
                self.b = bm if bm.ndim == 3 else np.einsum("ki,ij->kij", bm, np.eye(self.n))
            else:
                self.b = None
            lhs = np.eye(self.n)[None] + self.h[:, None, None] * (self.a + (self.b if use_b else 0.0))
            if np.any(np.abs(np.linalg.det(lhs)) < 1e-12):
                raise RefinementError("implicit step is singular; refine the grid")
            self.inv = np.linalg.inv(lhs)

    def run(self, start, masses, j0: int, j1: int) -> np.ndarray:
        out = np.empty((j1 - j0 + 1, self.n))
        out[0] = start
        inv = self.inv
        if self.diagonal:
            for k in range(j1 - j0):
                out[k + 1] = (out[k] + masses[k]) * inv[j0 + k]
        else:
            for k in range(j1 - j0):
                out[k + 1] = inv[j0 + k] @ (out[k] + masses[k])
        return out

    def matrix_mass(self, which, right_values, j0: int, j1: int) -> np.ndarray:
        """``h_j M_j v_{j+1}`` per cell for ``M`` = cell matrices ``which``."""
        h = self.h[j0:j1, None]
        mats = which[j0:j1]
        if mats.ndim == 2:
            return h * mats * right_values
        return h * np.einsum("kij,kj->ki", mats, right_values)


def _masses(forcing, grid: TimeGrid, dim: int, which=None) -> np.ndarray:
    if forcing is None:
        return np.zeros((grid.m, dim))
    if isinstance(forcing, Inhomogeneity):
        if forcing.is_zero():
            return np.zeros((grid.m, dim))
        left, right = forcing.cell_linear(grid, which)
    else:
        left, right = forcing.cell_linear(grid)
    return 0.5 * grid.steps[:, None] * (left + right)


class _Scheme:
    """Coarse/fine implicit Euler pair with a Richardson combination."""

    def __init__(self, A, grid, B=None, richardson=True):
        self.A = A
        self.grid = grid
        self.grids = (grid, grid.refine(2)) if richardson else (grid,)
        self.factors = (1, 2)[: len(self.grids)]
        self.steppers = [_Stepper(A, g, B) for g in self.grids]
        self.n = A.dim
        self._moments = {}

    @property
    def levels(self):
        return range(len(self.grids))

    def span(self, level, j0, j1):
        f = self.factors[level]
        return j0 * f, j1 * f

    def masses(self, forcing, which=None):
        return [_masses(forcing, g, self.n, which) for g in self.grids]

    def combine(self, vals):
        if len(vals) == 1:
            return vals[0]
        return 2.0 * vals[1][::2] - vals[0]

    def moments(self, level, kappa):
        key = (level, kappa)
        if key not in self._moments:
            g = self.grids[level]
            lo, hi = g.nodes[:-1], g.nodes[1:]
            self._moments[key] = power_moment(lo, hi, kappa)[:, None] * GAUSS_WEIGHTS[None, :]
        return self._moments[key]

    def local_lp(self, level, vals, j0, p, kappa, lam_weights):
        """``L^p(w_kappa; X_1)`` norm of nodal values starting at fine/coarse index ``j0``."""
        k = vals.shape[0] - 1
        if k == 0:
            return 0.0
        w = self.moments(level, kappa)[j0:j0 + k]
        s = GAUSS_POINTS
        g = (1 - s)[None, :, None] * vals[:-1, None, :] + s[None, :, None] * vals[1:, None, :]
        norms = np.linalg.norm(g * lam_weights, axis=-1)
        return float(np.sum(w * norms**p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# oracle


def oracle_solve(A, B, f, u0, grid, richardson=True, return_info=False):
    """Monolithic implicit Euler (+ one Richardson level) for ``u' + (A+B)u = f``.

    ``B`` is treated implicitly with its exact cell average, ``f`` through
    exact cell integrals.  With ``return_info`` a dict with the discrete
    and integral-identity defects is returned as well.
    """
    B = B if B is not None else Perturbation.zero(A.scale)
    u0 = check_vector(u0 if u0 is not None else np.zeros(A.dim), A.dim)
    _check_envelopes_integrable(B)
    scheme = _Scheme(A, grid, B, richardson)
    masses = scheme.masses(f)
    vals = [st.run(u0, ms, 0, st.grid.m) for st, ms in zip(scheme.steppers, masses)]
    traj = GridFunction(grid, scheme.combine(vals), 0.0, A.scale)
    if not return_info:
        return traj
    discrete = 0.0
    for st, ms, v in zip(scheme.steppers, masses, vals):
        res = v[1:] - v[:-1] - ms
        res += st.matrix_mass(st.a, v[1:], 0, st.grid.m)
        if st.b is not None:
            res += st.matrix_mass(st.b, v[1:], 0, st.grid.m)
        discrete = max(discrete, float(np.max(np.abs(res))) / max(1.0, float(np.max(np.abs(v)))))
    info = {"discrete_defect": discrete, "identity_defect": integral_identity_defect(traj, A, B, f)}
    return traj, info


def _check_envelopes_integrable(B: Perturbation):
    for c in B.components:
        if not c.envelope.is_zero() and not np.isfinite(c.envelope.weighted_power_integral(1.0, 0.0, 0.0, 1.0)):
            raise RefinementError("envelope is not integrable on the first cell")


def integral_identity_defect(u: GridFunction, A, B, f) -> float:
    """Relative defect of ``u(t_{j+1}) - u(t_j) + int (A+B)u - int f`` over all cells."""
    grid = u.grid
    lo, hi = grid.nodes[:-1], grid.nodes[1:]
    times = (lo[:, None] + (hi - lo)[:, None] * GAUSS_POINTS[None, :]).ravel()
    vals = u.evaluate(times)
    if A.autonomous:
        Au = vals @ A.matrix.T
    else:
        Au = A.profile(times)[:, None] * (vals @ A.matrix.T)
    if B is not None and not B.is_zero():
        Au = Au + B.apply(times, vals)
    w = ((hi - lo)[:, None] * GAUSS_WEIGHTS[None, :]).ravel()
    integ = (w[:, None] * Au).reshape(grid.m, 3, -1).sum(axis=1)
    fm = _masses(f, grid, u.dim)
    res = np.diff(u.values, axis=0) + integ - fm
    scale = max(1.0, float(np.max(np.abs(u.values))))
    return float(np.max(np.linalg.norm(res, axis=1)) / scale)


# ---------------------------------------------------------------------------
# maximal-regularity constant


def _mode_closed_form_ratio(lam, p, kappa, T):
    """MR ratio of ``u' + lam u = 1``, ``u(0) = 0`` on ``(0, T)`` by adaptive quadrature."""
    def lp(fun):
        val, _ = integrate.quad(lambda t: t**kappa * abs(fun(t)) ** p, 0.0, T, limit=400,
                                points=[min(T, 1.0 / lam)])
        return val ** (1.0 / p)

    u = lambda t: -math.expm1(-lam * t) / lam
    du = lambda t: math.exp(-lam * t)
    mr = max(lam * lp(u), lp(u), lp(du))
    return mr / (T ** (kappa + 1) / (kappa + 1)) ** (1.0 / p)


def estimate_mr_constant(A, p, kappa, grid, samples=8, seed=0, taus_per_sample=4) -> MrEstimate:
    """Sampled lower bound for the weighted MR constant of ``A``.

    Samples are random piecewise-constant forcings (standard normal per mode
    and cell) followed by the per-mode constant forcings ``e_i``; each
    solution is measured on ``(0, tau)`` for random grid nodes ``tau``.
    """
    return MRConstantEstimator(p=p, kappa=kappa, samples=samples, seed=seed,
                               taus_per_sample=taus_per_sample).fit(A, grid).estimate_


# ---------------------------------------------------------------------------
# partition by envelope budget


def partition_by_budget(b, q_b, mu_b, T, budget, max_pieces=100000) -> tuple:
    """Greedy partition with ``||b||_{L^{q_b}(tau_n, tau_{n+1}; w_{mu_b})} = budget``.

    Every piece except possibly the last has exactly the budget; the class
    check runs before any inversion.
    """
    if budget <= 0:
        raise ParameterError("budget must be positive")
    envelope_class_check(b, q_b, mu_b, T)
    if q_b is P_EQUALS_R or b.is_zero():
        return (0.0, float(T))
    q_b, mu_b = float(q_b), float(mu_b)
    taus = [0.0]
    while taus[-1] < T:
        sigma = b.invert(q_b, mu_b, taus[-1], budget, T)
        if sigma <= taus[-1]:
            raise RefinementError(f"budget inversion stalled at {taus[-1]}")
        taus.append(float(sigma))
        if len(taus) > max_pieces:
            raise RefinementError("partition exceeds the piece limit")
    return tuple(taus)


def _summed_partition(components, T, budget, max_pieces=100000) -> tuple:
    """Greedy partition where the summed envelope norms equal the budget."""
    from scipy import optimize

    live = [c for c in components if not c.envelope.is_zero()]
    for c in live:
        envelope_class_check(c.envelope, c.q_b, c.mu_b, T)
    if not live:
        return (0.0, float(T))
    if len(live) == 1:
        c = live[0]
        return partition_by_budget(c.envelope, c.q_b, c.mu_b, T, budget, max_pieces)

    def total(a, s):
        return sum(c.envelope.norm(c.q_b, c.mu_b, (a, s)) for c in live)

    taus = [0.0]
    while taus[-1] < T:
        a = taus[-1]
        if total(a, T) <= budget * (1 + 1e-12):
            taus.append(float(T))
            break
        s = optimize.brentq(lambda s: total(a, s) - budget, a, T, xtol=1e-15, rtol=1e-14)
        if s <= a:
            raise RefinementError(f"budget inversion stalled at {a}")
        taus.append(float(s))
        if len(taus) > max_pieces:
            raise RefinementError("partition exceeds the piece limit")
    return tuple(taus)


def partition_count_bound(components, T, budget) -> float:
    """``1 + sum_i (||b_i|| / budget)**q_i + 1`` (the last +1 covers the capped final piece)."""
    total = 1.0
    live = [c for c in components if not c.envelope.is_zero()]
    if len(live) == 1:
        c = live[0]
        return 1.0 + (c.envelope.norm(c.q_b, c.mu_b, (0.0, T)) / budget) ** c.q_b + 1.0
    qmin = min((c.q_b for c in live), default=1.0)
    s = sum(c.envelope.norm(c.q_b, c.mu_b, (0.0, T)) for c in live)
    return total + (s / budget) ** qmin + 2.0 if live else 2.0


def _snap(partition, grid: TimeGrid):
    """Nearest grid node indices for partition points (duplicates merged)."""
    idx = [0]
    for tau in partition[1:-1]:
        j = int(np.argmin(np.abs(grid.nodes - tau)))
        if idx[-1] < j < grid.m:
            idx.append(j)
    idx.append(grid.m)
    return idx


# ---------------------------------------------------------------------------
# interval engine shared by the partition schemes


class _IntervalEngine:
    """Runs a Picard map interval by interval, bisecting when contraction is too weak."""

    def __init__(self, scheme, p, kappa, tol, cap, max_iter, max_depth, rng=None):
        self.scheme = scheme
        self.p = p
        self.kappa = kappa
        self.tol = tol
        self.cap = cap
        self.max_iter = max_iter
        self.max_depth = max_depth
        self.rng = rng
        self.lam1 = scheme.A.scale.weights(1.0)
        self.records = []

    def _dist(self, a, b, j0):
        out = 0.0
        for lev in self.scheme.levels:
            jj, _ = self.scheme.span(lev, j0, j0)
            out = max(out, self.scheme.local_lp(lev, a[lev] - b[lev], jj, self.p, self.kappa, self.lam1))
        return out

    def iterate(self, pmap, state, j0, j1):
        """Fixed point on cells ``j0..j1`` of the coarse grid; returns local values per level."""
        ctx = pmap.prepare(state, j0, j1)
        sizes = [self.scheme.span(lev, j0, j1) for lev in self.scheme.levels]
        v = [np.zeros((b - a + 1, self.scheme.n)) for a, b in sizes]
        if self.rng is not None:
            for lev in self.scheme.levels:
                v[lev][1:] = self.rng.standard_normal(v[lev][1:].shape) * 1e-2
        if pmap.trivial:
            new = pmap.apply(ctx, v)
            u = pmap.assemble(ctx, new)
            return u, 1, (), 0.0, 0.0
        dists = []
        factor = 0.0
        for it in range(1, self.max_iter + 1):
            new = pmap.apply(ctx, v)
            d = self._dist(new, v, j0)
            v = new
            dists.append(d)
            if len(dists) >= 2 and dists[-2] > 0:
                factor = max(factor, dists[-1] / dists[-2])
            u = pmap.assemble(ctx, v)
            size = self._dist(u, [np.zeros_like(x) for x in u], j0)
            if d < self.tol * max(1.0, size):
                break
            if len(dists) >= 3 and factor >= self.cap:
                break
        converged = d < self.tol * max(1.0, size)
        resid = d / max(1.0, size)
        if not converged and factor < self.cap:
            factor = max(factor, self.cap)
        return pmap.assemble(ctx, v), it, tuple(dists), factor, resid

    def run(self, pmap, u0, cuts):
        sch = self.scheme
        full = [np.empty((g.m + 1, sch.n)) for g in sch.grids]
        for lev in sch.levels:
            full[lev][0] = u0
        done = [0]
        pending = [(a, b, 0) for a, b in zip(cuts[:-1], cuts[1:])]
        iterations, factors, distances = [], [], []
        resid = 0.0
        while pending:
            j0, j1, depth = pending.pop(0)
            state = [full[lev][sch.span(lev, j0, j0)[0]] for lev in sch.levels]
            u, its, dists, factor, res = self.iterate(pmap, state, j0, j1)
            if factor >= self.cap:
                if depth >= self.max_depth or j1 - j0 < 2:
                    raise ContractionError(
                        f"contraction factor {factor:.3g} >= {self.cap} on cells {j0}..{j1} after {depth} bisections"
                    )
                mid = (j0 + j1) // 2
                logger.debug("bisecting cells %d..%d (factor %.3g)", j0, j1, factor)
                pending[:0] = [(j0, mid, depth + 1), (mid, j1, depth + 1)]
                continue
            for lev in sch.levels:
                a, b = sch.span(lev, j0, j1)
                full[lev][a:b + 1] = u[lev]
            done.append(j1)
            iterations.append(its)
            factors.append(factor)
            distances.append(dists)
            resid = max(resid, res)
        return full, tuple(done), tuple(iterations), tuple(factors), tuple(distances), resid


class _PicardMap:
    """Split into a homogeneous continuation plus a zero-initial corrector."""

    def __init__(self, scheme, B, f):
        self.s = scheme
        self.bmats = [st.b_only for st in scheme.bsteppers]
        self.fm = scheme.masses(f)
        self.trivial = B.is_zero()

    def prepare(self, state, j0, j1):
        s = self.s
        cont, fmass = [], []
        for lev in s.levels:
            a, b = s.span(lev, j0, j1)
            cont.append(s.steppers[lev].run(state[lev], np.zeros((b - a, s.n)), a, b))
            fmass.append(self.fm[lev][a:b])
        ctx = {"cont": cont, "span": (j0, j1), "fmass": fmass}
        ctx["bcont"] = [self._bmass(lev, cont[lev], j0, j1) for lev in s.levels]
        return ctx

    def _bmass(self, lev, vals, j0, j1):
        a, b = self.s.span(lev, j0, j1)
        st = self.s.steppers[lev]
        return st.matrix_mass(self.bmats[lev], vals[1:], a, b)

    def apply(self, ctx, v):
        j0, j1 = ctx["span"]
        out = []
        for lev in self.s.levels:
            a, b = self.s.span(lev, j0, j1)
            rhs = ctx["fmass"][lev] - ctx["bcont"][lev] - self._bmass(lev, v[lev], j0, j1)
            out.append(self.s.steppers[lev].run(np.zeros(self.s.n), rhs, a, b))
        return out

    def assemble(self, ctx, v):
        return [c + z for c, z in zip(ctx["cont"], v)]


def _attach_b(scheme, B):
    """Store cell averages of ``B`` on each level for use as forcing."""
    scheme.bsteppers = []
    for st in scheme.steppers:
        st.b_only = B.cell_matrices(st.grid) if not B.is_zero() else np.zeros((st.grid.m, scheme.n))
        scheme.bsteppers.append(st)
    return scheme


def _solution_norms(traj: GridFunction, p, kappa, trace=True, ep=False):
    norms = {"lp_x1": weighted_lp_norm(traj, p, kappa, 1.0)}
    if kappa < p - 1:
        norms["mr"] = mr_norm(traj, p, kappa)
    if trace:
        norms["trace_sup"] = trace_sup_norm(traj, 0.0, trace_level(p, kappa))
        norms["trace_sup_weighted"] = trace_sup_norm(traj, kappa / p, trace_level(p, 0.0))
    if ep:
        norms["ep"] = ep_norm(traj, p)
    return norms


# ---------------------------------------------------------------------------
# measured constants


def key_estimate_ratio(B: Perturbation, v: GridFunction, t: float, p, kappa=0.0) -> float:
    """``||B v||_{L^p(0,t; w_kappa; X_0)} / (||b||_{L^q(0,t)} ||v||_{MR(0,t)})`` (0 for zero ``b``)."""
    num_total = 0.0
    for i, c in enumerate(B.components):
        if c.envelope.is_zero():
            continue
        prod = _Product(B, v, i)
        num = weighted_lp_norm(prod, p, kappa, 0.0, interval=(0.0, t), grid=v.grid)
        bn = c.envelope.norm(c.q_b, c.mu_b, (0.0, t))
        den = bn * mr_norm(v, p, kappa, interval=(0.0, t))
        num_total = max(num_total, num / den if den > 0 else 0.0)
    return num_total


class _Product:
    """Lazy ``B_i(t) v(t)`` evaluable at arbitrary positive times."""

    def __init__(self, B, v, component):
        self.B, self.v, self.i = B, v, component
        self.grid = v.grid
        self.scale = v.scale

    def evaluate(self, times):
        return self.B.apply(times, self.v.evaluate(times), self.i)


def _mr_samples(A, grid, count, rng):
    """Solutions of ``u' + A u = f``, ``u(0)=0`` for random smooth and rough ``f``."""
    from .problems import random_smooth_forcing

    out = []
    for k in range(count):
        if k % 2 == 0:
            f = random_smooth_forcing(grid, A.dim, rng, scale=A.scale)
        else:
            f = random_cell_forcing(grid, A.dim, rng, scale=A.scale)
        comp_f = Inhomogeneity(A.scale, (_Slot(f),), grid.T)
        out.append(oracle_solve(A, None, comp_f, np.zeros(A.dim), grid))
    return out


@dataclass(frozen=True, eq=False)
class _Slot:
    source: object
    p: float = 2.0
    weight: float = 0.0
    level: float = 0.0
    norm: float = 0.0


def measure_trace_constant(A, p, kappa, grid, samples=6, seed=0) -> float:
    """Max of ``sup_t ||u(t)||_{trace} / ||u||_MR`` over sampled MR solutions."""
    rng = np.random.default_rng(seed)
    best = 0.0
    for u in _mr_samples(A, grid, samples, rng):
        den = mr_norm(u, p, kappa)
        if den > 0:
            best = max(best, trace_sup_norm(u, 0.0, trace_level(p, kappa)) / den)
    return best


def measure_budget_constants(A, B, p, kappa, grid, samples=6, seed=0, scheme="picard", safety=2.0, M=None):
    """Measured constants for the partition budget.

    ``scheme="picard"``: ``C0 = safety * max key-estimate ratio`` and ``M``
    from :func:`estimate_mr_constant`.  ``"mixed"`` and ``"transference"``:
    ``C0 = safety *``
    the measured Lipschitz constant of the Picard map divided by the summed
    envelope norm, ``M = 1``.
    """
    rng = np.random.default_rng(seed)
    if B.is_zero():
        return {"C0": 1.0, "M": 1.0 if M is None else M}
    if scheme == "picard":
        if M is None:
            M = estimate_mr_constant(A, p, kappa, grid, samples=samples, seed=seed).value
        best = 0.0
        for v in _mr_samples(A, grid, samples, rng):
            for t in (grid.T / 16, grid.T / 4, grid.T):
                t = grid.nodes[int(np.argmin(np.abs(grid.nodes - t)))]
                best = max(best, key_estimate_ratio(B, v, t, p, kappa))
        return {"C0": safety * max(best, 1e-12), "M": float(M)}
    best = 0.0
    for v in _mr_samples(A, grid, samples, rng):
        for t in (grid.T / 8, grid.T):
            j = int(np.argmin(np.abs(grid.nodes - t)))
            best = max(best, _lipschitz_probe(A, B, v, j, p, kappa, scheme))
    return {"C0": safety * max(best, 1e-12), "M": 1.0}


def _lipschitz_probe(A, B, v: GridFunction, j, p, kappa, scheme):
    """``||Phi(v) - Phi(0)|| / (sum_i ||b_i||_{(0,t)} ||v||)`` for the scheme's linear part."""
    grid = v.grid
    t = grid.nodes[j]
    sub = TimeGrid(grid.nodes[: j + 1], grid.grading)
    vs = GridFunction(sub, v.values[: j + 1], 0.0, v.scale)
    bsum = sum(c.envelope.norm(c.q_b, c.mu_b, (0.0, t)) for c in B.components if not c.envelope.is_zero())
    if bsum == 0:
        return 0.0
    forcing = Inhomogeneity(A.scale, (_Slot(_NegProduct(B, vs)),), t)
    if scheme == "transference":
        A0 = A if A.autonomous else A.time_average(grid.T)
        vt = semigroup_mild_solve(A0, forcing, np.zeros(A.dim), p, sub)
        corr = _AMismatch(A0, A, vt)
        z = oracle_solve(A, None, Inhomogeneity(A.scale, (_Slot(corr),), t), np.zeros(A.dim), sub)
        w = vt + z
        return ep_norm(w, p) / (bsum * weighted_lp_norm(vs, p, 0.0, 1.0))
    w = oracle_solve(A, None, forcing, np.zeros(A.dim), sub)
    return weighted_lp_norm(w, p, kappa, 1.0) / (bsum * weighted_lp_norm(vs, p, kappa, 1.0))


class _NegProduct:
    """``-B(t) v(t)`` as a forcing source with per-cell linear data."""

    def __init__(self, B, v):
        self.B, self.v = B, v
        self.grid = v.grid
        self.dim = v.dim

    def evaluate(self, times):
        return -self.B.apply(times, self.v.evaluate(times))

    def cell_linear(self, grid):
        bm = self.B.cell_matrices(grid)
        left_v = self.v.evaluate(grid.nodes[:-1])
        right_v = self.v.evaluate(grid.nodes[1:])
        if bm.ndim == 2:
            return -bm * left_v, -bm * right_v
        return -np.einsum("kij,kj->ki", bm, left_v), -np.einsum("kij,kj->ki", bm, right_v)


class _AMismatch:
    """``(A0 - A(t)) v(t)`` as a forcing source."""

    def __init__(self, A0, A, v):
        self.A0, self.A, self.v = A0, A, v
        self.grid = v.grid
        self.dim = v.dim

    def cell_linear(self, grid):
        fac = self.A.cell_factors(grid)
        left_v = self.v.evaluate(grid.nodes[:-1])
        right_v = self.v.evaluate(grid.nodes[1:])
        d0 = self.A0.matrix
        out = []
        for vals in (left_v, right_v):
            out.append(vals @ d0.T - fac[:, None] * (vals @ self.A.matrix.T))
        return tuple(out)


# ---------------------------------------------------------------------------
# Picard scheme


def _resolve_constants(A, B, p, kappa, grid, C0, M, scheme, samples, seed):
    measured = None
    if C0 is None or (scheme == "picard" and M is None):
        measured = measure_budget_constants(A, B, p, kappa, grid, samples, seed, scheme, M=M)
    C0 = measured["C0"] if C0 is None else float(C0)
    if scheme == "picard":
        M = measured["M"] if M is None else float(M)
    else:
        M = 1.0 if M is None else float(M)
    return C0, M


def _common_report(traj, budget_part, cuts, grid, its, factors, dists, resid, tol, constants, norms, method, comps=None):
    return SolveReport(
        trajectory=traj,
        partition=tuple(float(grid.nodes[j]) for j in cuts),
        budget_partition=tuple(budget_part),
        iterations=its,
        contraction_factors=factors,
        distances=dists,
        norms=norms,
        constants=constants,
        residual=float(resid),
        tolerance=tol,
        components=comps or {},
        method=method,
    )


class _SolverBase(BaseEstimator):
    """Shared ``predict``/``score`` for fitted solver objects."""

    def predict(self, times):
        check_is_fitted(self)
        return self.trajectory_.evaluate(np.atleast_1d(np.asarray(times, dtype=float)))

    def _store(self, report: SolveReport):
        self.report_ = report
        self.trajectory_ = report.trajectory
        self.partition_ = report.partition
        self.n_intervals_ = report.N
        self.contraction_factors_ = report.contraction_factors
        self.constants_ = report.constants
        return self


class OracleSolver(_SolverBase):
    """Monolithic reference solver (implicit Euler + Richardson)."""

    def __init__(self, richardson=True):
        self.richardson = richardson

    def fit(self, problem):
        pr = check_problem(problem)
        traj, info = oracle_solve(pr.A, pr.B, pr.f, pr.u0, pr.grid, self.richardson, return_info=True)
        report = SolveReport(traj, (0.0, pr.T), (0.0, pr.T), (1,), (0.0,), (), {}, {},
                             info["discrete_defect"], DEFAULT_TOL, {}, "oracle")
        self.identity_defect_ = info["identity_defect"]
        return self._store(report)


class PicardSolver(_SolverBase):
    """Partition by envelope budget and contract on each piece.

    Parameters
    ----------
    p, kappa : float
        Lebesgue exponent and power weight of the solution space.
    C0, M : float or None
        Budget constants; measured from the problem when None.
    tol : float
        Relative stopping tolerance on successive ``L^p(w_kappa; X_1)`` distances.
    contraction_cap : float
        Pieces whose measured contraction factor reaches this are bisected.
    initial_guess : None or int
        Seed for a random nonzero starting iterate (uniqueness checks).
    """

    def __init__(self, p=2.0, kappa=0.0, C0=None, M=None, tol=DEFAULT_TOL, contraction_cap=CONTRACTION_CAP,
                 max_iter=60, max_depth=12, calibration_samples=4, seed=0, initial_guess=None,
                 compute_norms=True, richardson=True):
        self.p = p
        self.kappa = kappa
        self.C0 = C0
        self.M = M
        self.tol = tol
        self.contraction_cap = contraction_cap
        self.max_iter = max_iter
        self.max_depth = max_depth
        self.calibration_samples = calibration_samples
        self.seed = seed
        self.initial_guess = initial_guess
        self.compute_norms = compute_norms
        self.richardson = richardson

    def fit(self, problem):
        pr = check_problem(problem)
        p = check_exponent(self.p)
        kappa = check_weight(p, self.kappa)
        A, B, grid = pr.A, pr.B, pr.grid
        C0, M = _resolve_constants(A, B, p, kappa, grid, self.C0, self.M, "picard", self.calibration_samples, self.seed)
        budget = 1.0 / (2.0 * C0 * M)
        budget_part = _summed_partition(B.components, pr.T, budget)
        cuts = _snap(budget_part, grid)
        scheme = _attach_b(_Scheme(A, grid, None, self.richardson), B)
        rng = None if self.initial_guess is None else np.random.default_rng(self.initial_guess)
        engine = _IntervalEngine(scheme, p, kappa, self.tol, self.contraction_cap, self.max_iter, self.max_depth, rng)
        full, done, its, factors, dists, resid = engine.run(_PicardMap(scheme, B, pr.f), pr.u0, cuts)
        traj = GridFunction(grid, scheme.combine(full), 0.0, A.scale)
        norms = _solution_norms(traj, p, kappa) if self.compute_norms else {}
        constants = {"C0": C0, "M": M, "budget": budget,
                     "partition_bound": partition_count_bound(B.components, pr.T, budget)}
        report = _common_report(traj, budget_part, done, grid, its, factors, dists, resid, self.tol,
                                constants, norms, "picard")
        return self._store(report)


def picard_solve(A, B, f, u0, p, kappa, budget_constants=(None, None), tol=DEFAULT_TOL, grid=None, **kwargs):
    """Functional form of :class:`PicardSolver`; returns the :class:`SolveReport`."""
    if grid is None:
        raise InvalidInputError("picard_solve needs a time grid")
    C0, M = budget_constants
    solver = PicardSolver(p=p, kappa=kappa, C0=C0, M=M, tol=tol, **kwargs)
    return solver.fit(EvolutionProblem(A, grid, u0, B, f)).report_


def gronwall_check(A, B_trace, f, p, kappa, grid, C=None, M=None, lambdas=(0.0, 0.25, 0.5, 0.75, 1.0),
                   samples=4, seed=0):
    """Continuity-method bound for perturbations defined on the trace space.

    Solves ``u' + A u + lam B u = f``, ``u(0)=0`` for each ``lam`` and
    compares ``||u_lam||_MR / ||f||`` with
    ``2 C M exp(2**(p-1) (C M)**p ||b||_p**p / p)``.

    ``C`` bounds ``||u||_MR + sup_t ||u(t)||_trace`` by ``C M ||f||``, so by
    default it is one plus the measured trace constant.
    """
    p = float(p)
    for c in B_trace.components:
        envelope_class_check(c.envelope, p, 0.0, grid.T)
    if C is None:
        C = 1.0 + measure_trace_constant(A, p, kappa, grid, samples, seed)
    if M is None:
        M = estimate_mr_constant(A, p, kappa, grid, samples=samples, seed=seed).value
    bnorm = sum(c.envelope.norm(p, 0.0, (0.0, grid.T)) * abs(c.sign) for c in B_trace.components)
    bound = 2.0 * C * M * math.exp(2.0 ** (p - 1) * (C * M) ** p * bnorm**p / p)
    fnorm = sum(comp.norm for comp in f.components)
    ratios = []
    sols = []
    for lam in lambdas:
        u = oracle_solve(A, B_trace.scaled(lam), f, np.zeros(A.dim), grid)
        sols.append(u)
        ratios.append(mr_norm(u, p, kappa) / fnorm if fnorm > 0 else 0.0)
    return {
        "lambdas": tuple(lambdas),
        "ratios": tuple(ratios),
        "bound": bound,
        "C": C,
        "M": M,
        "b_norm": bnorm,
        "pass": all(r <= bound for r in ratios),
        "solutions": tuple(sols),
    }


# ---------------------------------------------------------------------------
# mixed-scale scheme


class _MixedMap:
    """Split of the Picard map across the sum-space slots."""

    def __init__(self, scheme, A, aux, B, f, p, kappa):
        self.s = scheme
        self.trivial = B.is_zero()
        self.triples = []
        for c in B.components:
            if c.triple is not None and _slot_key(c.triple) not in self.triples:
                self.triples.append(_slot_key(c.triple))
        slot_of = []
        for comp in f.components:
            key = None
            if not (comp.p == p and comp.weight == kappa and comp.level == 0.0):
                key = _slot_key((comp.p, comp.weight, comp.level))
                if key not in self.triples:
                    self.triples.append(key)
            slot_of.append(key)
        base = [i for i, k in enumerate(slot_of) if k is None]
        self.f0 = scheme.masses(f, base) if base else [np.zeros((g.m, scheme.n)) for g in scheme.grids]
        self.fi = []
        self.bi = []
        self.aux_steppers = []
        self.aux_diff = []
        for k, tr in enumerate(self.triples):
            idx = [i for i, key in enumerate(slot_of) if key == tr]
            self.fi.append(scheme.masses(f, idx) if idx else [np.zeros((g.m, scheme.n)) for g in scheme.grids])
            comps = tuple(c for c in B.components if c.triple is not None and _slot_key(c.triple) == tr)
            Bk = Perturbation(B.scale, comps)
            self.bi.append([Bk.cell_matrices(g) if not Bk.is_zero() else None for g in scheme.grids])
            Ak = aux[k]
            steppers = [_Stepper(Ak, g) for g in scheme.grids]
            self.aux_steppers.append(steppers)
            diffs = []
            for st_aux, st in zip(steppers, scheme.steppers):
                d = st_aux.a - st.a
                diffs.append(None if not np.any(d) else d)
            self.aux_diff.append(diffs)

    def prepare(self, state, j0, j1):
        s = self.s
        cont = []
        for lev in s.levels:
            a, b = s.span(lev, j0, j1)
            cont.append(s.steppers[lev].run(state[lev], np.zeros((b - a, s.n)), a, b))
        return {"cont": cont, "span": (j0, j1)}

    def parts(self, ctx, v):
        """Slot-wise pieces of ``Phi(v)``: (MR part, [(aux part, correction)]) per level."""
        j0, j1 = ctx["span"]
        s = self.s
        mr_part, rungs = [], []
        for lev in s.levels:
            a, b = s.span(lev, j0, j1)
            st = s.steppers[lev]
            zero = np.zeros(s.n)
            u0part = st.run(zero, self.f0[lev][a:b], a, b)
            lev_rungs = []
            for k in range(len(self.triples)):
                g = self.fi[k][lev][a:b].copy()
                bm = self.bi[k][lev]
                total = self.cont_plus(ctx, v, lev)
                if bm is not None:
                    g -= st.matrix_mass(bm, total[1:], a, b)
                vt = self.aux_steppers[k][lev].run(zero, g, a, b)
                diff = self.aux_diff[k][lev]
                if diff is None:
                    w = np.zeros_like(vt)
                else:
                    w = st.run(zero, st.matrix_mass(diff, vt[1:], a, b), a, b)
                lev_rungs.append((vt, w))
            mr_part.append(ctx["cont"][lev] + u0part + sum((w for _, w in lev_rungs), np.zeros_like(u0part)))
            rungs.append(lev_rungs)
        return mr_part, rungs

    def cont_plus(self, ctx, v, lev):
        return ctx["cont"][lev] + v[lev]

    def apply(self, ctx, v):
        mr_part, rungs = self.parts(ctx, v)
        out = []
        for lev in self.s.levels:
            u = mr_part[lev] + sum((vt for vt, _ in rungs[lev]), np.zeros_like(mr_part[lev]))
            out.append(u - ctx["cont"][lev])
        return out

    def assemble(self, ctx, v):
        return [c + z for c, z in zip(ctx["cont"], v)]


def _aux_families(A, choice, T):
    if choice is None or choice == "restriction":
        return lambda k: A
    if choice == "average":
        avg = A.time_average(T)
        return lambda k: avg
    if isinstance(choice, OperatorFamily):
        return lambda k: choice
    return lambda k: choice[k]


class MixedScaleSolver(_SolverBase):
    """Contraction in ``L^p(w_kappa; X_1)`` with perturbations into several rungs.

    ``A_aux`` selects the auxiliary operators per triple: ``'restriction'``
    (the same matrix; the correction term vanishes), ``'average'`` (the
    autonomous time average; the correction term is active), or explicit
    families.
    """

    def __init__(self, p=4.0, kappa=0.0, A_aux="restriction", C0=None, tol=DEFAULT_TOL,
                 contraction_cap=CONTRACTION_CAP, max_iter=60, max_depth=12, calibration_samples=4, seed=0,
                 initial_guess=None, compute_norms=True, richardson=True):
        self.p = p
        self.kappa = kappa
        self.A_aux = A_aux
        self.C0 = C0
        self.tol = tol
        self.contraction_cap = contraction_cap
        self.max_iter = max_iter
        self.max_depth = max_depth
        self.calibration_samples = calibration_samples
        self.seed = seed
        self.initial_guess = initial_guess
        self.compute_norms = compute_norms
        self.richardson = richardson

    def fit(self, problem):
        from .admissibility import is_admissible, as_fraction

        pr = check_problem(problem)
        p = check_exponent(self.p)
        kappa = check_weight(p, self.kappa)
        A, B, grid, f = pr.A, pr.B, pr.grid, pr.f
        gs = A.scale.gamma_star
        for c in B.components:
            if c.triple is None:
                raise ParameterError("mixed-scale perturbations need an (r, nu, gamma) triple")
            verdict = is_admissible(as_fraction(p), as_fraction(kappa), as_fraction(gs), *_slot_key(c.triple))
            if not verdict.admissible:
                raise ParameterError(f"triple {c.triple} is not admissible: {verdict.reason}")
        C0, _ = _resolve_constants(A, B, p, kappa, grid, self.C0, 1.0, "mixed", self.calibration_samples, self.seed)
        budget = 1.0 / (2.0 * C0)
        budget_part = _summed_partition(B.components, pr.T, budget)
        cuts = _snap(budget_part, grid)
        scheme = _Scheme(A, grid, None, self.richardson)
        pick = _aux_families(A, self.A_aux, pr.T)
        aux = [pick(k) for k in range(_count_slots(B, f, p, kappa))]
        pmap = _MixedMap(scheme, A, aux, B, f, p, kappa)
        rng = None if self.initial_guess is None else np.random.default_rng(self.initial_guess)
        engine = _IntervalEngine(scheme, p, kappa, self.tol, self.contraction_cap, self.max_iter, self.max_depth, rng)
        full, done, its, factors, dists, resid = engine.run(pmap, pr.u0, cuts)
        traj = GridFunction(grid, scheme.combine(full), 0.0, A.scale)
        comps = self._decompose(scheme, pmap, full, pr.u0)
        norms = _solution_norms(traj, p, kappa) if self.compute_norms else {}
        if self.compute_norms:
            norms["sum_upper"] = _price_components(comps, pmap.triples, p, kappa)
        constants = {"C0": C0, "budget": budget,
                     "partition_bound": partition_count_bound(B.components, pr.T, budget)}
        report = _common_report(traj, budget_part, done, grid, its, factors, dists, resid, self.tol,
                                constants, norms, "mixed_scale", comps)
        return self._store(report)

    @staticmethod
    def _decompose(scheme, pmap, full, u0):
        """One global application of the split at the fixed point."""
        grid = scheme.grid
        state = [u0 for _ in scheme.levels]
        ctx = pmap.prepare(state, 0, grid.m)
        v = [full[lev] - ctx["cont"][lev] for lev in scheme.levels]
        mr_part, rungs = pmap.parts(ctx, v)
        comps = {"mr": GridFunction(grid, scheme.combine(mr_part), 0.0, scheme.A.scale)}
        for k, tr in enumerate(pmap.triples):
            vals = scheme.combine([rungs[lev][k][0] for lev in scheme.levels])
            comps[f"rung{k}"] = GridFunction(grid, vals, float(tr[2]), scheme.A.scale)
            corr = scheme.combine([rungs[lev][k][1] for lev in scheme.levels])
            comps[f"correction{k}"] = GridFunction(grid, corr, 0.0, scheme.A.scale)
        return comps


def _slot_key(triple):
    """Exact rational key for an ``(r, nu, gamma)`` slot."""
    from .admissibility import as_fraction

    return tuple(v if isinstance(v, Fraction) else as_fraction(v).limit_denominator(10**6) for v in triple)


def _count_slots(B, f, p, kappa):
    keys = []
    for c in B.components:
        if c.triple is not None and _slot_key(c.triple) not in keys:
            keys.append(_slot_key(c.triple))
    for comp in f.components:
        if not (comp.p == p and comp.weight == kappa and comp.level == 0.0):
            key = _slot_key((comp.p, comp.weight, comp.level))
            if key not in keys:
                keys.append(key)
    return len(keys)


def _price_components(comps, triples, p, kappa):
    from .spaces import NormComponent, sum_norm_upper

    terms = [NormComponent(comps["mr"], p, kappa, 0.0, "mr")]
    for k, tr in enumerate(triples):
        terms.append(NormComponent(comps[f"rung{k}"], float(tr[0]), float(tr[1]), float(tr[2]), "mr"))
    return sum_norm_upper(terms)


def mixed_scale_solve(A, A_aux, B, f, u0, p, kappa, grid, C0=None, tol=DEFAULT_TOL, **kwargs) -> SolveReport:
    """Functional form of :class:`MixedScaleSolver`."""
    solver = MixedScaleSolver(p=p, kappa=kappa, A_aux=A_aux if A_aux is not None else "restriction",
                              C0=C0, tol=tol, **kwargs)
    return solver.fit(EvolutionProblem(A, grid, u0, B, f)).report_


# ---------------------------------------------------------------------------
# mild solutions and transference


def _expw(z):
    """Weights ``E1 = (1-e^-z)/z`` and ``E2 = (1 - e^-z (1+z))/z**2`` (stable for small z)."""
    z = np.asarray(z, dtype=float)
    small = z < 0.1
    zs = np.where(small, z, 1.0)
    zl = np.where(small, 1.0, z)
    e1 = np.where(small, 1 - zs / 2 + zs**2 / 6 - zs**3 / 24 + zs**4 / 120 - zs**5 / 720,
                  -np.expm1(-zl) / zl)
    e2 = np.where(small, 0.5 - zs / 3 + zs**2 / 8 - zs**3 / 30 + zs**4 / 144 - zs**5 / 840,
                  (-np.expm1(-zl) - zl * np.exp(-zl)) / zl**2)
    return e1, e2


class _MildStepper:
    """Exact exponential integration of per-cell linear forcing for diagonal autonomous ``A0``."""

    def __init__(self, A0: OperatorFamily, grid: TimeGrid):
        if not A0.autonomous:
            raise ParameterError("the reference generator must be autonomous")
        if not A0.diagonal:
            raise ParameterError("the reference generator must be diagonal")
        lam = A0.diag
        h = grid.steps[:, None]
        z = h * lam[None, :]
        self.decay = np.exp(-z)
        e1, e2 = _expw(z)
        self.w_left = h * e2
        self.w_right = h * (e1 - e2)
        self.grid = grid
        self.n = A0.dim

    def run(self, start, left, right, j0, j1):
        out = np.empty((j1 - j0 + 1, self.n))
        out[0] = start
        dec = self.decay[j0:j1]
        inc = self.w_left[j0:j1] * left + self.w_right[j0:j1] * right
        for k in range(j1 - j0):
            out[k + 1] = dec[k] * out[k] + inc[k]
        return out


def semigroup_mild_solve(A0, g, u0, p, grid, return_norms=False):
    """``e^{-t A0} u0 + int_0^t e^{-(t-s) A0} g(s) ds`` with exact per-mode cell quadrature.

    ``g`` may be an :class:`~mrpert.problems.Inhomogeneity`, any source with
    ``cell_linear``, or None.
    """
    u0 = check_vector(u0 if u0 is not None else np.zeros(A0.dim), A0.dim)
    st = _MildStepper(A0, grid)
    if g is None or (isinstance(g, Inhomogeneity) and g.is_zero()):
        left = right = np.zeros((grid.m, A0.dim))
    else:
        left, right = g.cell_linear(grid)
    vals = st.run(u0, left, right, 0, grid.m)
    traj = GridFunction(grid, vals, 0.0, A0.scale)
    if not return_norms:
        return traj
    lev = trace_level(p)
    return traj, {
        "lp_x1": weighted_lp_norm(traj, p, 0.0, 1.0),
        "trace_sup": trace_sup_norm(traj, 0.0, lev),
        "ep": ep_norm(traj, p),
    }


class _TransferenceMap:
    """Transference map: mild solve with ``A0`` then an ``A``-problem correction.

    With ``mild="euler"`` the ``A0`` step uses the same implicit Euler pair
    as the correction, so the discrete fixed point solves the monolithic
    recursion exactly.  ``mild="exact"`` integrates the ``A0`` step with
    exact exponential weights on the fine grid.
    """

    def __init__(self, scheme, mild_fine, A0, B, f, p, mild="euler", scheme0=None):
        self.s = scheme
        self.mild = mild_fine
        self.mode = mild
        self.s0 = scheme0
        self.trivial = B.is_zero()
        g_idx = [i for i, c in enumerate(f.components) if isinstance(c.level, InterpLevel) or c.p == 1.0]
        h_idx = [i for i in range(len(f.components)) if i not in g_idx]
        fine = scheme.grids[-1]
        if g_idx:
            self.g_left, self.g_right = f.cell_linear(fine, g_idx)
        else:
            self.g_left = self.g_right = np.zeros((fine.m, scheme.n))
        self.g_mass = scheme.masses(f, g_idx) if g_idx else [np.zeros((gr.m, scheme.n)) for gr in scheme.grids]
        self.h = scheme.masses(f, h_idx) if h_idx else [np.zeros((gr.m, scheme.n)) for gr in scheme.grids]
        self.bmats = None if B.is_zero() else [B.cell_matrices(gr) for gr in scheme.grids]
        self.bfine = None if self.bmats is None else self.bmats[-1]
        self.a0 = A0.diag
        self.adiff = []
        for st in scheme.steppers:
            if not st.diagonal:
                raise ParameterError("transference scheme needs a diagonal operator family")
            d = self.a0[None, :] - st.a
            self.adiff.append(None if not np.any(d) else d)
        self.top = len(scheme.grids) - 1

    def prepare(self, state, j0, j1):
        return {"span": (j0, j1), "state": state}

    def _mild(self, ctx, v):
        j0, j1 = ctx["span"]
        a, b = self.s.span(self.top, j0, j1)
        left = self.g_left[a:b].copy()
        right = self.g_right[a:b].copy()
        if self.bfine is not None:
            vf = v[self.top]
            bm = self.bfine[a:b]
            left -= bm * vf[:-1]
            right -= bm * vf[1:]
        return self.mild.run(ctx["state"][self.top], left, right, a, b)

    def _mild_euler(self, ctx, v, lev):
        a, b = self.s.span(lev, *ctx["span"])
        st0 = self.s0.steppers[lev]
        rhs = self.g_mass[lev][a:b].copy()
        if self.bmats is not None:
            rhs -= st0.matrix_mass(self.bmats[lev], v[lev][1:], a, b)
        return st0.run(ctx["state"][lev], rhs, a, b)

    def apply(self, ctx, v):
        j0, j1 = ctx["span"]
        vt_fine = self._mild(ctx, v) if self.mode == "exact" else None
        out = []
        for lev in self.s.levels:
            a, b = self.s.span(lev, j0, j1)
            if vt_fine is not None:
                vt = vt_fine[:: self.s.factors[self.top] // self.s.factors[lev]]
            else:
                vt = self._mild_euler(ctx, v, lev)
            st = self.s.steppers[lev]
            rhs = self.h[lev][a:b].copy()
            if self.adiff[lev] is not None:
                rhs += st.matrix_mass(self.adiff[lev], vt[1:], a, b)
            z = st.run(np.zeros(self.s.n), rhs, a, b)
            out.append(vt + z)
        return out

    def assemble(self, ctx, v):
        return v

    def output(self, full):
        return self.s.combine(full)


class TransferenceSolver(_SolverBase):
    """Partition by ``||b||_{L^{p'}}`` and contract with the transference map on each piece."""

    def __init__(self, p=2.0, A0=None, C0=None, tol=DEFAULT_TOL, contraction_cap=CONTRACTION_CAP,
                 max_iter=60, max_depth=12, calibration_samples=4, seed=0, initial_guess=None,
                 compute_norms=True, richardson=True, mild="euler"):
        self.p = p
        self.A0 = A0
        self.mild = mild
        self.C0 = C0
        self.tol = tol
        self.contraction_cap = contraction_cap
        self.max_iter = max_iter
        self.max_depth = max_depth
        self.calibration_samples = calibration_samples
        self.seed = seed
        self.initial_guess = initial_guess
        self.compute_norms = compute_norms
        self.richardson = richardson

    def fit(self, problem):
        pr = check_problem(problem)
        p = check_exponent(self.p)
        A, B, grid, f = pr.A, pr.B, pr.grid, pr.f
        A0 = self.A0 if self.A0 is not None else (A if A.autonomous else A.time_average(pr.T))
        pprime = p / (p - 1.0)
        for c in B.components:
            envelope_class_check(c.envelope, pprime, 0.0, pr.T)
        C0, _ = _resolve_constants(A, B, p, 0.0, grid, self.C0, 1.0, "transference", self.calibration_samples, self.seed)
        budget = 1.0 / (2.0 * C0)
        comps = [c for c in B.components]
        budget_part = _summed_partition(comps, pr.T, budget)
        cuts = _snap(budget_part, grid)
        scheme = _Scheme(A, grid, None, self.richardson)
        if self.mild not in ("euler", "exact"):
            raise ParameterError(f"mild must be 'euler' or 'exact', got {self.mild!r}")
        if self.mild == "exact":
            pmap = _TransferenceMap(scheme, _MildStepper(A0, scheme.grids[-1]), A0, B, f, p, "exact")
        else:
            if not (A0.autonomous and A0.diagonal):
                raise ParameterError("the reference generator must be autonomous and diagonal")
            scheme0 = _Scheme(A0, grid, None, self.richardson)
            pmap = _TransferenceMap(scheme, None, A0, B, f, p, "euler", scheme0)
        rng = None if self.initial_guess is None else np.random.default_rng(self.initial_guess)
        engine = _IntervalEngine(scheme, p, 0.0, self.tol, self.contraction_cap, self.max_iter, self.max_depth, rng)
        full, done, its, factors, dists, resid = engine.run(pmap, pr.u0, cuts)
        traj = GridFunction(grid, scheme.combine(full), 0.0, A.scale)
        norms = _solution_norms(traj, p, 0.0, ep=True) if self.compute_norms else {}
        constants = {"C0": C0, "budget": budget,
                     "partition_bound": partition_count_bound(B.components, pr.T, budget)}
        report = _common_report(traj, budget_part, done, grid, its, factors, dists, resid, self.tol,
                                constants, norms, "transference")
        return self._store(report)


def transference_solve(A, B, f, u0, p, grid, A0=None, C0=None, tol=DEFAULT_TOL, **kwargs) -> SolveReport:
    """Functional form of :class:`TransferenceSolver`."""
    solver = TransferenceSolver(p=p, A0=A0, C0=C0, tol=tol, **kwargs)
    return solver.fit(EvolutionProblem(A, grid, u0, B, f)).report_


# ---------------------------------------------------------------------------
# MR constant estimator


class MRConstantEstimator(BaseEstimator):
    """Lower-bound estimate of the weighted maximal-regularity constant.

    Attributes after ``fit``: ``value_``, ``ratios_``, ``mode_ratios_``
    (closed-form per-mode ratios for autonomous diagonal families),
    ``estimate_`` (an :class:`MrEstimate`).
    """

    def __init__(self, p=2.0, kappa=0.0, samples=8, seed=0, taus_per_sample=4, include_modes=True):
        self.p = p
        self.kappa = kappa
        self.samples = samples
        self.seed = seed
        self.taus_per_sample = taus_per_sample
        self.include_modes = include_modes

    def fit(self, A: OperatorFamily, grid: TimeGrid):
        p = check_exponent(self.p)
        kappa = check_weight(p, self.kappa)
        rng = np.random.default_rng(self.seed)
        ratios = []
        for _ in range(int(self.samples)):
            f = random_cell_forcing(grid, A.dim, rng, scale=A.scale)
            forcing = Inhomogeneity(A.scale, (_Slot(f),), grid.T)
            u = oracle_solve(A, None, forcing, np.zeros(A.dim), grid)
            taus = rng.choice(np.arange(1, grid.m + 1), size=min(self.taus_per_sample, grid.m), replace=False)
            for j in sorted(taus):
                tau = float(grid.nodes[j])
                den = weighted_lp_norm(f, p, kappa, 0.0, interval=(0.0, tau))
                if den > 0:
                    ratios.append(mr_norm(u, p, kappa, interval=(0.0, tau)) / den)
        mode_ratios = ()
        if self.include_modes:
            ones = SeparableSource(ConstantEnvelope(1.0), np.ones(A.dim), grid.T, A.scale)
            u = oracle_solve(A, None, Inhomogeneity(A.scale, (_Slot(ones),), grid.T), np.zeros(A.dim), grid)
            if A.diagonal:
                for i in range(A.dim):
                    ui = GridFunction(grid, u.values[:, i], 0.0)
                    lam = A.diag[i]
                    lp1 = lam * weighted_lp_norm(ui, p, kappa)
                    num = max(lp1, weighted_lp_norm(ui, p, kappa),
                              _scalar_derivative_norm(ui, p, kappa))
                    ratios.append(num / (grid.T ** (kappa + 1) / (kappa + 1)) ** (1.0 / p))
                if A.autonomous:
                    mode_ratios = tuple(_mode_closed_form_ratio(l, p, kappa, grid.T) for l in A.diag)
        self.ratios_ = tuple(float(r) for r in ratios)
        self.value_ = float(max(self.ratios_)) if self.ratios_ else 0.0
        self.mode_ratios_ = mode_ratios
        self.estimate_ = MrEstimate(self.value_, int(self.samples), self.ratios_, grid.m, mode_ratios)
        return self


def _scalar_derivative_norm(u, p, kappa):
    from .spaces import derivative_lp_norm

    return derivative_lp_norm(u, p, kappa)
