"""Numerical checks of the embeddings and estimates behind the solvers.

Each check returns a :class:`CheckReport`.  Embedding and estimate checks
measure a ratio maximized over sample functions and declare it stable when
its relative drift across grid refinement levels and time horizons stays
below a threshold.  Discrete norms are only equivalent to the continuum
norms, so stability (not an exact constant) is what gets asserted.

Samples for the embedding checks are per-mode scaled shapes ``psi(lam t)``
on a log-spaced spectrum.  Such a family is invariant under time rescaling
up to the spectral cutoff, so its sampled suprema do not depend on ``T``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from ._validation import EnvelopeClassError, ParameterError
from .admissibility import as_fraction, holder_exponents, is_admissible
from .problems import (
    ConstantEnvelope,
    Perturbation,
    PiecewiseEnvelope,
    PowerEnvelope,
    SeparableSource,
    interp_eigen_constant,
    make_diagonal,
    make_diagonal_heat,
    make_geometric,
    make_inhomogeneity,
    make_nonautonomous,
    make_perturbation,
    random_smooth_forcing,
    random_step_profile,
)
from .solver import (
    DEFAULT_TOL,
    key_estimate_ratio,
    mixed_scale_solve,
    oracle_solve,
    partition_by_budget,
    partition_count_bound,
    picard_solve,
    transference_solve,
    semigroup_mild_solve,
)
from .spaces import (
    GridFunction,
    HilbertScale,
    TimeGrid,
    ep_norm,
    level_norm,
    mr_norm,
    rung_norm,
    trace_level,
    trace_sup_norm,
    weighted_lp_norm,
)

__all__ = [
    "CheckReport",
    "relative_drift",
    "vanishing_samples",
    "measuring_times",
    "check_trace_embedding",
    "check_key_perturbation_estimate",
    "check_weighted_holder",
    "check_mixed_embedding",
    "check_energy_estimates",
    "criticality_experiment",
    "uniqueness_crosscheck",
    "ENERGY_ESTIMATES",
    "CRITICAL_SCHEMES",
    "SCHEMES",
    "holder_equality_ratio",
    "trace_ceiling",
]

DEFAULT_LEVELS = (256, 512, 1024)
DEFAULT_HORIZONS = (0.25, 1.0, 4.0)


@dataclass(frozen=True)
class CheckReport:
    """Outcome of one check: measured ratios, stability and the pass flag."""

    name: str
    params: dict
    ratios: dict
    stable: bool
    passed: bool
    samples: int
    drift: float = 0.0
    threshold: float = 0.0
    details: dict = field(default_factory=dict)

    def __bool__(self):
        return self.passed

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)) and not isinstance(obj, bool):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def relative_drift(values) -> float:
    """``(max - min) / max`` of positive values (0 for an empty or all-zero set)."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0 or np.max(np.abs(v)) == 0:
        return 0.0
    return float((np.max(v) - np.min(v)) / np.max(np.abs(v)))


# ---------------------------------------------------------------------------
# sample families


SHAPES = {
    "bump": lambda s: s * np.exp(-s),
    "ramp": lambda s: -np.expm1(-s) * np.exp(-s / 4.0),
    "square": lambda s: 0.5 * s**2 * np.exp(-s),
}


@dataclass(frozen=True, eq=False)
class _Sample:
    func: GridFunction
    mode: int | None = None


def vanishing_samples(scale: HilbertScale, grid: TimeGrid, count: int, seed: int = 0,
                      shapes=("bump", "ramp"), single_modes=True):
    """Grid functions vanishing at 0 built from ``psi(lam_i t)`` per mode.

    All single-mode samples come first (one per mode and shape), then
    ``count`` random combinations with standard normal amplitudes.  The
    random draws depend only on ``seed``, so the same abstract samples are
    used on every grid.
    """
    lam = scale.eigenvalues
    t = grid.nodes
    out = []
    if single_modes:
        for k in range(scale.dim):
            for name in shapes:
                vals = np.zeros((grid.m + 1, scale.dim))
                vals[:, k] = SHAPES[name](lam[k] * t)
                out.append(_Sample(GridFunction(grid, vals, 0.0, scale), k))
    rng = np.random.default_rng(seed)
    for _ in range(int(count)):
        amps = rng.standard_normal(scale.dim)
        picks = rng.integers(0, len(shapes), size=scale.dim)
        vals = np.stack([amps[i] * SHAPES[shapes[picks[i]]](lam[i] * t) for i in range(scale.dim)], axis=1)
        out.append(_Sample(GridFunction(grid, vals, 0.0, scale), None))
    return out


def _sup_level(sample: _Sample, weight_exponent, level, mode_norms, upto=None):
    """``max_{t <= upto} t**e ||u(t)||_level``; single-mode samples use the exact mode norm."""
    u = sample.func
    upto = u.grid.T if upto is None else upto
    if sample.mode is None:
        return trace_sup_norm(u, weight_exponent, level, interval=(0.0, upto))
    t = u.grid.nodes
    keep = t <= upto * (1 + 1e-14)
    vals = np.abs(u.values[keep, sample.mode]) * mode_norms[sample.mode]
    t = t[keep]
    if weight_exponent > 0:
        return float(np.max(t[1:] ** weight_exponent * vals[1:]))
    return float(np.max(vals))


def measuring_times(grid: TimeGrid, count=4, factor=4.0):
    """Grid nodes nearest to ``T, T/factor, ..., T/factor**(count-1)``.

    Ratios are maximized over the sub-horizons ``(0, t)``: the supremum over
    horizons up to ``T`` is the quantity that a horizon-independent
    constant bounds, and it stays comparable across ``T`` on a spectrum
    bounded below.
    """
    out = []
    for k in range(int(count)):
        j = int(np.argmin(np.abs(grid.nodes - grid.T / factor**k)))
        if j > 0 and float(grid.nodes[j]) not in out:
            out.append(float(grid.nodes[j]))
    return out


def _mode_norms(scale, level):
    return level_norm(np.eye(scale.dim), level, scale)


def _study(measure, horizons, levels, grading):
    """Table ``{(T, m): measure(grid)}`` over horizons and refinement levels."""
    table = {}
    for T in horizons:
        for m in levels:
            table[(float(T), int(m))] = measure(TimeGrid.graded(float(T), int(m), grading))
    return table


def _table_out(table):
    return {f"T={T:g},m={m}": v for (T, m), v in table.items()}


# ---------------------------------------------------------------------------
# trace embedding


def trace_ceiling(p, kappa) -> float:
    """``64 p max(1/(p-1+kappa), 1/(1+kappa))``: a sanity ceiling for trace ratios."""
    return 64.0 * p * max(1.0 / (p - 1.0 + kappa), 1.0 / (1.0 + kappa))


def _linear_trace_regression(p, kappa, T):
    """Closed-form ratios for ``u(t) = t`` on the one-mode scale with eigenvalue 1."""
    theta = trace_level(p, kappa).theta
    c_kappa = interp_eigen_constant(theta, p)
    c_zero = interp_eigen_constant(trace_level(p, 0.0).theta, p)
    lp_t = (T ** (p + kappa + 1) / (p + kappa + 1)) ** (1 / p)
    lp_1 = (T ** (kappa + 1) / (kappa + 1)) ** (1 / p)
    mr = max(lp_t, lp_1)
    return c_kappa * T / mr, c_zero * T ** (1 + kappa / p) / mr


def check_trace_embedding(p, kappa=0.0, scale=None, grid_levels=DEFAULT_LEVELS, horizons=DEFAULT_HORIZONS,
                          samples=6, seed=0, grading=3.0, threshold=0.10) -> CheckReport:
    """Sup of trace norms over the maximal-regularity norm, for samples with ``u(0) = 0``.

    Two embeddings are measured: the unweighted sup at the weighted trace
    level and the ``t**(kappa/p)``-weighted sup at the unweighted trace
    level.  The linear function ``u(t) = t`` on a one-mode scale is a fixed
    closed-form regression sample.
    """
    p, kappa = float(p), float(kappa)
    if not 0 <= kappa < p - 1:
        raise ParameterError(f"weight exponent must lie in [0, p-1), got {kappa}")
    scale = scale if scale is not None else make_geometric(24, 1.0, 1e4)[0]
    lev_k = trace_level(p, kappa)
    lev_0 = trace_level(p, 0.0)
    norms_k = _mode_norms(scale, lev_k)
    norms_0 = _mode_norms(scale, lev_0)
    ceiling = trace_ceiling(p, kappa)

    def measure(grid):
        best = [0.0, 0.0]
        for s in vanishing_samples(scale, grid, samples, seed):
            for t in measuring_times(grid):
                den = mr_norm(s.func, p, kappa, interval=(0.0, t))
                if den <= 0:
                    continue
                best[0] = max(best[0], _sup_level(s, 0.0, lev_k, norms_k, t) / den)
                best[1] = max(best[1], _sup_level(s, kappa / p, lev_0, norms_0, t) / den)
        return tuple(best)

    table = _study(measure, horizons, grid_levels, grading)
    drift_a = relative_drift(v[0] for v in table.values())
    drift_b = relative_drift(v[1] for v in table.values())
    drift = max(drift_a, drift_b)

    one, _ = make_diagonal([1.0])
    regression = {}
    reg_ok = True
    for T in horizons:
        grid = TimeGrid.graded(float(T), int(grid_levels[-1]), grading)
        u = GridFunction.from_callable(grid, lambda t: t, 0.0, one)
        den = mr_norm(u, p, kappa)
        got = (trace_sup_norm(u, 0.0, lev_k) / den, trace_sup_norm(u, kappa / p, lev_0) / den)
        want = _linear_trace_regression(p, kappa, float(T))
        err = max(abs(g - w) / w for g, w in zip(got, want))
        reg_ok &= err <= 1e-4
        regression[f"T={T:g}"] = {"measured": got, "closed_form": want, "rel_error": err}

    top = max(max(v) for v in table.values())
    stable = drift <= threshold
    passed = stable and reg_ok and top <= ceiling and np.isfinite(top)
    return CheckReport(
        name="trace_embedding",
        params={"p": p, "kappa": kappa, "dim": scale.dim, "levels": list(grid_levels),
                "horizons": list(horizons), "seed": seed},
        ratios={"unweighted": {k: v[0] for k, v in _table_out(table).items()},
                "weighted": {k: v[1] for k, v in _table_out(table).items()}},
        stable=stable,
        passed=bool(passed),
        samples=len(vanishing_samples(scale, TimeGrid.graded(1.0, 4, grading), samples, seed)),
        drift=drift,
        threshold=threshold,
        details={"ceiling": ceiling, "max_ratio": top, "regression": regression,
                 "drift_unweighted": drift_a, "drift_weighted": drift_b},
    )


# ---------------------------------------------------------------------------
# key perturbation estimate


def check_key_perturbation_estimate(p, kappa=0.0, q=4.0, B=None, envelope=None, scale=None,
                                    grid_levels=DEFAULT_LEVELS, horizons=DEFAULT_HORIZONS, samples=6,
                                    seed=0, grading=3.0, threshold=0.10, time_threshold=0.15) -> CheckReport:
    """Sup of ``||B v||_{L^p(0,t;w_kappa;X_0)} / (||b||_{L^q(0,t)} ||v||_MR)`` over samples.

    ``B`` defaults to the fractional perturbation ``b(t) lam**(1-1/q)`` with
    ``b`` given by ``envelope`` (default ``t**(-1/(2q))``).  The measuring
    times ``t`` are those of :func:`measuring_times`; the per-time suprema
    must agree within ``time_threshold``.
    """
    p, kappa, q = float(p), float(kappa), float(q)
    if B is None:
        scale = scale if scale is not None else make_geometric(24, 1.0, 1e4)[0]
        envelope = envelope if envelope is not None else PowerEnvelope(1.0, 1.0 / (2.0 * q))
        B = make_perturbation(scale, "lower_order", envelope, q=q)
    scale = B.scale
    for c in B.components:
        if c.q_b is not None and not c.envelope.is_zero():
            from .admissibility import envelope_class_check

            envelope_class_check(c.envelope, c.q_b, c.mu_b, max(horizons))

    per_time = {}

    def measure(grid):
        if B.is_zero():
            return 0.0
        best = 0.0
        for t in measuring_times(grid):
            at_t = max(key_estimate_ratio(B, s.func, t, p, kappa) for s in vanishing_samples(scale, grid, samples, seed))
            per_time[f"T={grid.T:g},m={grid.m},t={t:.6g}"] = at_t
            best = max(best, at_t)
        return best

    table = _study(measure, horizons, grid_levels, grading)
    drift = relative_drift(table.values())
    time_drift = relative_drift(per_time.values())

    one, _ = make_diagonal([1.0])
    regression = {}
    reg_ok = True
    for T in horizons:
        grid = TimeGrid.graded(float(T), int(grid_levels[-1]), grading)
        Bc = make_perturbation(one, "lower_order", ConstantEnvelope(1.0), q=q)
        v = GridFunction.from_callable(grid, lambda t: t, 0.0, one)
        got = key_estimate_ratio(Bc, v, float(T), p, kappa)
        lp_t = (T ** (p + kappa + 1) / (p + kappa + 1)) ** (1 / p)
        lp_1 = (T ** (kappa + 1) / (kappa + 1)) ** (1 / p)
        want = lp_t / (T ** (1 / q) * max(lp_t, lp_1))
        err = abs(got - want) / want
        reg_ok &= err <= 1e-4
        regression[f"T={T:g}"] = {"measured": got, "closed_form": want, "rel_error": err}

    top = max(table.values())
    stable = drift <= threshold
    time_ok = time_drift <= time_threshold
    return CheckReport(
        name="key_perturbation_estimate",
        params={"p": p, "kappa": kappa, "q": q, "dim": scale.dim, "levels": list(grid_levels),
                "horizons": list(horizons), "seed": seed},
        ratios=_table_out(table),
        stable=stable,
        passed=bool(stable and time_ok and reg_ok and np.isfinite(top)),
        samples=samples + 2 * scale.dim,
        drift=drift,
        threshold=threshold,
        details={"max_ratio": top, "regression": regression, "per_time": per_time,
                 "time_drift": time_drift, "time_threshold": time_threshold},
    )


# ---------------------------------------------------------------------------
# weighted Hoelder inequality


class _Pointwise:
    """Scalar time function given by a callable, sampled on a grid."""

    def __init__(self, grid, func):
        self.grid = grid
        self.func = func
        self.scale = None

    def evaluate(self, times):
        return np.asarray(self.func(np.asarray(times, dtype=float)))[:, None]


def _gauss_lp(values_fn, p, weight, grid, order=8):
    """``(int t**weight |f|**p)**(1/p)`` with pointwise weights at Gauss points."""
    x, w = np.polynomial.legendre.leggauss(order)
    lo, hi = grid.nodes[:-1], grid.nodes[1:]
    h = hi - lo
    t = lo[:, None] + h[:, None] * (x[None, :] + 1) / 2
    wt = h[:, None] * w[None, :] / 2 * t**weight
    return float(np.sum(wt * np.abs(values_fn(t)) ** p) ** (1 / p))


def _rational(x) -> Fraction:
    """Exact rational; floats are snapped to the nearest small-denominator fraction."""
    if isinstance(x, float):
        return as_fraction(x).limit_denominator(10**6)
    return as_fraction(x)


def check_weighted_holder(p, q, r, kappa=0.0, nu=0.0, samples=16, seed=0, grid=None,
                          tol=1e-8) -> CheckReport:
    """``||fg||_{L^r(w_nu)} <= ||f||_{L^q(w_mu)} ||g||_{L^p(w_kappa)}`` with ``mu = (nu p - kappa r)/(p - r)``.

    Random piecewise-linear ``f, g`` are integrated with one pointwise-weighted
    Gauss rule for all three norms, so the discrete inequality is exact up to
    rounding.  Power functions (including a Hoelder-equality pair) are checked
    through their closed-form norms.
    """
    pf, qf, rf, kf, nf = map(_rational, (p, q, r, kappa, nu))
    if 1 / rf != 1 / pf + 1 / qf:
        raise ParameterError("exponents must satisfy 1/r = 1/p + 1/q")
    if not (rf < pf and rf < qf):
        raise ParameterError("r must be smaller than p and q")
    if nf / rf < kf / pf:
        raise ParameterError("nu/r >= kappa/p is needed for a nonnegative weight on f")
    mu = (nf * pf - kf * rf) / (pf - rf)
    p, q, r, kappa, nu, muf = map(float, (pf, qf, rf, kf, nf, mu))
    grid = grid if grid is not None else TimeGrid.graded(1.0, 256, 2.0)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(int(samples)):
        fv = rng.standard_normal(grid.m + 1)
        gv = rng.standard_normal(grid.m + 1)
        ff = lambda t, v=fv: np.interp(t, grid.nodes, v)
        gf = lambda t, v=gv: np.interp(t, grid.nodes, v)
        lhs = _gauss_lp(lambda t: ff(t) * gf(t), r, nu, grid)
        rhs = _gauss_lp(ff, q, muf, grid) * _gauss_lp(gf, p, kappa, grid)
        worst = max(worst, lhs / rhs)
    # closed-form power pairs on (0, 1)
    power = {}
    for a, b in ((0.0, 0.0), (1.0 / (2 * q), 1.0 / (2 * p)), (0.1, 0.3)):
        f = PowerEnvelope(1.0, a)
        g = PowerEnvelope(1.0, b)
        fg = PowerEnvelope(1.0, a + b)
        vals = (fg.norm(r, nu, (0.0, 1.0)), f.norm(q, muf, (0.0, 1.0)), g.norm(p, kappa, (0.0, 1.0)))
        if all(np.isfinite(vals)):
            power[f"a={a:g},b={b:g}"] = vals[0] / (vals[1] * vals[2])
    worst_power = max(power.values()) if power else 0.0
    passed = worst <= 1 + tol and worst_power <= 1 + tol
    return CheckReport(
        name="weighted_holder",
        params={"p": p, "q": q, "r": r, "kappa": kappa, "nu": nu, "mu": muf, "seed": seed},
        ratios={"random_max": worst, "power": power},
        stable=True,
        passed=bool(passed),
        samples=int(samples),
        threshold=tol,
        details={"weight_on_f": str(mu)},
    )


def holder_equality_ratio(p, q, r, kappa=0.0, nu=0.0, alpha=None) -> float:
    """Ratio for ``g = t**(-alpha)`` and ``f`` aligned so that Hoelder is an equality.

    Equality needs ``t**mu |f|**q`` proportional to ``t**kappa |g|**p``; with
    ``f = t**(-beta)`` that is ``beta = (mu - kappa + alpha p) / q``.  The
    default ``alpha = (1 + kappa) / (2p)`` keeps every norm finite.
    """
    p, q, r, kappa, nu = map(float, (p, q, r, kappa, nu))
    alpha = (1.0 + kappa) / (2.0 * p) if alpha is None else float(alpha)
    mu = (nu * p - kappa * r) / (p - r)
    beta = (mu - kappa + alpha * p) / q
    f, g, fg = PowerEnvelope(1.0, beta), PowerEnvelope(1.0, alpha), PowerEnvelope(1.0, alpha + beta)
    return fg.norm(r, nu, (0.0, 1.0)) / (f.norm(q, mu, (0.0, 1.0)) * g.norm(p, kappa, (0.0, 1.0)))


# ---------------------------------------------------------------------------
# mixed-scale embedding


def check_mixed_embedding(p, kappa, triple, scale=None, grid_levels=DEFAULT_LEVELS, horizons=DEFAULT_HORIZONS,
                          samples=6, seed=0, grading=3.0, threshold=0.10,
                          blowup_horizons=(1.0, 0.25, 0.0625)) -> CheckReport:
    """Rung-to-solution-space embedding ratios for ``w(0) = 0`` plus the ``w(0) != 0`` blow-up branch.

    Measured against the rung norm
    ``L^r(w_nu; X_{1+gamma}) cap W^{1,r}(w_nu; X_gamma)``: the
    ``L^p(w_kappa; X_1)`` norm, the sup at the weighted trace level and the
    ``t**(kappa/p)``-weighted sup at the unweighted trace level.
    """
    r, nu, gamma = triple
    scale = scale if scale is not None else make_geometric(24, 1.0, 1e4)[0]
    verdict = is_admissible(as_fraction(p), as_fraction(kappa), as_fraction(scale.gamma_star),
                            as_fraction(r), as_fraction(nu), as_fraction(gamma))
    if not verdict.admissible:
        raise ParameterError(f"triple {tuple(map(str, map(as_fraction, triple)))} is not admissible: {verdict.reason}")
    p, kappa, r, nu, gamma = (float(as_fraction(x)) for x in (p, kappa, r, nu, gamma))
    lev_k, lev_0 = trace_level(p, kappa), trace_level(p, 0.0)
    norms_k, norms_0 = _mode_norms(scale, lev_k), _mode_norms(scale, lev_0)

    def measure(grid):
        best = np.zeros(3)
        for s in vanishing_samples(scale, grid, samples, seed):
            for t in measuring_times(grid):
                span = (0.0, t)
                den = rung_norm(s.func, r, nu, gamma, interval=span)
                if den <= 0:
                    continue
                vals = (weighted_lp_norm(s.func, p, kappa, 1.0, interval=span),
                        _sup_level(s, 0.0, lev_k, norms_k, t),
                        _sup_level(s, kappa / p, lev_0, norms_0, t))
                best = np.maximum(best, np.asarray(vals) / den)
        return tuple(float(x) for x in best)

    table = _study(measure, horizons, grid_levels, grading)
    drifts = [relative_drift(v[i] for v in table.values()) for i in range(3)]
    drift = max(drifts)

    # nonvanishing branch: constant-in-time samples
    rng = np.random.default_rng(seed)
    consts = [np.eye(scale.dim)[0]] + [rng.standard_normal(scale.dim) for _ in range(int(samples))]
    blowup = []
    for T in blowup_horizons:
        grid = TimeGrid.graded(float(T), int(grid_levels[0]), grading)
        best = 0.0
        for c in consts:
            w = GridFunction(grid, np.tile(c, (grid.m + 1, 1)), 0.0, scale)
            best = max(best, weighted_lp_norm(w, p, kappa, 1.0) / rung_norm(w, r, nu, gamma))
        blowup.append(best)
    monotone = all(b2 > b1 for b1, b2 in zip(blowup[:-1], blowup[1:]))

    # regression sample w(t) = t e_1 on a one-mode scale
    one, _ = make_diagonal([1.0])
    regression = {}
    reg_ok = True
    for T in horizons:
        grid = TimeGrid.graded(float(T), int(grid_levels[-1]), grading)
        w = GridFunction.from_callable(grid, lambda t: t, 0.0, one)
        got = weighted_lp_norm(w, p, kappa, 1.0) / rung_norm(w, r, nu, gamma)
        lp = (T ** (p + kappa + 1) / (p + kappa + 1)) ** (1 / p)
        rung = max((T ** (r + nu + 1) / (r + nu + 1)) ** (1 / r), (T ** (nu + 1) / (nu + 1)) ** (1 / r))
        err = abs(got - lp / rung) / (lp / rung)
        reg_ok &= err <= 1e-4
        regression[f"T={T:g}"] = {"measured": got, "closed_form": lp / rung, "rel_error": err}

    stable = drift <= threshold
    out = _table_out(table)
    return CheckReport(
        name="mixed_embedding",
        params={"p": p, "kappa": kappa, "triple": [r, nu, gamma], "dim": scale.dim,
                "levels": list(grid_levels), "horizons": list(horizons), "seed": seed},
        ratios={"lp_x1": {k: v[0] for k, v in out.items()},
                "trace": {k: v[1] for k, v in out.items()},
                "weighted_trace": {k: v[2] for k, v in out.items()}},
        stable=stable,
        passed=bool(stable and monotone and reg_ok),
        samples=samples + 2 * scale.dim,
        drift=drift,
        threshold=threshold,
        details={"drifts": drifts, "blowup_horizons": list(blowup_horizons), "blowup_ratios": blowup,
                 "blowup_monotone": monotone, "regression": regression},
    )


# ---------------------------------------------------------------------------
# energy estimates


ENERGY_ESTIMATES = ("picard", "picard_trace", "mixed", "mixed_local", "transference", "mild_l1")


def _decaying(rng, n, power):
    return rng.standard_normal(n) / np.arange(1, n + 1) ** power


def _trace_norm(u0, scale, p, kappa=0.0):
    return float(level_norm(u0[None, :], trace_level(p, kappa), scale)[0])


def _scaled(src, factor):
    if isinstance(src, SeparableSource):
        return SeparableSource(src.profile, factor * src.vector, src.T, src.scale, src.level)
    return src * factor


def _energy_sample(estimate, cfg, scale, A, grid, rng, k):
    """One ``(lhs, rhs)`` pair; ``k < 0`` selects random data, ``k >= 0`` a single-mode datum.

    ``cfg['data_scale']`` multiplies every datum after it is drawn.
    """
    n, T = scale.dim, grid.T
    p = cfg["p"]
    fac = float(cfg.get("data_scale", 1.0))
    unit = np.zeros(n)
    if k >= 0:
        unit[k] = 1.0
    if estimate in ("picard", "picard_trace"):
        q = p if estimate == "picard_trace" else cfg["q"]
        B = make_perturbation(scale, "lower_order", PowerEnvelope(cfg["c"], cfg["alpha"]), q=q, p=p)
        if k >= 0:
            u0 = unit if k % 2 == 0 else np.zeros(n)
            f_src = SeparableSource(ConstantEnvelope(1.0), unit if k % 2 else np.zeros(n), T, scale)
        else:
            u0 = _decaying(rng, n, 2.0)
            f_src = random_smooth_forcing(grid, n, rng, scale=scale)
            f_src = GridFunction(grid, f_src.values / np.arange(1, n + 1), 0.0, scale)
        u0, f_src = fac * u0, _scaled(f_src, fac)
        f = make_inhomogeneity(scale, [(f_src, (p, cfg["kappa"], 0.0))], T)
        u = oracle_solve(A, B, f, u0, grid)
        lhs = mr_norm(u, p, cfg["kappa"])
        rhs = _trace_norm(u0, scale, p, cfg["kappa"]) + f.total_norm()
        return lhs, rhs
    if estimate in ("mixed", "mixed_local"):
        r, nu, gamma = cfg["triple"]
        B = make_perturbation(scale, "mixed_scale", PowerEnvelope(cfg["c"], cfg["alpha"]), p=p, triple=cfg["triple"])
        if k >= 0:
            u0 = unit.copy()
            g_vec = unit.copy()
            f0 = SeparableSource(ConstantEnvelope(1.0), unit, T, scale)
        else:
            u0 = _decaying(rng, n, 2.0)
            g_vec = _decaying(rng, n, 2.0)
            f0 = random_smooth_forcing(grid, n, rng, scale=scale)
            f0 = GridFunction(grid, f0.values / np.arange(1, n + 1), 0.0, scale)
        g = SeparableSource(PowerEnvelope(1.0, cfg["g_alpha"]), fac * g_vec, T, scale)
        u0, f0 = fac * u0, _scaled(f0, fac)
        f = make_inhomogeneity(scale, [(f0, (p, cfg["kappa"], 0.0)), (g, (float(r), float(nu), float(gamma)))],
                               T, p=p, kappa=cfg["kappa"])
        rep = mixed_scale_solve(A, cfg.get("A_aux", "restriction"), B, f, u0, p, cfg["kappa"], grid,
                                C0=cfg["C0"], compute_norms=True)
        lhs = rep.norms["sum_upper"]
        rhs = _trace_norm(u0, scale, p, cfg["kappa"]) + f.total_norm()
        return lhs, rhs
    if estimate == "transference":
        lev = trace_level(p)
        B = make_perturbation(scale, "trace_valued", PowerEnvelope(cfg["c"], cfg["alpha"]), p=p)
        if k >= 0:
            u0, g_vec = unit.copy(), unit.copy()
            h = SeparableSource(ConstantEnvelope(1.0), unit, T, scale)
        else:
            u0 = _decaying(rng, n, 2.0)
            g_vec = _decaying(rng, n, 2.0)
            h = random_smooth_forcing(grid, n, rng, scale=scale)
            h = GridFunction(grid, h.values / np.arange(1, n + 1), 0.0, scale)
        g = SeparableSource(PowerEnvelope(1.0, cfg["g_alpha"]), fac * g_vec, T, scale)
        u0, h = fac * u0, _scaled(h, fac)
        f = make_inhomogeneity(scale, [(g, (1.0, 0.0, lev)), (h, (p, 0.0, 0.0))], T)
        rep = transference_solve(A, B, f, u0, p, grid, C0=cfg["C0"])
        return rep.norms["ep"], _trace_norm(u0, scale, p) + f.total_norm()
    if estimate == "mild_l1":
        lev = trace_level(p)
        width = cfg["width"]
        if k >= 0:
            u0 = np.zeros(n)
            vec = unit
        else:
            u0 = np.zeros(n)
            vec = _decaying(rng, n, 2.0)
        spike = PiecewiseEnvelope((0.0, width, max(T, 2 * width)), (1.0 / width, 0.0))
        g = make_inhomogeneity(scale, [(SeparableSource(spike, fac * vec, T, scale), (1.0, 0.0, lev))], T)
        u = semigroup_mild_solve(A, g, u0, p, grid)
        return ep_norm(u, p), _trace_norm(u0, scale, p) + g.total_norm()
    raise ParameterError(f"unknown estimate {estimate!r}; expected one of {ENERGY_ESTIMATES}")


_ENERGY_DEFAULTS = {
    "picard": {"p": 2.0, "kappa": 0.0, "q": 4.0, "c": 0.5, "alpha": 0.125, "T": 1.0},
    "picard_trace": {"p": 2.0, "kappa": 0.0, "c": 0.5, "alpha": 0.25, "T": 1.0},
    "mixed": {"p": 4.0, "kappa": 0.0, "triple": (Fraction(4, 3), Fraction(0), Fraction(1, 2)), "c": 0.5,
            "alpha": 0.25, "g_alpha": 0.25, "C0": 1.0, "T": 1.0},
    "mixed_local": {"p": 4.0, "kappa": 0.0, "triple": (Fraction(4, 3), Fraction(0), Fraction(1, 2)), "c": 0.5,
             "alpha": 0.25, "g_alpha": 0.25, "C0": 1.0, "T": 0.05},
    "transference": {"p": 2.0, "kappa": 0.0, "c": 0.5, "alpha": 0.25, "g_alpha": 0.9, "C0": 1.0, "T": 1.0},
    "mild_l1": {"p": 2.0, "kappa": 0.0, "width": 1e-2, "T": 1.0},
}


def _energy_constant(estimate, cfg, n, m, seed, samples, grading):
    scale, A = make_diagonal_heat(n)
    grid = TimeGrid.graded(cfg["T"], m, grading)
    rng = np.random.default_rng(seed)
    best = 0.0
    for k in list(range(min(4, n))) + [-1] * int(samples):
        lhs, rhs = _energy_sample(estimate, cfg, scale, A, grid, rng, k)
        if rhs > 0:
            best = max(best, lhs / rhs)
    return best


def check_energy_estimates(estimate, config=None, samples=3, seed=0, ns=(16, 32, 64, 128),
                           grid_levels=(128, 256, 512), draws=2, grading=3.0, threshold=0.15,
                           spike_halvings=4, data_scale=None) -> CheckReport:
    """Max of solution norm over data norm for one estimate, across truncations, grids and draws.

    Data norms are those of explicit decompositions (sum of slot norms), so
    this is the estimate before any infimum over decompositions.  For
    ``'mild_l1'`` the spike width is also halved ``spike_halvings`` times.
    ``data_scale`` multiplies all data (the constant must not change).
    """
    estimate = str(estimate)
    if estimate not in _ENERGY_DEFAULTS:
        raise ParameterError(f"unknown estimate {estimate!r}; expected one of {ENERGY_ESTIMATES}")
    cfg = dict(_ENERGY_DEFAULTS[estimate])
    cfg.update(config or {})
    table = {}
    m_ref = int(grid_levels[-1])
    n_ref = int(ns[0])
    for n in ns:
        table[f"n={n},m={m_ref}"] = _energy_constant(estimate, cfg, int(n), m_ref, seed, samples, grading)
    for m in grid_levels[:-1]:
        table[f"n={n_ref},m={m}"] = _energy_constant(estimate, cfg, n_ref, int(m), seed, samples, grading)
    for d in range(1, int(draws)):
        table[f"n={n_ref},m={m_ref},draw={d}"] = _energy_constant(estimate, cfg, n_ref, m_ref, seed + d,
                                                                 samples, grading)
    if estimate == "mild_l1":
        w0 = cfg["width"]
        for h in range(1, int(spike_halvings) + 1):
            c2 = dict(cfg, width=w0 / 2**h)
            table[f"n={n_ref},m={m_ref},width={w0 / 2**h:g}"] = _energy_constant(estimate, c2, n_ref, m_ref,
                                                                                seed, samples, grading)
    scaled = None
    if data_scale is not None:
        scaled = _energy_constant(estimate, dict(cfg, data_scale=float(data_scale)), n_ref, m_ref, seed,
                                  samples, grading)
    drift = relative_drift(table.values())
    finite = all(np.isfinite(v) for v in table.values())
    stable = drift <= threshold and finite
    details = {"config": {k: (list(map(str, v)) if isinstance(v, tuple) else v) for k, v in cfg.items()}}
    if scaled is not None:
        details["scaled_constant"] = scaled
        details["reference_constant"] = table[f"n={n_ref},m={m_ref}"]
    return CheckReport(
        name=f"energy_estimate_{estimate}",
        params={"estimate": estimate, "ns": list(ns), "levels": list(grid_levels), "seed": seed, "draws": draws},
        ratios=table,
        stable=stable,
        passed=bool(stable),
        samples=int(samples) + min(4, int(ns[0])),
        drift=drift,
        threshold=threshold,
        details=details,
    )


# ---------------------------------------------------------------------------
# criticality


CRITICAL_SCHEMES = ("picard", "mixed", "transference")


def _critical_setup(scheme, cfg):
    """Scale, operator, data and the envelope exponents ``(q_b, mu_b)`` for one scheme."""
    n = cfg["n"]
    scale, A = make_diagonal_heat(n)
    u0 = np.zeros(n)
    u0[0] = 1.0
    if scheme == "picard":
        return scale, A, u0, float(cfg["p"]), 0.0
    if scheme == "mixed":
        hx = holder_exponents(cfg["p3"], 0, *cfg["triple"][:2])
        return scale, A, u0, float(hx[0]), float(hx[1])
    if scheme == "transference":
        p = float(cfg["p"])
        return scale, A, u0, p / (p - 1.0), 0.0
    raise ParameterError(f"scheme must be one of {CRITICAL_SCHEMES}, got {scheme!r}")


def _critical_perturbation(scheme, scale, envelope, cfg):
    sign = cfg["sign"]
    if scheme == "picard":
        return make_perturbation(scale, "lower_order", envelope, q=cfg["p"], p=cfg["p"], sign=sign)
    if scheme == "mixed":
        return make_perturbation(scale, "mixed_scale", envelope, p=cfg["p3"], triple=cfg["triple"], sign=sign)
    return make_perturbation(scale, "trace_valued", envelope, p=cfg["p"], sign=sign)


def _critical_solve(scheme, A, B, u0, grid, cfg):
    if scheme == "picard":
        rep = picard_solve(A, B, None, u0, cfg["p"], 0.0, (cfg["C0"], cfg["M"]), grid=grid, compute_norms=False)
        return rep, mr_norm(rep.trajectory, cfg["p"]), _trace_norm(u0, A.scale, cfg["p"])
    if scheme == "mixed":
        rep = mixed_scale_solve(A, None, B, None, u0, cfg["p3"], 0.0, grid, C0=cfg["C0"], compute_norms=False)
        return rep, mr_norm(rep.trajectory, cfg["p3"]), _trace_norm(u0, A.scale, cfg["p3"])
    rep = transference_solve(A, B, None, u0, cfg["p"], grid, C0=cfg["C0"], compute_norms=False)
    return rep, ep_norm(rep.trajectory, cfg["p"]), _trace_norm(u0, A.scale, cfg["p"])


_CRITICAL_DEFAULTS = {"n": 4, "p": 2.0, "p3": 4, "triple": (Fraction(4, 3), Fraction(0), Fraction(1, 2)),
                      "c": 0.25, "sign": -1.0, "C0": 1.0, "M": 1.0, "T": 1.0, "m": 512, "grading": 3.0}


def criticality_experiment(scheme, alpha_offsets=(0.2, 0.1, 0.05, 0.025), config=None) -> CheckReport:
    """Envelopes ``c t**(-1/q_b + eps)`` approaching the critical exponent.

    At ``eps = 0`` the class check must reject the envelope before any
    solve.  For decreasing ``eps > 0`` the partition count and the ratio of
    solution norm to data norm must be nondecreasing; the perturbation has
    an anti-damping sign and the data are nonnegative, so the solution is
    pointwise increasing in the envelope.  A linear fit of ``log(ratio)``
    against ``||b||**q_b`` is reported as a diagnostic.
    """
    cfg = dict(_CRITICAL_DEFAULTS)
    cfg.update(config or {})
    scheme = str(scheme)
    scale, A, u0, q_b, mu_b = _critical_setup(scheme, cfg)
    T = float(cfg["T"])
    grid = TimeGrid.graded(T, int(cfg["m"]), float(cfg["grading"]))
    budget = 1.0 / (2.0 * cfg["C0"] * (cfg["M"] if scheme == "picard" else 1.0))

    critical = PowerEnvelope(cfg["c"], (1.0 + mu_b) / q_b)
    rejected = False
    message = ""
    try:
        partition_by_budget(critical, q_b, mu_b, T, budget)
    except EnvelopeClassError as exc:
        rejected = True
        message = str(exc)
    solve_rejected = False
    try:
        _critical_solve(scheme, A, _critical_perturbation(scheme, scale, critical, cfg), u0, grid, cfg)
    except EnvelopeClassError:
        solve_rejected = True

    offsets = sorted((float(e) for e in alpha_offsets), reverse=True)
    counts, ratios, bounds, bnorms, budget_counts = [], [], [], [], []
    for eps in offsets:
        env = PowerEnvelope(cfg["c"], (1.0 + mu_b) / q_b - eps)
        B = _critical_perturbation(scheme, scale, env, cfg)
        rep, lhs, rhs = _critical_solve(scheme, A, B, u0, grid, cfg)
        budget_counts.append(rep.budget_N)
        counts.append(rep.N)
        ratios.append(lhs / rhs)
        bounds.append(partition_count_bound(B.components, T, budget))
        bnorms.append(env.norm(q_b, mu_b, (0.0, T)))
    mono_n = all(b >= a for a, b in zip(budget_counts[:-1], budget_counts[1:]))
    mono_r = all(b >= a for a, b in zip(ratios[:-1], ratios[1:]))
    within = all(c <= bd for c, bd in zip(budget_counts, bounds))
    x = np.asarray(bnorms) ** q_b
    y = np.log(np.asarray(ratios))
    r2 = float("nan")
    if len(x) >= 3 and np.ptp(x) > 0:
        coef = np.polyfit(x, y, 1)
        resid = y - np.polyval(coef, x)
        ss = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    passed = rejected and solve_rejected and mono_n and mono_r and within
    return CheckReport(
        name=f"criticality_{scheme}",
        params={"scheme": scheme, "offsets": offsets, "q_b": q_b, "mu_b": mu_b,
                **{k: (list(map(str, v)) if isinstance(v, tuple) else v) for k, v in cfg.items()}},
        ratios={"ratio": ratios, "N": budget_counts, "N_snapped": counts, "bound": bounds, "b_norm": bnorms},
        stable=mono_n and mono_r,
        passed=bool(passed),
        samples=len(offsets),
        details={"critical_rejected": rejected, "solve_rejected": solve_rejected, "message": message,
                 "monotone_N": mono_n, "monotone_ratio": mono_r, "within_bound": within, "fit_r2": r2},
    )


# ---------------------------------------------------------------------------
# uniqueness


SCHEMES = ("picard", "picard_trace", "mixed", "transference")


def _random_config(scheme, seed, n=6, m=256):
    """Seeded random solvable configuration for one scheme."""
    rng = np.random.default_rng(seed)
    scale, A = make_diagonal_heat(n)
    grid = TimeGrid.graded(1.0, m, 3.0)
    u0 = rng.standard_normal(n) / np.arange(1, n + 1) ** 2
    c = float(rng.uniform(0.2, 1.0))
    fsrc = random_smooth_forcing(grid, n, rng, scale=scale)
    if scheme == "picard":
        B = make_perturbation(scale, "lower_order", PowerEnvelope(c, float(rng.uniform(0, 0.2))), q=4.0, p=2.0)
        f = make_inhomogeneity(scale, [(fsrc, (2.0, 0.0, 0.0))], 1.0)
        return dict(scheme=scheme, A=A, B=B, f=f, u0=u0, grid=grid, p=2.0, kappa=0.0)
    if scheme == "picard_trace":
        B = make_perturbation(scale, "lower_order", PowerEnvelope(c, float(rng.uniform(0, 0.4))), q=2.0, p=2.0)
        f = make_inhomogeneity(scale, [(fsrc, (2.0, 0.0, 0.0))], 1.0)
        return dict(scheme=scheme, A=A, B=B, f=f, u0=u0, grid=grid, p=2.0, kappa=0.0)
    if scheme == "mixed":
        triple = (Fraction(4, 3), Fraction(0), Fraction(1, 2))
        prof = random_step_profile(4, 0.5, 2.0, 1.0, rng)
        An = make_nonautonomous(A, prof)
        B = make_perturbation(scale, "mixed_scale", PowerEnvelope(c, float(rng.uniform(0, 0.45))), p=4, triple=triple)
        g = SeparableSource(PowerEnvelope(1.0, 0.25), rng.standard_normal(n) / np.arange(1, n + 1) ** 2, 1.0, scale)
        f = make_inhomogeneity(scale, [(fsrc, (4.0, 0.0, 0.0)), (g, (4 / 3, 0.0, 0.5))], 1.0, p=4, kappa=0.0)
        return dict(scheme=scheme, A=An, B=B, f=f, u0=u0, grid=grid, p=4.0, kappa=0.0, A_aux="average")
    if scheme == "transference":
        B = make_perturbation(scale, "trace_valued", PowerEnvelope(c, float(rng.uniform(0, 0.45))), p=2.0)
        g = SeparableSource(PowerEnvelope(1.0, 0.9), rng.standard_normal(n), 1.0, scale)
        f = make_inhomogeneity(scale, [(g, (1.0, 0.0, trace_level(2.0))), (fsrc, (2.0, 0.0, 0.0))], 1.0)
        return dict(scheme=scheme, A=A, B=B, f=f, u0=u0, grid=grid, p=2.0, kappa=0.0)
    raise ParameterError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def _scheme_solve(cfg, tol, initial_guess=None, f=None):
    f = cfg["f"] if f is None else f
    common = dict(tol=tol, initial_guess=initial_guess, compute_norms=False, C0=1.0)
    if cfg["scheme"] in ("picard", "picard_trace"):
        common.pop("C0")
        return picard_solve(cfg["A"], cfg["B"], f, cfg["u0"], cfg["p"], cfg["kappa"], (1.0, 1.0),
                            grid=cfg["grid"], **common)
    if cfg["scheme"] == "mixed":
        return mixed_scale_solve(cfg["A"], cfg.get("A_aux"), cfg["B"], f, cfg["u0"], cfg["p"], cfg["kappa"],
                                 cfg["grid"], **common)
    return transference_solve(cfg["A"], cfg["B"], f, cfg["u0"], cfg["p"], cfg["grid"], **common)


def _shifted_decomposition(cfg):
    """The same total ``f`` with its mass moved between slots (or split in two copies)."""
    f = cfg["f"]
    comps = list(f.components)
    scale = f.scale
    if cfg["scheme"] == "mixed":
        base, rung = comps[0], comps[1]
        half = base.source * 0.5
        return make_inhomogeneity(scale, [(half, (4.0, 0.0, 0.0)), (half, (4 / 3, 0.0, 0.5)),
                                          (rung.source, (4 / 3, 0.0, 0.5))], f.T, p=4, kappa=0.0)
    if cfg["scheme"] == "transference":
        g, h = comps[0], comps[1]
        half = h.source * 0.5
        return make_inhomogeneity(scale, [(g.source, (1.0, 0.0, g.level)), (half, (2.0, 0.0, 0.0)),
                                          (half, (1.0, 0.0, g.level))], f.T)
    half = comps[0].source * 0.5
    return make_inhomogeneity(scale, [(half, (comps[0].p, 0.0, 0.0)), (half, (comps[0].p, 0.0, 0.0))], f.T)


def uniqueness_crosscheck(scheme, seed=0, config=None, tol=DEFAULT_TOL, factor=10.0) -> CheckReport:
    """Oracle, scheme, and scheme from a random initial iterate must coincide.

    Distances are relative ``L^p(w_kappa; X_1)`` norms on the common grid.
    The scheme is also rerun with the right-hand side split differently
    across decomposition slots.
    """
    cfg = _random_config(str(scheme), seed) if config is None else config
    p, kappa = cfg["p"], cfg["kappa"]
    oracle = oracle_solve(cfg["A"], cfg["B"], cfg["f"], cfg["u0"], cfg["grid"])
    plain = _scheme_solve(cfg, tol).trajectory
    guessed = _scheme_solve(cfg, tol, initial_guess=seed + 1).trajectory
    shifted = _scheme_solve(cfg, tol, f=_shifted_decomposition(cfg)).trajectory
    ref = max(weighted_lp_norm(oracle, p, kappa, 1.0), 1e-300)

    def dist(a, b):
        return weighted_lp_norm(a - b, p, kappa, 1.0) / ref

    d = {"oracle_scheme": dist(oracle, plain), "oracle_guess": dist(oracle, guessed),
         "scheme_guess": dist(plain, guessed), "scheme_shifted": dist(plain, shifted)}
    limit = factor * tol
    passed = all(v <= limit for v in d.values())
    return CheckReport(
        name=f"uniqueness_{cfg['scheme']}",
        params={"scheme": cfg["scheme"], "seed": seed, "tol": tol},
        ratios=d,
        stable=True,
        passed=bool(passed),
        samples=4,
        threshold=limit,
    )
