"""Acceptance suite: one test group per criterion, summarized by ``conftest.py``.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary prints
one pass/fail line per criterion together with the measured worst cases.
"""

import subprocess
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from mrpert import admissibility as adm
from mrpert.problems import (
    ConstantEnvelope,
    Perturbation,
    PerturbationComponent,
    PowerEnvelope,
    SeparableSource,
    make_diagonal,
    make_inhomogeneity,
)
from mrpert import ContractionError
from mrpert.solver import (
    mixed_scale_solve,
    oracle_solve,
    partition_by_budget,
    picard_solve,
    transference_solve,
)
from mrpert.spaces import TimeGrid, weighted_lp_norm
from mrpert.verify import (
    CRITICAL_SCHEMES,
    ENERGY_ESTIMATES,
    SCHEMES,
    _random_config,
    _scheme_solve,
    check_energy_estimates,
    check_key_perturbation_estimate,
    check_mixed_embedding,
    check_trace_embedding,
    criticality_experiment,
    uniqueness_crosscheck,
)

import oracles

ROOT = Path(__file__).resolve().parents[1]
SEEDS = range(20)
TOL = 1e-10


# ---------------------------------------------------------------------------
# 1. admissibility agrees with feasibility


def _random_tuple(rng, max_den):
    p = oracles.random_rational(rng, 1.05, 6.0, max_den)
    if p <= 1:
        p = Fraction(max_den + 1, max_den)
    kappa = oracles.random_rational(rng, 0.0, float(p - 1), max_den)
    if kappa >= p - 1:
        kappa = Fraction(0)
    r = oracles.random_rational(rng, 1.0, 6.0, max_den)
    nu = oracles.random_rational(rng, 0.0, 3.0, max_den)
    gamma = oracles.random_rational(rng, 0.0, 1.0, max_den)
    return p, kappa, r, nu, gamma


def test_criterion_01_feasibility_matches_criterion(note):
    rng = np.random.default_rng(2024)
    tuples = [_random_tuple(rng, 24) for _ in range(10_000)]
    start = time.perf_counter()
    results = [adm.embedding_feasibility(*t) for t in tuples]
    criteria = [adm.embedding_criterion(*t) for t in tuples]
    verdicts = [adm.is_admissible(t[0], t[1], 1, t[2], t[3], t[4]) for t in tuples]
    elapsed = time.perf_counter() - start
    mismatch, domain, feasible = 0, 0, 0
    for t, res, crit, ver in zip(tuples, results, criteria, verdicts):
        ok = isinstance(res, adm.FeasibilityWitness)
        feasible += ok
        if ok == bool(crit):
            mismatch += 1
        if ok and adm.check_witness(*t, res):
            mismatch += 1
        if not ok and tuple(res.failed) != tuple(crit):
            mismatch += 1
        p, kappa, r, nu, gamma = t
        if 0 < gamma < 1 and nu >= 0 and nu + 1 < r:
            domain += 1
            if ok != ver.admissible:
                mismatch += 1
    note(f"{len(tuples)} tuples, {feasible} feasible, {domain} in domain, {mismatch} mismatches, {elapsed:.2f} s")
    assert feasible > 500 and domain > 500
    assert mismatch == 0
    assert elapsed < 10.0


def test_criterion_01_feasibility_matches_lattice_search(note):
    rng = np.random.default_rng(7)
    mismatch = 0
    count = 2000
    for _ in range(count):
        t = _random_tuple(rng, 8)
        brute = oracles.lattice_feasible(*t) is not None
        pkg = isinstance(adm.embedding_feasibility(*t), adm.FeasibilityWitness)
        mismatch += brute != pkg
    note(f"lattice search: {mismatch}/{count} mismatches")
    assert mismatch == 0


# ---------------------------------------------------------------------------
# 2. envelope exponent regression


def test_criterion_02_holder_exponents_exact():
    assert adm.holder_exponents(4, 0, Fraction(4, 3), 0) == (2, 0)
    q, mu = adm.holder_exponents(4, 0, Fraction(4, 3), 0)
    assert isinstance(q, Fraction) and isinstance(mu, Fraction)
    assert adm.generalized_b_params(4, 0, Fraction(4, 3), 0, Fraction(7, 8)) == (Fraction(1, 2), Fraction(8, 5), 0)


@pytest.mark.parametrize("seed", range(5))
def test_criterion_02_generalized_params_reduce(seed):
    rng = np.random.default_rng(seed)
    checked = 0
    while checked < 200:
        p, kappa, r, nu, _ = _random_tuple(rng, 24)
        if r >= p:
            continue
        q, mu = adm.holder_exponents(p, kappa, r, nu)
        assert adm.generalized_b_params(p, kappa, r, nu, 1) == (1, q, mu)
        low = 1 - (1 + kappa) / p
        assert adm.generalized_b_params(p, kappa, r, nu, low) == (0, r, nu)
        checked += 1


# ---------------------------------------------------------------------------
# 3. and 4. agreement with the reference solver, partition bound


def _relative_distance(cfg, traj):
    ref = oracle_solve(cfg["A"], cfg["B"], cfg["f"], cfg["u0"], cfg["grid"])
    p, kappa = cfg["p"], cfg["kappa"]
    return weighted_lp_norm(traj - ref, p, kappa, 1.0) / weighted_lp_norm(ref, p, kappa, 1.0)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_criterion_03_schemes_match_reference(scheme, note):
    worst = 0.0
    for seed in SEEDS:
        cfg = _random_config(scheme, seed)
        if scheme == "mixed":
            assert not cfg["A"].autonomous and cfg["A_aux"] == "average"
        rep = _scheme_solve(cfg, TOL)
        worst = max(worst, _relative_distance(cfg, rep.trajectory))
    note(f"{scheme}: max rel. distance {worst:.1e}")
    assert worst <= 1e-4


def _scalar_cases():
    scale, A = make_diagonal([1.0])
    one = np.ones(1)

    def pert(env):
        comp = PerturbationComponent(np.eye(1), env, "scalar", 1.0, 0.0, 2.0)
        return Perturbation(scale, (comp,))

    ones = make_inhomogeneity(scale, [(SeparableSource(ConstantEnvelope(1.0), one, 1.0, scale), (2.0, 0.0, 0.0))])
    return A, {
        "decay": (None, None, one, oracles.scalar_decay),
        "growth": (None, ones, np.zeros(1), oracles.scalar_growth),
        "singular": (pert(PowerEnvelope(1.0, 0.25)), None, one, oracles.scalar_singular),
        "double": (pert(ConstantEnvelope(1.0)), None, one, oracles.scalar_double),
    }


_SCALAR_RUNS = [("decay", s) for s in ("oracle", "picard", "mixed", "transference")] + [
    ("growth", s) for s in ("oracle", "picard", "mixed", "transference")
] + [("singular", "oracle"), ("singular", "picard"), ("double", "oracle"), ("double", "picard"),
     ("double", "transference")]


@pytest.mark.parametrize("case,scheme", _SCALAR_RUNS)
def test_criterion_03_scalar_closed_forms(case, scheme, note):
    A, cases = _scalar_cases()
    B, f, u0, exact = cases[case]
    grid = TimeGrid.graded(1.0, 2048, 3.0)
    if scheme == "oracle":
        u = oracle_solve(A, B, f, u0, grid)
    elif scheme == "picard":
        u = picard_solve(A, B, f, u0, 2.0, 0.0, (1.0, 1.0), grid=grid).trajectory
    elif scheme == "mixed":
        u = mixed_scale_solve(A, None, B, f, u0, 2.0, 0.0, grid, C0=1.0).trajectory
    else:
        u = transference_solve(A, B, f, u0, 2.0, grid, C0=1.0).trajectory
    err = float(np.max(np.abs(u.values[:, 0] - exact(grid.nodes))))
    if case == "double" and scheme == "transference":
        note(f"e^(-2t) by transference: max error {err:.1e}")
    assert err <= 1e-4


@pytest.mark.parametrize("scheme", SCHEMES)
def test_criterion_04_partition_count_within_bound(scheme, note):
    worst = 0.0
    for seed in SEEDS:
        rep = _scheme_solve(_random_config(scheme, seed), TOL)
        bound = rep.constants["partition_bound"]
        assert rep.budget_N <= bound
        worst = max(worst, rep.budget_N / bound)
    note(f"{scheme}: max N/bound {worst:.2f}")


def test_criterion_04_constant_envelope_count(note):
    taus = partition_by_budget(ConstantEnvelope(1.0), 2.0, 0.0, 1.0, 0.25)
    note(f"b=1, q=2, budget 1/4: N={len(taus) - 1}")
    assert len(taus) - 1 == 16
    np.testing.assert_allclose(np.diff(taus), 1 / 16, rtol=1e-9)


# ---------------------------------------------------------------------------
# 5. contraction and geometric decay


def _stressed_solve(scheme, seed, factor, C0):
    cfg = _random_config(scheme, seed)
    B = cfg["B"].scaled(factor)
    common = dict(compute_norms=False, tol=TOL)
    if scheme in ("picard", "picard_trace"):
        return picard_solve(cfg["A"], B, cfg["f"], cfg["u0"], cfg["p"], 0.0, (C0, 1.0), grid=cfg["grid"], **common)
    if scheme == "mixed":
        return mixed_scale_solve(cfg["A"], cfg["A_aux"], B, cfg["f"], cfg["u0"], cfg["p"], 0.0, cfg["grid"], C0=C0,
                                 **common)
    return transference_solve(cfg["A"], B, cfg["f"], cfg["u0"], cfg["p"], cfg["grid"], C0=C0, **common)


def _worst_decay(rep):
    worst = 0.0
    for d in rep.distances:
        for prev, cur in zip(d[1:-1], d[2:]):
            if prev > 0:
                worst = max(worst, cur / prev)
    return worst


@pytest.mark.parametrize("scheme", SCHEMES)
def test_criterion_05_contraction_and_decay(scheme, note):
    factors, decays, bisected, rejected = [], [], 0, 0
    runs = [(seed, 1.0, 1.0) for seed in SEEDS] + [(seed, f, 0.05) for seed in range(4) for f in (1.0, 2.0)]
    for seed, factor, C0 in runs:
        try:
            rep = _stressed_solve(scheme, seed, factor, C0)
        except ContractionError:
            rejected += 1
            continue
        factors.append(max(rep.contraction_factors))
        decays.append(_worst_decay(rep))
        bisected += rep.N > rep.budget_N
    note(f"{scheme}: max factor {max(factors):.2f}, max decay ratio {max(decays):.2f}, "
         f"{bisected} bisected, {rejected} rejected")
    assert max(factors) <= 0.75
    assert max(decays) <= 0.8


# ---------------------------------------------------------------------------
# 6. embedding stability


_EMBEDDINGS = {
    "trace p=2": lambda: check_trace_embedding(2, 0),
    "trace p=4 kappa=1": lambda: check_trace_embedding(4, 1),
    "key estimate p=2 q=4": lambda: check_key_perturbation_estimate(2, 0, 4),
    "mixed (4/3,0,1/2)": lambda: check_mixed_embedding(4, 0, (Fraction(4, 3), 0, Fraction(1, 2))),
}


@pytest.mark.parametrize("name", list(_EMBEDDINGS))
def test_criterion_06_embedding_stability(name, note):
    rep = _EMBEDDINGS[name]()
    note(f"{name}: drift {rep.drift:.3f}")
    assert rep.drift <= 0.1
    assert rep.stable
    if "blowup_ratios" in rep.details:
        hz = rep.details["blowup_horizons"]
        ratios = rep.details["blowup_ratios"]
        assert all(a > b for a, b in zip(hz, hz[1:]))
        assert all(b > a for a, b in zip(ratios, ratios[1:]))
        note(f"blow-up ratios {', '.join(f'{r:.2f}' for r in ratios)}")
    assert rep.passed


# ---------------------------------------------------------------------------
# 7. energy estimates


@pytest.mark.parametrize("estimate", ENERGY_ESTIMATES)
def test_criterion_07_energy_stability(estimate, note):
    rep = check_energy_estimates(estimate)
    keys = list(rep.ratios)
    assert any("n=128" in k for k in keys) and any("m=128" in k for k in keys)
    if estimate == "mild_l1":
        assert sum("width=" in k for k in keys) == 4
    note(f"{estimate}: drift {rep.drift:.3f}")
    assert rep.drift <= 0.15
    assert rep.passed


# ---------------------------------------------------------------------------
# 8. criticality


@pytest.mark.parametrize("scheme", CRITICAL_SCHEMES)
def test_criterion_08_criticality(scheme, note):
    rep = criticality_experiment(scheme)
    d = rep.details
    assert d["critical_rejected"] and d["solve_rejected"]
    assert "supercritical" in d["message"]
    counts, ratios = rep.ratios["N"], rep.ratios["ratio"]
    assert all(b >= a for a, b in zip(counts, counts[1:]))
    assert all(b >= a for a, b in zip(ratios, ratios[1:]))
    assert d["within_bound"]
    note(f"{scheme}: N {counts}")
    assert rep.passed


# ---------------------------------------------------------------------------
# 9. CLI determinism and exit status


def _cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "mrpert", *map(str, args)], cwd=cwd, capture_output=True,
                          text=True, timeout=600)


def _read_outputs(folder):
    return {p.name: p.read_bytes() for p in sorted(Path(folder).iterdir())}


def test_criterion_09_reports_byte_identical(tmp_path, note):
    cfg = ROOT / "configs" / "demo.toml"
    first = _cli("run", cfg, "--out", tmp_path / "a", cwd=tmp_path)
    second = _cli("run", cfg, "--out", tmp_path / "b", "--jobs", "2", cwd=tmp_path)
    assert first.returncode == 0, first.stdout + first.stderr
    assert second.returncode == 0, second.stdout + second.stderr
    a, b = _read_outputs(tmp_path / "a"), _read_outputs(tmp_path / "b")
    assert a == b
    note(f"demo: {len(a)} files identical across runs")


def test_criterion_09_exit_status(tmp_path, note):
    failing = tmp_path / "failing.toml"
    failing.write_text((ROOT / "configs" / "minimal.toml").read_text() + "solve.agreement = 0.0\n"
                       'perturbation.kind = "lower_order"\nperturbation.c = 0.5\nperturbation.q = 4.0\n')
    ok = _cli("run", ROOT / "configs" / "minimal.toml", "--out", tmp_path / "ok", cwd=tmp_path)
    bad = _cli("run", failing, "--out", tmp_path / "bad", cwd=tmp_path)
    invalid = _cli("run", ROOT / "configs" / "inadmissible.toml", "--out", tmp_path / "inv", cwd=tmp_path)
    note(f"exit codes {ok.returncode}/{bad.returncode}/{invalid.returncode}")
    assert ok.returncode == 0
    assert bad.returncode == 1 and "FAIL" in bad.stdout
    assert invalid.returncode == 2 and "ν+1 < r" in invalid.stderr


# ---------------------------------------------------------------------------
# 10. uniqueness and decomposition invariance


@pytest.mark.parametrize("scheme", SCHEMES)
def test_criterion_10_uniqueness(scheme, note):
    worst, worst_shift = 0.0, 0.0
    for seed in SEEDS:
        rep = uniqueness_crosscheck(scheme, seed, tol=TOL)
        assert rep.passed, rep.ratios
        worst = max(worst, max(rep.ratios.values()))
        worst_shift = max(worst_shift, rep.ratios["scheme_shifted"])
    note(f"{scheme}: max distance {worst:.1e}, slot shift {worst_shift:.1e}")
    assert worst_shift <= 10 * TOL
