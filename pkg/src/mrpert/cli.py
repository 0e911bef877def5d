"""Command-line experiment runner.

``python -m mrpert run CONFIG`` executes the jobs listed in a TOML config
and writes one JSON report per job plus a CSV of flattened metrics.
``python -m mrpert sweep CONFIG --axis n --values 16,32,64`` reruns the
config for each value and aggregates everything into one CSV.

Exit status: 0 when every job passes, 1 when a job fails or raises, 2 when
the config does not validate.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import verify
from ._validation import ParameterError
from .admissibility import Infeasible, as_fraction, embedding_feasibility, is_admissible
from .problems import (
    PowerEnvelope,
    SeparableSource,
    make_diagonal,
    make_diagonal_heat,
    make_geometric,
    make_inhomogeneity,
    make_jordan_example,
    make_nonautonomous,
    make_perturbation,
    random_smooth_forcing,
    random_step_profile,
)
from .solver import DEFAULT_TOL, mixed_scale_solve, oracle_solve, picard_solve, transference_solve
from .spaces import TimeGrid, trace_level, weighted_lp_norm

__all__ = ["ConfigError", "load_config", "validate_config", "build_problem", "run_job", "run_config",
           "sweep_config", "main", "JOBS", "SWEEP_AXES"]

JOBS = ("solve", "admissibility", "trace_embedding", "key_estimate", "weighted_holder", "mixed_embedding",
        "energy", "criticality", "uniqueness")
MODELS = ("heat", "geometric", "scalar", "jordan")
KINDS = ("none", "lower_order", "mixed_scale", "trace_valued")
SCHEME_NAMES = ("oracle", "picard", "mixed", "transference")
SWEEP_AXES = {
    "n": "problem.n",
    "T": "problem.T",
    "m": "grid.m",
    "grading": "grid.grading",
    "samples": "check.samples",
    "eps": "check.offsets",
    "p": "exponents.p",
    "kappa": "exponents.kappa",
    "c": "perturbation.c",
    "alpha": "perturbation.alpha",
}

DEFAULTS = {
    "seed": 0,
    "tol": DEFAULT_TOL,
    "jobs": ["solve"],
    "problem": {"model": "heat", "n": 8, "T": 1.0, "profile": "constant", "profile_pieces": 4,
                "profile_low": 0.5, "profile_high": 2.0, "u0": "first", "lam_max": 1e4},
    "grid": {"m": 256, "grading": 3.0},
    "exponents": {"p": 2.0, "kappa": 0.0},
    "perturbation": {"kind": "none", "c": 0.5, "alpha": 0.0, "sign": 1.0},
    "forcing": {"kind": "none", "amplitude": 1.0, "alpha": 0.0},
    "solve": {"scheme": "oracle", "compare_oracle": True, "agreement": 1e-4, "A_aux": "restriction"},
    "check": {"samples": 4, "levels": [256, 512, 1024], "horizons": [0.25, 1.0, 4.0],
              "ns": [16, 32, 64, 128], "energy_levels": [128, 256, 512], "offsets": [0.2, 0.1, 0.05, 0.025],
              "seeds": 3},
}


class ConfigError(ValueError):
    """Raised when a config does not parse or fails validation."""


# ---------------------------------------------------------------------------
# config handling


def _merge(base, extra):
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path) -> dict:
    """Parse a TOML config and fill defaults."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return _merge(DEFAULTS, raw)


def _rat(x) -> Fraction:
    """Rational from a number or a string such as ``"4/3"``."""
    if isinstance(x, float):
        return as_fraction(x).limit_denominator(10**6)
    return as_fraction(str(x).strip() if isinstance(x, str) else x)


def _triple(value):
    if value is None:
        return None
    parts = value.split(",") if isinstance(value, str) else list(value)
    if len(parts) != 3:
        raise ConfigError(f"a triple needs three entries (r, nu, gamma), got {value!r}")
    return tuple(_rat(v) for v in parts)


def _level(value, p):
    if isinstance(value, str) and value.strip() == "trace":
        return trace_level(float(p))
    return float(_rat(value))


def validate_config(cfg: dict) -> dict:
    """Check names and ranges; admissibility failures name the violated clauses."""
    for job in cfg["jobs"]:
        if job not in JOBS:
            raise ConfigError(f"unknown job {job!r}; expected one of {JOBS}")
    prob, pert, force = cfg["problem"], cfg["perturbation"], cfg["forcing"]
    if prob["model"] not in MODELS:
        raise ConfigError(f"unknown model {prob['model']!r}; expected one of {MODELS}")
    if int(prob["n"]) < 1:
        raise ConfigError("problem.n must be at least 1")
    if not float(prob["T"]) > 0:
        raise ConfigError("problem.T must be positive")
    if int(cfg["grid"]["m"]) < 2:
        raise ConfigError("grid.m must be at least 2")
    if pert["kind"] not in KINDS:
        raise ConfigError(f"unknown perturbation kind {pert['kind']!r}; expected one of {KINDS}")
    if cfg["solve"]["scheme"] not in SCHEME_NAMES:
        raise ConfigError(f"unknown scheme {cfg['solve']['scheme']!r}; expected one of {SCHEME_NAMES}")
    p, kappa = _rat(cfg["exponents"]["p"]), _rat(cfg["exponents"]["kappa"])
    if p <= 1:
        raise ConfigError("exponents.p must exceed 1")
    gamma_star = Fraction(1)
    for label, value in (("perturbation.triple", pert.get("triple")), ("forcing.slot", _slot_triple(force))):
        tr = _triple(value)
        if tr is None:
            continue
        verdict = is_admissible(p, kappa, gamma_star, *tr)
        if not verdict.admissible:
            raise ConfigError(f"{label} {tuple(map(str, tr))} is not ({p}, {kappa})-admissible; "
                              f"failed clauses: {', '.join(verdict.failed)}")
    if pert["kind"] == "mixed_scale" and pert.get("triple") is None:
        raise ConfigError("perturbation.triple is required for kind 'mixed_scale'")
    if pert["kind"] == "lower_order" and pert.get("q") is None:
        raise ConfigError("perturbation.q is required for kind 'lower_order'")
    return cfg


def _slot_triple(force):
    """The forcing slot as a triple when it lives on an intermediate level."""
    if force.get("kind", "none") == "none" or "level" not in force:
        return None
    level = force["level"]
    if isinstance(level, str) and level.strip() == "trace":
        return None
    if float(_rat(level)) == 0.0:
        return None
    return (force.get("p"), force.get("kappa", 0), level)


# ---------------------------------------------------------------------------
# problem construction


def build_problem(cfg: dict) -> dict:
    """Operator, perturbation, forcing, initial value and grid described by a config."""
    prob, pert, force = cfg["problem"], cfg["perturbation"], cfg["forcing"]
    rng = np.random.default_rng(int(cfg["seed"]))
    n, T = int(prob["n"]), float(prob["T"])
    model = prob["model"]
    if model == "heat":
        scale, A = make_diagonal_heat(n)
    elif model == "geometric":
        scale, A = make_geometric(n, 1.0, float(prob["lam_max"]))
    elif model == "scalar":
        scale, A = make_diagonal(np.ones(n))
    else:
        scale, A = make_jordan_example(n)
    if prob["profile"] == "steps":
        prof = random_step_profile(int(prob["profile_pieces"]), float(prob["profile_low"]),
                                   float(prob["profile_high"]), T, rng)
        A = make_nonautonomous(A, prof)
    elif prob["profile"] != "constant":
        raise ConfigError(f"unknown profile {prob['profile']!r}")
    grid = TimeGrid.graded(T, int(cfg["grid"]["m"]), float(cfg["grid"]["grading"]))
    p, kappa = float(_rat(cfg["exponents"]["p"])), float(_rat(cfg["exponents"]["kappa"]))

    kind = pert["kind"]
    B = None
    if kind != "none":
        env = PowerEnvelope(float(pert["c"]), float(_rat(pert["alpha"])))
        sign = float(pert["sign"])
        if kind == "lower_order":
            B = make_perturbation(scale, kind, env, q=float(_rat(pert["q"])), p=p, sign=sign)
        elif kind == "mixed_scale":
            B = make_perturbation(scale, kind, env, p=p, kappa=kappa, triple=_triple(pert["triple"]), sign=sign)
        else:
            B = make_perturbation(scale, kind, env, p=p, sign=sign)

    u0 = np.zeros(n)
    if prob["u0"] == "first":
        u0[0] = 1.0
    elif prob["u0"] == "decaying":
        u0 = rng.standard_normal(n) / np.arange(1, n + 1) ** 2
    elif prob["u0"] != "zero":
        raise ConfigError(f"unknown u0 choice {prob['u0']!r}")

    f = None
    fkind = force["kind"]
    if fkind != "none":
        amp = float(force["amplitude"])
        if fkind == "power":
            vec = amp * np.ones(n) / np.arange(1, n + 1) ** 2
            src = SeparableSource(PowerEnvelope(1.0, float(_rat(force["alpha"]))), vec, T, scale)
        elif fkind == "smooth":
            g = random_smooth_forcing(grid, n, rng, scale=scale)
            src = type(g)(grid, amp * g.values, 0.0, scale)
        else:
            raise ConfigError(f"unknown forcing kind {fkind!r}")
        fp = float(_rat(force.get("p", p)))
        fw = float(_rat(force.get("kappa", kappa)))
        level = _level(force.get("level", 0.0), p)
        check_p = p if kind == "mixed_scale" or cfg["solve"]["scheme"] == "mixed" else None
        f = make_inhomogeneity(scale, [(src, (fp, fw, level))], T, p=check_p, kappa=kappa)
    return {"scale": scale, "A": A, "B": B, "f": f, "u0": u0, "grid": grid, "p": p, "kappa": kappa}


# ---------------------------------------------------------------------------
# jobs


def _solve_job(cfg):
    pb = build_problem(cfg)
    sv = cfg["solve"]
    scheme, tol = sv["scheme"], float(cfg["tol"])
    A, B, f, u0, grid, p, kappa = (pb[k] for k in ("A", "B", "f", "u0", "grid", "p", "kappa"))
    extra = {k: float(sv[k]) for k in ("C0",) if k in sv}
    oracle = oracle_solve(A, B, f, u0, grid)
    if scheme == "oracle":
        traj, rep = oracle, None
    elif scheme == "picard":
        rep = picard_solve(A, B, f, u0, p, kappa, (sv.get("C0"), sv.get("M")), tol=tol, grid=grid)
    elif scheme == "mixed":
        rep = mixed_scale_solve(A, sv["A_aux"], B, f, u0, p, kappa, grid, tol=tol, **extra)
    else:
        rep = transference_solve(A, B, f, u0, p, grid, tol=tol, **extra)
    ratios = {}
    passed = True
    if rep is not None:
        traj = rep.trajectory
        ratios.update({"N": rep.N, "budget_N": rep.budget_N, "iterations": sum(rep.iterations),
                       "max_contraction": max(rep.contraction_factors, default=0.0), "residual": rep.residual})
        ratios.update({f"norm_{k}": v for k, v in rep.norms.items()})
        ratios.update({f"const_{k}": v for k, v in rep.constants.items()})
        passed = rep.residual <= tol and ratios["max_contraction"] <= 0.75
    ref = weighted_lp_norm(oracle, p, kappa, 1.0)
    ratios["solution_norm"] = ref
    if sv["compare_oracle"] and rep is not None:
        dist = weighted_lp_norm(traj - oracle, p, kappa, 1.0) / max(ref, 1e-300)
        ratios["oracle_distance"] = dist
        passed = passed and dist <= float(sv["agreement"])
    return {"params": {"scheme": scheme, "tol": tol}, "ratios": ratios, "pass": bool(passed)}


def _check_job(cfg, job):
    ch, ex = cfg["check"], cfg["exponents"]
    seed = int(cfg["seed"])
    p, kappa = _rat(ex["p"]), _rat(ex["kappa"])
    samples = int(ch["samples"])
    levels = tuple(int(v) for v in ch["levels"])
    horizons = tuple(float(v) for v in ch["horizons"])
    if job == "trace_embedding":
        rep = verify.check_trace_embedding(float(p), float(kappa), grid_levels=levels, horizons=horizons,
                                           samples=samples, seed=seed)
    elif job == "key_estimate":
        q = float(_rat(ch.get("q", cfg["perturbation"].get("q", 4))))
        rep = verify.check_key_perturbation_estimate(float(p), float(kappa), q, grid_levels=levels,
                                                     horizons=horizons, samples=samples, seed=seed)
    elif job == "weighted_holder":
        rep = verify.check_weighted_holder(p, _rat(ch["q"]), _rat(ch["r"]), kappa, _rat(ch.get("nu", 0)),
                                           samples=samples, seed=seed)
    elif job == "mixed_embedding":
        triple = _triple(ch.get("triple", cfg["perturbation"].get("triple")))
        rep = verify.check_mixed_embedding(p, kappa, triple, grid_levels=levels, horizons=horizons,
                                           samples=samples, seed=seed)
    elif job == "energy":
        overrides = {k: v for k, v in ch.get("energy", {}).items()}
        if "triple" in overrides:
            overrides["triple"] = _triple(overrides["triple"])
        rep = verify.check_energy_estimates(ch.get("estimate", "mixed"), overrides or None, samples=samples,
                                            seed=seed, ns=tuple(int(v) for v in ch["ns"]),
                                            grid_levels=tuple(int(v) for v in ch["energy_levels"]),
                                            grading=float(cfg["grid"]["grading"]))
    elif job == "criticality":
        offsets = ch["offsets"]
        offsets = [offsets] if isinstance(offsets, (int, float)) else offsets
        rep = verify.criticality_experiment(ch.get("scheme", "picard"), tuple(float(e) for e in offsets),
                                            ch.get("criticality"))
    elif job == "uniqueness":
        reps = [verify.uniqueness_crosscheck(ch.get("scheme", "picard"), seed + k, tol=float(cfg["tol"]))
                for k in range(int(ch["seeds"]))]
        worst = {key: max(r.ratios[key] for r in reps) for key in reps[0].ratios}
        return {"params": {"scheme": ch.get("scheme", "picard"), "seeds": int(ch["seeds"]),
                           "tol": float(cfg["tol"])},
                "ratios": worst, "pass": all(r.passed for r in reps)}
    else:
        raise ConfigError(f"unknown job {job!r}")
    out = rep.to_dict()
    ratios = dict(out["ratios"])
    ratios["drift"] = out["drift"]
    for key, val in out["details"].items():
        if isinstance(val, (int, float, bool)):
            ratios[key] = val
    return {"params": out["params"], "ratios": ratios, "pass": bool(out["passed"])}


def _admissibility_job(cfg):
    ex = cfg["exponents"]
    tr = _triple(cfg["perturbation"].get("triple") or cfg["check"].get("triple"))
    if tr is None:
        raise ConfigError("the admissibility job needs perturbation.triple or check.triple")
    p, kappa = _rat(ex["p"]), _rat(ex["kappa"])
    verdict = is_admissible(p, kappa, 1, *tr)
    witness = embedding_feasibility(p, kappa, *tr)
    feasible = not isinstance(witness, Infeasible)
    return {"params": {"p": str(p), "kappa": str(kappa), "triple": [str(v) for v in tr]},
            "ratios": {"admissible": verdict.admissible, "feasible": feasible},
            "pass": bool(verdict.admissible == feasible)}


def run_job(cfg: dict, job: str) -> dict:
    """Run one job; exceptions become a failed report carrying the error text."""
    try:
        if job == "solve":
            res = _solve_job(cfg)
        elif job == "admissibility":
            res = _admissibility_job(cfg)
        else:
            res = _check_job(cfg, job)
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        res = {"params": {}, "ratios": {}, "pass": False, "error": f"{type(exc).__name__}: {exc}"}
    res["job"] = job
    res["seed"] = int(cfg["seed"])
    return _clean(res)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    obj = verify._jsonable(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def dumps_report(report: dict) -> str:
    """Deterministic JSON: sorted keys, shortest round-trip floats."""
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _flatten(prefix, obj, out):
    if isinstance(obj, dict):
        for key in sorted(obj):
            _flatten(f"{prefix}.{key}" if prefix else str(key), obj[key], out)
    elif isinstance(obj, list):
        for i, val in enumerate(obj):
            _flatten(f"{prefix}[{i}]", val, out)
    else:
        out[prefix] = obj
    return out


def _run_jobs(cfg, jobs):
    names = list(cfg["jobs"])
    if jobs and jobs > 1 and len(names) > 1:
        with ProcessPoolExecutor(max_workers=int(jobs)) as pool:
            return list(pool.map(run_job, [cfg] * len(names), names))
    return [run_job(cfg, name) for name in names]


def run_config(cfg: dict, out_dir, jobs=1):
    """Run every job, write reports and the metric CSV; return the reports."""
    validate_config(cfg)
    reports = _run_jobs(cfg, jobs)
    os.makedirs(out_dir, exist_ok=True)
    for i, rep in enumerate(reports):
        with open(os.path.join(out_dir, f"{i:02d}_{rep['job']}.json"), "w") as fh:
            fh.write(dumps_report(rep))
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["job", "metric", "value"])
        for rep in reports:
            for key, val in _flatten("", rep["ratios"], {}).items():
                w.writerow([rep["job"], key, _csv_value(val)])
    return reports


def _csv_value(val):
    return repr(val) if isinstance(val, float) else val


def _set_path(cfg, path, value):
    node = cfg
    keys = path.split(".")
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def _parse_value(text):
    text = text.strip()
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def sweep_config(cfg: dict, axis: str, values, out_dir, jobs=1):
    """Rerun the config for each axis value; write ``sweep.csv``; return all reports."""
    if axis in SWEEP_AXES:
        path = SWEEP_AXES[axis]
    elif "." in axis:
        path = axis
    else:
        raise ParameterError(f"unknown sweep axis {axis!r}; expected one of {tuple(SWEEP_AXES)} or a dotted key")
    rows, all_reports = [], []
    for value in values:
        c = copy.deepcopy(cfg)
        _set_path(c, path, [value] if path == "check.offsets" else value)
        reports = run_config(c, os.path.join(out_dir, f"{axis}={value}"), jobs)
        all_reports.extend(reports)
        for rep in reports:
            row = {axis: value, "job": rep["job"], "pass": rep["pass"]}
            row.update(_flatten("", rep["ratios"], {}))
            rows.append(row)
    columns = [axis, "job", "pass"] + sorted({k for r in rows for k in r} - {axis, "job", "pass"})
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_csv_value(r.get(c, "")) for c in columns])
    return all_reports


# ---------------------------------------------------------------------------
# entry point


def _parser():
    ap = argparse.ArgumentParser(prog="mrpert", description="Run solver and verification jobs from a config.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="TOML config file")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default="mrpert_out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common.add_argument("--tol", type=float, default=None, help="override the fixed-point tolerance")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run every job in the config")
    sw = sub.add_parser("sweep", parents=[common], help="rerun the config along one parameter axis")
    sw.add_argument("--axis", required=True, help=f"one of {', '.join(SWEEP_AXES)} or a dotted config key")
    sw.add_argument("--values", required=True, help="comma-separated values")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.tol is not None:
            cfg["tol"] = args.tol
        validate_config(cfg)
        if args.command == "run":
            reports = run_config(cfg, args.out, args.jobs)
        else:
            values = [_parse_value(v) for v in args.values.split(",") if v.strip()]
            reports = sweep_config(cfg, args.axis, values, args.out, args.jobs)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for rep in reports:
        status = "PASS" if rep["pass"] else "FAIL"
        extra = f"  ({rep['error']})" if "error" in rep else ""
        print(f"{status}  {rep['job']}{extra}")
    return 0 if all(r["pass"] for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
