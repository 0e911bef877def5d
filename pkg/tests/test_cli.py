import csv
import json
from pathlib import Path

import pytest

from mrpert import ParameterError
from mrpert.cli import (
    DEFAULTS,
    ConfigError,
    dumps_report,
    load_config,
    main,
    run_config,
    run_job,
    sweep_config,
    validate_config,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _minimal():
    return load_config(CONFIGS / "minimal.toml")


def test_defaults_are_filled():
    cfg = _minimal()
    assert cfg["problem"]["model"] == "scalar"
    assert cfg["grid"]["grading"] == DEFAULTS["grid"]["grading"]
    assert validate_config(cfg) is cfg


@pytest.mark.parametrize("path,value,match", [
    (("jobs",), ["fly"], "unknown job"),
    (("problem", "model"), "torus", "unknown model"),
    (("perturbation", "kind"), "sideways", "unknown perturbation kind"),
    (("solve", "scheme"), "rk4", "unknown scheme"),
    (("grid", "m"), 1, "grid.m"),
    (("exponents", "p"), 1, "exponents.p"),
])
def test_validation_errors(path, value, match):
    cfg = _minimal()
    node = cfg
    for key in path[:-1]:
        node = node[key]
    node[path[-1]] = value
    with pytest.raises(ConfigError, match=match):
        validate_config(cfg)


def test_inadmissible_config_names_clause():
    with pytest.raises(ConfigError, match="ν\\+1 < r"):
        validate_config(load_config(CONFIGS / "inadmissible.toml"))


def test_lower_order_needs_q():
    cfg = _minimal()
    cfg["perturbation"]["kind"] = "lower_order"
    with pytest.raises(ConfigError, match="perturbation.q"):
        validate_config(cfg)


def test_unreadable_config(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = = 1\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_run_job_reports_and_serializes():
    rep = run_job(_minimal(), "solve")
    assert rep["pass"] and rep["job"] == "solve" and rep["seed"] == 0
    assert dumps_report(rep) == dumps_report(run_job(_minimal(), "solve"))
    json.loads(dumps_report(rep))


def test_run_job_captures_errors():
    cfg = _minimal()
    cfg["exponents"]["kappa"] = 5.0
    rep = run_job(cfg, "trace_embedding")
    assert rep["pass"] is False and "error" in rep


def test_run_config_writes_reports(tmp_path):
    reports = run_config(_minimal(), tmp_path)
    assert len(reports) == 1
    assert (tmp_path / "00_solve.json").exists()
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["job", "metric", "value"] and len(rows) > 1


def test_sweep_writes_one_row_per_value(tmp_path):
    sweep_config(_minimal(), "m", [64, 128], tmp_path)
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["m"] for r in rows] == ["64", "128"]
    assert (tmp_path / "m=64" / "00_solve.json").exists()
    with pytest.raises(ParameterError):
        sweep_config(_minimal(), "bogus", [1], tmp_path)


def test_main_exit_codes(tmp_path, capsys):
    assert main(["run", str(CONFIGS / "minimal.toml"), "--out", str(tmp_path / "a")]) == 0
    assert "PASS  solve" in capsys.readouterr().out
    assert main(["run", str(CONFIGS / "inadmissible.toml"), "--out", str(tmp_path / "b")]) == 2
    assert "config error" in capsys.readouterr().err
    assert main(["sweep", str(CONFIGS / "minimal.toml"), "--axis", "nope", "--values", "1",
                 "--out", str(tmp_path / "c")]) == 2


def test_main_seed_override(tmp_path):
    assert main(["run", str(CONFIGS / "minimal.toml"), "--seed", "7", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "00_solve.json").read_text())["seed"] == 7
