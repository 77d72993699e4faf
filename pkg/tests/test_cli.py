import json
import subprocess
import sys

import pytest

from dividend_hjb.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from dividend_hjb.config import ConfigError, parse_config

SMALL = {
    "preset": "k15",
    "grid": {"n": 100, "m": 25},
    "sim": {"dt": 0.01, "horizon": 5.0, "paths": 1000, "seed": 7},
    "ruin": {"t_end": 2.0, "nt": 20},
    "simulate": {"starts": [[1.0, 1.5]]},
}


def _write_cfg(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc) if isinstance(doc, dict) else doc)
    return path


def test_defaults():
    cfg = parse_config("")
    assert cfg.preset == "k15" and cfg.model.kmax == 1.5
    assert cfg.grid_spec().bigB == 7.46
    assert (cfg.grid.n, cfg.grid.m) == (200, 50)


def test_preset_and_override():
    cfg = parse_config('{"preset": "r4", "model": {"kmax": 1.2}, "sim": {"paths": 10}}')
    assert cfg.model.theta2 == 4.0 and cfg.model.kmax == 1.2 and cfg.sim.paths == 10


@pytest.mark.parametrize("doc, field", [
    ('{"modle": {}}', "modle"),
    ('{"model": {"kmax": "1"}}', "model.kmax"),
    ('{"model": {"theta1": 3.0}}', "model"),
    ('{"grid": {"n": 1.5}}', "grid.n"),
    ('{"grid": {"a1": 0.9}}', "grid"),
    ('{"solver": {"cross": "diagonal"}}', "solver.cross"),
    ('{"preset": "k99"}', "preset"),
    ('{"sim": {"paths": 3, "antithetic": true}}', "sim"),
])
def test_config_errors_name_field(doc, field):
    with pytest.raises(ConfigError) as err:
        parse_config(doc)
    assert err.value.field == field


def test_syntax_error_position():
    with pytest.raises(ConfigError) as err:
        parse_config('{\n  "grid": {"n": 10,}\n}')
    assert (err.value.line, err.value.column) == (2, 20)


def test_config_error_exit_code(tmp_path, capsys):
    path = _write_cfg(tmp_path, '{"model": {"sigma": -1}}')
    assert main(["solve", "--config", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config" and err["field"] == "model"
    assert main(["solve", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG


def test_verify_rejects_unknown_criterion(tmp_path, capsys):
    assert main(["verify", "--only", "11", "--out", str(tmp_path)]) == EXIT_CONFIG


EXPECTED = {
    "classical": ["classical_parameters.csv", "domain_bound.csv", "classical_value.csv"],
    "solve": ["value.csv", "policy.csv", "threshold.csv", "report.json"],
    "eval": ["jvalue.csv", "curve.csv", "eval.json"],
    "simulate": ["mc.json"],
    "ruin": ["survival_uncontrolled.csv", "survival_controlled.csv", "ruin_difference.csv",
             "ruin_probes.json"],
}


@pytest.mark.parametrize("command", sorted(EXPECTED))
def test_commands_write_outputs_reproducibly(tmp_path, capsys, command):
    cfg = _write_cfg(tmp_path, SMALL)
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main([command, "--config", str(cfg), "--out", str(out)]) == EXIT_OK
        outs.append({name: (out / name).read_bytes() for name in EXPECTED[command]})
    assert outs[0] == outs[1]
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["command"] == command


def test_solve_outputs(tmp_path):
    cfg = _write_cfg(tmp_path, SMALL)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    thr = (tmp_path / "threshold.csv").read_text().splitlines()
    assert thr[0] == "vartheta [currency/time],b [currency],classical_interp [currency]"
    assert len(thr) == 1 + 26
    val = (tmp_path / "value.csv").read_text().splitlines()
    assert val[0] == "x [currency],vartheta [currency/time],V [currency]"
    assert len(val) == 1 + 101 * 26
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["converged"] and rep["admissible"] and rep["B"] == 7.46


def test_underresolved_ruin_grid_is_a_numerical_failure(tmp_path, capsys):
    # on 40 x 10 the uncontrolled survival overshoots 1 by ~1e-7, beyond the 1e-8 bound check
    cfg = _write_cfg(tmp_path, {**SMALL, "grid": {"n": 40, "m": 10}})
    assert main(["ruin", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_NUMERIC
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "numerical" and "left [0, 1]" in err["message"]


def test_seed_override_changes_estimate(tmp_path):
    cfg = _write_cfg(tmp_path, {**SMALL, "simulate": {"starts": [[1.0, 1.5]], "policy": "always"}})
    means = []
    for seed in ("1", "2"):
        out = tmp_path / seed
        assert main(["simulate", "--config", str(cfg), "--seed", seed, "--out", str(out)]) == 0
        mc = json.loads((out / "mc.json").read_text())
        assert mc["seed"] == int(seed)
        means.append(mc["estimates"][0]["mean"])
    assert means[0] != means[1]


def test_verify_single_criterion(tmp_path, capsys):
    assert main(["verify", "--only", "1,2", "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "[PASS] criterion  1" in out and "[PASS] criterion  2" in out
    res = json.loads((tmp_path / "verify.json").read_text())
    assert [r["number"] for r in res] == [1, 2] and all(r["passed"] for r in res)


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dividend_hjb.cli", "classical", "--out",
                           str(tmp_path)], capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["B"] == 7.46
