"""Command-line entry point: ``dividend-hjb <command> --config <path> [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.  Errors are printed to stderr as one JSON object.
The log level comes from ``DIVIDEND_HJB_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
from dataclasses import replace
import io
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from . import __version__
from .acceptance import CRITERIA, run_all
from .classical import classical_value, compute_classical, decay_rate_lambda, domain_bound
from .config import ConfigError, RunConfig, parse_config
from .grid import GridError, GridField, build_grid
from .hjb import SolverError, solve_policy_iteration
from .mc import estimate_value
from .model import ParameterError, State
from .policy import (NonThresholdPolicyError, ThresholdCurve, check_admissible,
                     check_optimality, eval_policy, extract_threshold, initial_curve,
                     shape_diagnostics, threshold_policy)
from .ruin import solve_survival_pde

log = logging.getLogger("dividend_hjb")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4
COMMANDS = ("classical", "solve", "eval", "simulate", "ruin", "verify")
LOG_ENV = "DIVIDEND_HJB_LOG_LEVEL"


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)
    return path


def _solve(cfg: RunConfig):
    p = cfg.model
    g = build_grid(p, cfg.grid_spec())
    init = threshold_policy(g, initial_curve(p, g), p.kmax)
    rep = solve_policy_iteration(p, g, init, cfg.solver)
    return g, rep


def cmd_classical(cfg: RunConfig, out: Path) -> dict:
    p = cfg.model
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["drift [currency/time]", "alpha1 [1/currency]", "alpha2 [1/currency]",
                "beta2 [1/currency]", "a1 [currency]", "a2 [currency]", "bbar [currency]",
                "b2 [currency]"])
    sols = [compute_classical(p, 1), compute_classical(p, 2)]
    for s in sols:
        w.writerow([repr(v) for v in (s.theta, s.alpha1, s.alpha2, s.beta2, s.a1, s.a2,
                                      s.bbar, s.b2)])
    _write(out, "classical_parameters.csv", buf.getvalue())

    lam = decay_rate_lambda(p)
    tol = cfg.grid.tail_tol
    raw = float(np.log(1.0 / tol) / lam)
    bigB = domain_bound(p, tol)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kmax [currency/time]", "lambda [1/currency]", "tail_tol [1]",
                "B_unrounded [currency]", "B [currency]"])
    w.writerow([repr(p.kmax), repr(lam), repr(tol), repr(raw), repr(bigB)])
    _write(out, "domain_bound.csv", buf.getvalue())

    xs = np.linspace(0.0, bigB, 201)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x [currency]", "V_theta1 [currency]", "V_theta2 [currency]"])
    v1, v2 = (classical_value(s, p, xs) for s in sols)
    for x, a, b in zip(xs, v1, v2):
        w.writerow([repr(float(x)), repr(float(a)), repr(float(b))])
    _write(out, "classical_value.csv", buf.getvalue())
    return {"command": "classical", "lambda": lam, "B": bigB,
            "bbar": [sols[0].bbar, sols[1].bbar]}


def cmd_solve(cfg: RunConfig, out: Path) -> dict:
    p = cfg.model
    g, rep = _solve(cfg)
    if not rep.converged:
        raise SolverError(f"policy iteration did not converge in {rep.iterations} steps")
    curve = extract_threshold(p, rep.policy, g, rep.value)
    _write(out, "value.csv", rep.value.to_csv(value_name="V"))
    _write(out, "policy.csv", rep.policy.to_csv(value_name="u", units="currency/time"))
    _write(out, "threshold.csv", curve.to_csv(p))
    adm = check_admissible(p, curve)
    report = rep.to_dict()
    report.update({
        "B": g.xs[-1],
        "threshold_endpoints": [float(curve.levels[0]), float(curve.levels[-1])],
        "classical_thresholds": [compute_classical(p, 1).bbar, compute_classical(p, 2).bbar],
        "admissible": adm.admissible,
        "admissibility_min_gap": adm.min_gap,
        "caveats": adm.caveats,
        "shape_warnings": shape_diagnostics(p, curve),
    })
    _write(out, "report.json", _dump_json(report))
    return {"command": "solve", "iterations": rep.iterations, "converged": rep.converged}


def _eval_curve(cfg: RunConfig, g) -> ThresholdCurve:
    spec = cfg.eval.curve
    p = cfg.model
    if spec == "initial":
        return initial_curve(p, g)
    if spec == "optimal":
        _, rep = _solve(cfg)
        return extract_threshold(p, rep.policy, g, rep.value)
    if isinstance(spec, float):
        return ThresholdCurve.constant(g, spec)
    ths, levels = zip(*spec)
    return ThresholdCurve(np.array(ths), np.array(levels))


def cmd_eval(cfg: RunConfig, out: Path) -> dict:
    p = cfg.model
    g = build_grid(p, cfg.grid_spec())
    curve = _eval_curve(cfg, g)
    j = eval_policy(p, g, curve, cfg.solver)
    opt = check_optimality(p, g, j, curve, scheme=cfg.solver.drift)
    adm = check_admissible(p, curve)
    _write(out, "jvalue.csv", j.to_csv(value_name="J"))
    _write(out, "curve.csv", curve.to_csv(p))
    summary = {"optimality_violations": opt.violations, "optimality_worst_margin": opt.worst_margin,
               "optimality_checked": opt.checked, "admissible": adm.admissible,
               "admissibility_min_gap": adm.min_gap, "caveats": adm.caveats}
    _write(out, "eval.json", _dump_json(summary))
    return {"command": "eval", **{k: summary[k] for k in ("optimality_violations", "admissible")}}


def cmd_simulate(cfg: RunConfig, out: Path) -> dict:
    p = cfg.model
    mode = cfg.simulate.policy
    pde = None
    if mode == "optimal":
        g, rep = _solve(cfg)
        policy = extract_threshold(p, rep.policy, g, rep.value)
        pde = rep.value
    elif mode == "initial":
        g = build_grid(p, cfg.grid_spec())
        policy = initial_curve(p, g)
    else:
        policy = mode
    rows = []
    for x, th in cfg.simulate.starts:
        est = estimate_value(p, State(x, th), policy, cfg.sim)
        row = {"x": x, "vartheta": th, **est.to_dict()}
        if pde is not None:
            row["pde_value"] = pde.interpolate(x, th)
        rows.append(row)
    result = {"policy": mode, "dt": cfg.sim.dt, "horizon": cfg.sim.horizon,
              "seed": cfg.sim.seed, "antithetic": cfg.sim.antithetic,
              "bridge": cfg.sim.bridge, "estimates": rows}
    _write(out, "mc.json", _dump_json(result))
    return {"command": "simulate", "estimates": len(rows)}


def cmd_ruin(cfg: RunConfig, out: Path) -> dict:
    p = cfg.model
    g, rep = _solve(cfg)
    curve = extract_threshold(p, rep.policy, g, rep.value)
    r = cfg.ruin
    sz = solve_survival_pde(p, g, r.t_end, r.nt, tols=cfg.solver)
    sx = solve_survival_pde(p, g, r.t_end, r.nt, controlled=curve, tols=cfg.solver)
    _write(out, "survival_uncontrolled.csv", sz.to_csv())
    _write(out, "survival_controlled.csv", sx.to_csv())
    diff = GridField(g, sz.survival().values - sx.survival().values)
    _write(out, "ruin_difference.csv", diff.to_csv(value_name="pX_minus_pZ", units="probability"))
    probes = {"t": r.t_end,
              "uncontrolled": sz.probe(r.probes),
              "controlled": sx.probe(r.probes),
              "min_pX_minus_pZ": float(diff.values.min())}
    _write(out, "ruin_probes.json", _dump_json(probes))
    return {"command": "ruin", "min_pX_minus_pZ": probes["min_pX_minus_pZ"]}


def cmd_verify(cfg: RunConfig, out: Path, only=None) -> dict:
    results = run_all(seed=cfg.sim.seed, only=only, echo=lambda s: print(s, flush=True))
    _write(out, "verify.json", _dump_json([r.to_dict() for r in results]))
    failed = [r.number for r in results if not r.passed]
    return {"command": "verify", "passed": len(results) - len(failed), "failed": failed}


HANDLERS = {"classical": cmd_classical, "solve": cmd_solve, "eval": cmd_eval,
            "simulate": cmd_simulate, "ruin": cmd_ruin}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dividend-hjb", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, help="JSON run configuration (defaults: preset k15)")
    ap.add_argument("--seed", type=int, help="override sim.seed")
    ap.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    ap.add_argument("--only", type=str, default=None,
                    help="verify: comma-separated criterion numbers")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def _fail(code: int, kind: str, exc: Exception, extra: dict | None = None) -> int:
    payload = {"error": kind, "exit_code": code, "message": str(exc)}
    if extra:
        payload.update(extra)
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
        cfg = parse_config(text)
        if args.seed is not None:
            cfg = _with_seed(cfg, args.seed)
        only = None
        if args.only:
            only = [int(v) for v in args.only.split(",")]
            if set(only) - set(CRITERIA):
                raise ConfigError(f"--only accepts criteria {sorted(CRITERIA)}", "--only")
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc, exc.to_dict())
    except (OSError, ValueError) as exc:
        return _fail(EXIT_CONFIG, "config", exc)

    out = args.out or Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "verify":
            summary = cmd_verify(cfg, out, only)
        else:
            summary = HANDLERS[args.command](cfg, out)
    except (ParameterError, GridError) as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except NonThresholdPolicyError as exc:
        return _fail(EXIT_NUMERIC, "numerical", exc, {"rows": exc.rows[:20]})
    except (SolverError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        return _fail(EXIT_NUMERIC, "numerical", exc)
    except OSError as exc:
        return _fail(EXIT_CONFIG, "io", exc)
    print(json.dumps(summary, sort_keys=True))
    if args.command == "verify" and summary["failed"]:
        return EXIT_VERIFY
    return EXIT_OK


def _with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, sim=cfg.sim.replace(seed=seed))


if __name__ == "__main__":
    sys.exit(main())
