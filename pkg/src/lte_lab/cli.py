"""Command line entry point: ``lte-lab <subcommand> [--config] [--out] [--seed] [--filter]``.

Exit codes: 0 all checks pass, 1 a check failed or errored, 2 bad configuration.
"""
from __future__ import annotations

import argparse
import copy
import datetime as dt
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from . import thermo_core as tc
from .config import DEFAULT_CONFIG, config_hash, load_config, parse_config
from .errors import ConfigError, LTEError
from .models import FreeFermionChainModel
from .pipeline import LEVELS, build_model, hydro_rows, record, run_pipeline, thread_count, versions
from .quantum_stat import pi_convergence
from .verify import verify_suite
from .zeroth_law import flat_profile, local_probe_scenario, qubit_probe

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

RECORD_FIELDS = ("level", "name", "x", "t", "status", "pass", "value", "expected", "tolerance", "detail")


def _load(args):
    if args.config:
        raw = load_config(args.config)
    else:
        raw = copy.deepcopy(DEFAULT_CONFIG)
    if args.seed is not None:
        raw = copy.deepcopy(raw)
        raw["seed"] = args.seed
    if args.out is not None:
        raw = copy.deepcopy(raw)
        raw["out"] = args.out
    # re-validate so overrides go through the same rules
    return parse_config(raw)


def _cell(v):
    if v is None or isinstance(v, (str, bool, int, float)):
        return v
    return json.dumps(io.to_jsonable(v), sort_keys=True)


def _filtered(records, pattern):
    if not pattern:
        return records
    return [r for r in records if pattern in f"{r['level']}.{r['name']}"]


def _finish(report, records, out, pattern):
    records = _filtered(records, pattern)
    v = report["verdicts"]
    v["records"] = records
    v["overall_pass"] = all(r["pass"] for r in records)
    v["counts"] = {s: sum(r["status"] == s for r in records) for s in ("ok", "skipped", "error")}
    io.write_json(out / "report.json", report)
    io.write_csv(out / "records.csv", RECORD_FIELDS,
                 ([_cell(r[k]) for k in RECORD_FIELDS] for r in records))
    for r in records:
        flag = {"skipped": "SKIP", "error": "ERROR"}.get(r["status"], "PASS" if r["pass"] else "FAIL")
        where = "" if r["x"] is None else f" x={r['x']:g} t={r['t']:g}"
        print(f"{flag:5} {r['level']}.{r['name']}{where}")
    print(f"overall: {'PASS' if v['overall_pass'] else 'FAIL'} -> {out / 'report.json'}")
    return EXIT_OK if v["overall_pass"] else EXIT_FAIL


def _write_hydro(out, cfg, source):
    n = build_model(cfg).n
    header = ["t", "x", *[f"q{k + 1}" for k in range(n)], *[f"theta{k + 1}" for k in range(n)]]
    io.write_csv(out / "hydro_profile.csv", header, hydro_rows(source))


def _run_levels(args, levels, extra=None):
    cfg = _load(args)
    out = Path(cfg["out"])
    report, art = run_pipeline(cfg, thread_count(), levels=levels)
    records = report["verdicts"]["records"]
    if extra is not None:
        records = sorted(records + extra(cfg, out, art["source"]),
                         key=lambda r: (r["t"] if r["t"] is not None else -np.inf,
                                        r["x"] if r["x"] is not None else -np.inf, r["level"], r["name"]))
    _write_hydro(out, cfg, art["source"])
    return _finish(report, records, out, args.filter)


# --- subcommands --------------------------------------------------------------

def cmd_thermo(args):
    """Tabulate ``theta, pi, q, s, pi''`` along theta_1 (other components zero)."""
    cfg = _load(args)
    out = Path(cfg["out"])
    model = build_model(cfg)
    th = cfg["thermo"]
    grid = np.zeros((th["points"], model.n))
    grid[:, 0] = np.linspace(th["theta_min"], th["theta_max"], th["points"])
    p, s = model.pressure(), model.entropy()
    rows, records = [], []
    for theta in grid:
        try:
            pi = float(p.value(theta))
            q = -np.asarray(p.grad(theta), dtype=float).reshape(model.n)
            H = np.asarray(p.hess(theta), dtype=float).reshape(model.n, model.n)
            res = tc.hessian_pair_check(s, p, theta)
        except LTEError as exc:
            records.append(record("macro", "hessian_duality", float(theta[0]), 0.0, status="error",
                                  detail=f"{type(exc).__name__}: {exc}"))
            continue
        rows.append([*theta, pi, *q, pi + float(theta @ q), *H.ravel()])
        records.append(record("macro", "hessian_duality", float(theta[0]), 0.0, value=res, expected=0.0,
                              tolerance=1e-6, passed=res < 1e-6))
    n = model.n
    header = ([f"theta{k + 1}" for k in range(n)] + ["pi"] + [f"q{k + 1}" for k in range(n)] + ["s"]
              + [f"hess{i + 1}{j + 1}" for i in range(n) for j in range(n)])
    io.write_csv(out / "thermo.csv", header, rows)
    return _finish(_empty_report(cfg), records, out, args.filter)


def _empty_report(cfg):
    return {"verdicts": {"records": []},
            "provenance": {"config_hash": config_hash(cfg), "seed": cfg["seed"], "versions": versions(),
                           "config": cfg, "timestamp": dt.datetime.now(dt.timezone.utc).isoformat()}}


def cmd_hydro(args):
    return _run_levels(args, ("macro",))


def cmd_fluct(args):
    return _run_levels(args, ("macro", "meso"))


def _convergence(cfg, out, source):
    model = build_model(cfg)
    if not isinstance(model, FreeFermionChainModel):
        return [record("micro", "pi_convergence", status="skipped", detail="free-fermion model only")]
    Ls = [8]
    while Ls[-1] * 2 <= max(cfg["quantum"]["L"], 16):
        Ls.append(Ls[-1] * 2)
    rep = pi_convergence(model, [1.0, 0.0], Ls, dps="auto")
    io.write_csv(out / "pi_convergence.csv", ["L", "pi_L", "log10_deviation"],
                 zip(rep["L"], rep["pi_L"], rep["log10_deviation"]))
    return [record("micro", "pi_convergence", value=rep["log10_deviation"][-1], expected=None,
                   tolerance=None, passed=rep["monotone"], detail={"L": Ls})]


def cmd_quantum(args):
    return _run_levels(args, ("macro", "micro"), extra=_convergence)


def _probe_traces(cfg, out, source):
    model = build_model(cfg)
    if not getattr(model, "thermal", True) or source is None:
        return []
    pr = cfg["probe"]
    rows = []
    for x, t in cfg["checks"]["points"]:
        try:
            rep = local_probe_scenario(source, x, t, qubit_probe(pr["omega"]), tau_max=pr["tau_max"],
                                       base_rate=flat_profile(pr["gamma0"]))
        except LTEError:
            continue  # already reported by the zeroth-level record
        rows += [[x, t, rep["local_beta"], tau, d] for tau, d in zip(rep["tau"], rep["distance"])]
    io.write_csv(out / "probe_traces.csv", ["x", "t", "beta", "tau", "trace_distance"], rows)
    return []


def cmd_zeroth(args):
    return _run_levels(args, ("macro", "zeroth"), extra=_probe_traces)


def cmd_pipeline(args):
    return _run_levels(args, LEVELS)


def cmd_verify(args):
    code, _ = verify_suite(args.filter)
    return code


COMMANDS = {
    "thermo": (cmd_thermo, "tabulate s, pi and pi'' for a model"),
    "hydro": (cmd_hydro, "solve the configured hydro scenario"),
    "fluct": (cmd_fluct, "mesoscopic fluctuation checks at the check points"),
    "quantum": (cmd_quantum, "pi_L convergence, Gibbs covariance, KMS and local restriction"),
    "zeroth": (cmd_zeroth, "probe thermalization at the check points"),
    "pipeline": (cmd_pipeline, "full composition of all levels"),
    "verify": (cmd_verify, "run the invariant suites"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="lte-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="TOML scenario file (built-in paramagnet scenario if omitted)")
        p.add_argument("--out", help="output directory (overrides 'out' in the config)")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the config)")
        p.add_argument("--filter", help="substring selecting checks or suite entries")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command][0](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LTEError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
