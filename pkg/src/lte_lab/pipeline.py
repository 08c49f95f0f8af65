"""Compose the levels: hydro solution -> control field -> local checks at each (x, t).

The control field is the single object shared by every level: at each check
point the state map ``theta(x, t) -> Gibbs state`` feeds the mesoscopic
sampler, the microscopic Gibbs/KMS checks and the probe.
"""
from __future__ import annotations

import datetime as _dt
import os
import platform
from concurrent.futures import ThreadPoolExecutor
from importlib.metadata import PackageNotFoundError, version

import numpy as np

from . import hydro
from .config import config_hash
from .errors import ConfigError, InputError, LTEError
from .fluctuations import ControlField, TestFunction, local_covariance, punctual_covariance_check
from .models import CATALOG, FreeFermionChainModel
from .quantum_stat import (
    FiniteGibbsState,
    LocalGibbsProfile,
    build_effective_hamiltonian,
    gibbs_moments,
    kms_check,
    local_restriction_check,
)
from .zeroth_law import flat_profile, local_probe_scenario, qubit_probe

LEVELS = ("macro", "meso", "micro", "zeroth")
THREADS_ENV = "LTE_LAB_THREADS"


def thread_count(default=None):
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return default or min(4, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}", key=THREADS_ENV) from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}", key=THREADS_ENV)
    return n


def record(level, name, x=None, t=None, value=None, expected=None, tolerance=None,
           passed=None, status="ok", detail=None):
    return {"level": level, "name": name, "x": x, "t": t, "value": value, "expected": expected,
            "tolerance": tolerance, "pass": bool(passed) if status == "ok" else status == "skipped",
            "status": status, "detail": detail}


def _key(rec):
    nan = float("inf")
    return (rec["t"] if rec["t"] is not None else -nan, rec["x"] if rec["x"] is not None else -nan,
            LEVELS.index(rec["level"]), rec["name"])


# --- hydro ----------------------------------------------------------------

def build_model(cfg):
    return CATALOG[cfg["model"]["name"]](**cfg["model"]["params"])


def build_scenario(cfg, model=None):
    model = model or build_model(cfg)
    hy = cfg["hydro"]
    bounds = []
    for side in ("left", "right"):
        b = hy[side]
        bounds.append(hydro.Boundary(b["kind"], b["theta"]) if b["kind"] == "reservoir"
                      else hydro.Boundary(b["kind"]))
    onsager = (hydro.constant_onsager(hy["mobility"], model.n) if hy["onsager"] == "constant"
               else hydro.beta_onsager(hy["mobility"]))
    M, length = hy["cells"], hy["length"]
    x = (np.arange(M) + 0.5) * length / M
    pressure = model.pressure()
    if hy["initial_theta"] is not None:
        init = np.asarray(hy["initial_theta"], dtype=float)
        theta0 = np.broadcast_to(init.reshape(-1, model.n), (M, model.n))
    else:
        ta, tb = np.asarray(bounds[0].theta), np.asarray(bounds[1].theta)
        s = x / length
        theta0 = (1 - s)[:, None] * ta + s[:, None] * tb
    q0 = -np.asarray(pressure.grad(theta0)).reshape(M, model.n)
    return hydro.HydroScenario(model, M, q0, bounds[0], bounds[1], onsager, length,
                               t_end=hy["t_end"], checkpoints=tuple(hy["checkpoints"]),
                               name=f"{model.name}-{hy['mode']}")


def solve_hydro(cfg, scenario):
    """Return ``(source, records)``; ``source`` is what ``hydro.theta_at`` reads."""
    recs = []
    if cfg["hydro"]["mode"] == "steady":
        state = hydro.steady_state(scenario)
        bal = hydro.entropy_balance(scenario, state.q)
        recs.append(record("macro", "steady_residual", value=state.info["residual"], expected=0.0,
                           tolerance=1e-10, passed=state.info["residual"] < 1e-10,
                           detail=state.info["method"]))
        recs.append(record("macro", "entropy_balance", value=bal["residual"], expected=0.0,
                           tolerance=1e-8, passed=bal["residual"] < 1e-8))
        recs.append(record("macro", "boundary_entropy_flux",
                           value=abs(bal["production"] - bal["outflow"]), expected=0.0,
                           tolerance=1e-8, passed=abs(bal["production"] - bal["outflow"]) < 1e-8))
        return (state, scenario.x), recs
    traj = hydro.solve(scenario)
    diag = hydro.entropy_diagnostics(traj)
    recs.append(record("macro", "min_entropy_production", value=diag["min_production"], expected=0.0,
                       tolerance=1e-12, passed=diag["production_ok"]))
    if diag["entropy_nondecreasing"] is not None:
        recs.append(record("macro", "entropy_nondecreasing", value=diag["worst_step_entropy_change"],
                           expected=0.0, tolerance=1e-12, passed=diag["entropy_nondecreasing"]))
        recs.append(record("macro", "conservation", value=diag["conservation_drift"], expected=0.0,
                           tolerance=1e-12 * max(traj.steps, 1),
                           passed=diag["conservation_drift"] <= 1e-12 * max(traj.steps, 1)))
    return traj, recs


def _field_at(source, cfg, model, t):
    """Meso grid control field at time ``t``, interpolated from the hydro cells."""
    fl = cfg["fluct"]
    length = cfg["hydro"]["length"]
    if isinstance(source, hydro.Trajectory):
        match = [s for s in source.states if abs(s.t - t) < 1e-12]
        if not match:
            raise InputError(f"no hydro checkpoint at t={t}")
        theta, xs = match[0].theta, source.scenario.x
    else:
        theta, xs = source[0].theta, source[1]
    M = fl["cells"] or 400
    xm = (np.arange(M) + 0.5) * length / M
    tm = np.stack([np.interp(xm, xs, theta[:, k]) for k in range(model.n)], axis=1)
    return ControlField(xm, tm, length / M, model.pressure(), length)


# --- per-point checks -------------------------------------------------------

def _meso(cfg, model, source, x, t, seed):
    fl = cfg["fluct"]
    field = _field_at(source, cfg, model, t)
    weights = tuple(fl["weights"] or [1.0] * model.n)
    rep = punctual_covariance_check(field, TestFunction(0.0, 1.0, weights), x, fl["eps"],
                                    fl["samples"], seed=seed)
    last = rep["rows"][-1]
    return [record("meso", "punctual_covariance", x, t, value=last["variance"], expected=last["target"],
                   tolerance=3 * last["se"] + last["allowance"], passed=last["within_band"],
                   detail={"eps": last["eps"], "N": rep["N"]})]


def _has_realization(model):
    return hasattr(model, "build_finite_model")


def _micro(cfg, model, theta, x, t, seed, profile_source):
    qu = cfg["quantum"]
    recs = []
    cov = local_covariance(model.pressure(), theta)
    recs.append(record("meso", "local_covariance", x, t, value=cov, expected=None, tolerance=None,
                       passed=True))
    if not _has_realization(model):
        recs.append(record("micro", "gibbs_covariance", x, t, status="skipped",
                           detail="model has no microscopic realization"))
        return recs
    free = isinstance(model, FreeFermionChainModel)
    L = qu["L"] if free else qu["kms_L"]
    _, qcov = gibbs_moments(FiniteGibbsState(model, theta, L))
    dev = float(np.max(np.abs(qcov - cov)))
    recs.append(record("micro", "gibbs_covariance", x, t, value=qcov, expected=cov,
                       tolerance=qu["consistency_tol"], passed=dev <= qu["consistency_tol"],
                       detail={"max_abs_diff": dev, "L": L}))
    if free:
        xs, th = profile_source
        prof = LocalGibbsProfile(
            lambda y: np.stack([np.interp(y, xs, th[:, 0]), np.interp(y, xs, th[:, 1])]),
            qu["restriction_L"], model.J)
        rep = local_restriction_check(prof, qu["window"], [x])["rows"][0]
        dev = max(rep["energy_deviation"], rep["density_deviation"])
        recs.append(record("micro", "local_restriction", x, t, value=dev, expected=0.0,
                           tolerance=qu["restriction_tol"], passed=dev <= qu["restriction_tol"]))
    else:
        recs.append(record("micro", "local_restriction", x, t, status="skipped",
                           detail="defined for the free-fermion backend"))
    if theta[0] > 0:
        H = build_effective_hamiltonian(model, theta, qu["kms_L"], backend="dense")
        rng = np.random.default_rng([seed, 1])
        d = H.shape[0]
        A = rng.normal(size=(d, d)); A = A + A.T  # noqa: E702
        B = rng.normal(size=(d, d)); B = B + B.T  # noqa: E702
        rep = kms_check(H, theta[0], {"A": A}, {"B": B}, qu["kms_taus"])
        recs.append(record("micro", "local_kms", x, t, value=rep.max_residual, expected=0.0,
                           tolerance=1e-10, passed=rep.max_residual < 1e-10, detail={"beta": theta[0]}))
    return recs


def _zeroth(cfg, model, source, x, t):
    pr = cfg["probe"]
    if not getattr(model, "thermal", True):
        return [record("zeroth", "probe_thermalization", x, t, status="skipped",
                       detail="theta_1 of this model is not an inverse temperature")]
    rep = local_probe_scenario(source, x, t, qubit_probe(pr["omega"]), tau_max=pr["tau_max"],
                               base_rate=flat_profile(pr["gamma0"]))
    ok = rep["converged"] and abs(rep["fitted_beta"] - rep["local_beta"]) < 1e-6
    return [record("zeroth", "probe_thermalization", x, t, value=rep["final_distance"], expected=0.0,
                   tolerance=pr["tol"], passed=ok,
                   detail={"local_beta": rep["local_beta"], "fitted_beta": rep["fitted_beta"]})]


def _guard(level, name, x, t, fn):
    try:
        return fn()
    except LTEError as exc:
        return [record(level, name, x, t, status="error", detail=f"{type(exc).__name__}: {exc}")]


def check_point(cfg, model, source, index, x, t, levels=LEVELS):
    seed = cfg["seed"]
    point_seed = [seed, index]
    if isinstance(source, hydro.Trajectory):
        st = [s for s in source.states if abs(s.t - t) < 1e-12][0]
        profile_source = (source.scenario.x, st.theta)
    else:
        profile_source = (source[1], source[0].theta)

    def theta():
        return hydro.theta_at(source, x, t)[0]

    recs = []
    if "meso" in levels:
        recs += _guard("meso", "punctual_covariance", x, t,
                       lambda: _meso(cfg, model, source, x, t, int(np.random.SeedSequence(point_seed)
                                                                   .generate_state(1)[0])))
    if "micro" in levels:
        recs += _guard("micro", "gibbs_covariance", x, t,
                       lambda: _micro(cfg, model, theta(), x, t, int(seed) + index, profile_source))
    if "zeroth" in levels:
        recs += _guard("zeroth", "probe_thermalization", x, t, lambda: _zeroth(cfg, model, source, x, t))
    return recs


def versions():
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "scikit-learn", "mpmath"):
        try:
            out[pkg] = version(pkg)
        except PackageNotFoundError:
            out[pkg] = None
    try:
        out["lte_lab"] = version("lte-lab")
    except PackageNotFoundError:
        out["lte_lab"] = None
    return out


def run_pipeline(cfg, threads=None, levels=LEVELS):
    """Full composition; returns ``(report, artifacts)``.

    ``levels`` restricts the per-point checks; the hydro solve always runs.

    ``report["verdicts"]`` depends only on the config; wall-clock data lives in
    ``report["provenance"]``.
    """
    threads = threads or thread_count()
    model = build_model(cfg)
    records = []
    try:
        scenario = build_scenario(cfg, model)
        source, hrecs = solve_hydro(cfg, scenario)
        records += hrecs
    except LTEError as exc:
        records.append(record("macro", "hydro_solve", status="error", detail=f"{type(exc).__name__}: {exc}"))
        source = None
    artifacts = {"source": source}
    point_levels = tuple(lv for lv in levels if lv != "macro")
    if source is not None and point_levels:
        pts = list(enumerate(cfg["checks"]["points"]))
        if threads > 1 and len(pts) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(lambda p: check_point(cfg, model, source, p[0], *p[1], point_levels), pts))
        else:
            parts = [check_point(cfg, model, source, i, x, t, point_levels) for i, (x, t) in pts]
        for p in parts:
            records += p
    records.sort(key=_key)
    verdicts = {"overall_pass": all(r["pass"] for r in records), "records": records,
                "counts": {s: sum(r["status"] == s for r in records) for s in ("ok", "skipped", "error")}}
    provenance = {"config_hash": config_hash(cfg), "seed": cfg["seed"], "versions": versions(),
                  "threads": threads, "config": cfg,
                  "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    return {"verdicts": verdicts, "provenance": provenance}, artifacts


def hydro_rows(source):
    """``(t, x, q..., theta...)`` rows for every stored state."""
    if source is None:
        return []
    if isinstance(source, hydro.Trajectory):
        states, xs = source.states, source.scenario.x
    else:
        states, xs = [source[0]], source[1]
    rows = []
    for s in states:
        for i, x in enumerate(xs):
            rows.append([s.t, x, *s.q[i], *s.theta[i]])
    return rows
