"""Invariant suites of every module, with fixed seeds, behind one registry."""
from __future__ import annotations

import sys
import time
from dataclasses import dataclass

import numpy as np

from . import fluctuations as fl
from . import hydro
from . import quantum_stat as qs
from . import thermo_core as tc
from . import zeroth_law as zl
from .errors import LTEError
from .models import (
    DoubleWellModel,
    FreeFermionChainModel,
    ParamagnetModel,
    QuadraticModel,
    SpinChainEDModel,
)


@dataclass(frozen=True)
class Entry:
    module: str
    name: str
    concept: str
    fn: object

    @property
    def key(self):
        return f"{self.module}.{self.name}"


REGISTRY = []


def invariant(module, concept):
    def deco(fn):
        REGISTRY.append(Entry(module, fn.__name__, concept, fn))
        return fn
    return deco


# --- thermo_core --------------------------------------------------------------

@invariant("thermo_core", "attained supremum of the Legendre transform")
def legendre_identity():
    worst = 0.0
    for model in (ParamagnetModel(), QuadraticModel()):
        s = model.entropy()
        for t in np.linspace(-1.5, 1.5, 10):
            pi, q = tc.legendre_transform(s, [t])
            worst = max(worst, abs(pi - (float(s.value(q)) - t * q[0])),
                        abs(pi - float(model.pressure().value([t]))))
    return worst < 1e-8, {"max_residual": worst}


@invariant("thermo_core", "biconjugate equals the concave envelope")
def biconjugation():
    dw = DoubleWellModel()
    q = np.linspace(-2, 2, 2001)
    theta = np.linspace(-30, 30, 6001)
    pi = tc.discrete_conjugate(q, dw.raw(q), theta, kind="sup")
    back = tc.discrete_conjugate(theta, pi, q, kind="inf")
    env = dw.entropy().value(q[:, None])
    err = float(np.max(np.abs(back - env)))
    return err < 1e-3, {"max_deviation": err}


@invariant("thermo_core", "order-reversing density map")
def monotone_duality():
    """``(q(a) - q(b)) . (a - b) <= 0`` for random pairs of control values."""
    rng = np.random.default_rng(7)
    worst = -np.inf
    for model, lo, hi in ((ParamagnetModel(), [-2.0], [2.0]),
                          (FreeFermionChainModel(), [0.3, -1.5], [2.5, 1.5])):
        p = model.pressure()
        a, b = rng.uniform(lo, hi, size=(2, 200, model.n))
        inner = np.sum((p.grad(b) - p.grad(a)) * (a - b), axis=-1)  # q = -grad pi
        worst = max(worst, float(inner.max()))
    return worst <= 0.0, {"max_inner_product": worst}


@invariant("thermo_core", "Hessian duality pi'' = -[s'']^-1")
def hessian_duality():
    worst = 0.0
    for model in (ParamagnetModel(), QuadraticModel()):
        s, p = model.entropy(), model.pressure()
        for t in np.linspace(-1.5, 1.5, 10):
            worst = max(worst, tc.hessian_pair_check(s, p, [t]))
    ff = FreeFermionChainModel()
    worst = max(worst, tc.hessian_pair_check(ff.entropy(), ff.pressure(), [1.0, 0.0]))
    return worst < 1e-6, {"max_residual": worst}


@invariant("thermo_core", "equilibrium densities lie in the tangent set")
def tangent_containment():
    dw = DoubleWellModel()
    grid = np.round(np.linspace(-0.2, 0.2, 401), 12)
    tab = tc.tabulate_pressure(dw.entropy(), grid)
    sets = {i: tc.tangent_set(tab, grid[i]) for i in range(2, grid.size - 2)}
    kinks = [i for i, ts in sets.items() if not ts.degenerate]
    bad = [float(grid[i]) for i, ts in sets.items() if not ts.contains(-tab.q_star[i])]
    return not bad and kinks == [200], {"kinks": [float(grid[k]) for k in kinks], "violations": bad}


# --- models -------------------------------------------------------------------

@invariant("models", "closed forms agree with numeric conjugation")
def closed_vs_numeric():
    pm = ParamagnetModel()
    s, p = pm.entropy(), pm.pressure()
    worst = 0.0
    for t in np.linspace(-2, 2, 20):
        pi, q = tc.legendre_transform(s, [t])
        worst = max(worst, abs(pi - float(p.value([t]))), abs(q[0] + float(p.grad([t])[0])))
    return worst < 1e-8, {"max_deviation": worst}


@invariant("models", "particle-hole symmetry of the fermion chain")
def particle_hole():
    p = FreeFermionChainModel().pressure()
    t = np.array([[0.7, 0.4], [1.3, -0.8], [2.0, 0.0]])
    flip = t * [1, -1]
    sym = float(np.max(np.abs(p.value(t) - p.value(flip) + t[:, 1])))
    half = float(abs(-p.grad([1.0, 0.0])[1] - 0.5))
    return max(sym, half) < 1e-10, {"symmetry": sym, "half_filling": half}


@invariant("models", "conserved charges commute")
def commuting_charges():
    norms = [SpinChainEDModel(L=6).build_finite_model().commutator_norm(),
             FreeFermionChainModel().build_finite_model(6, backend="dense").commutator_norm()]
    return max(norms) < 1e-12, {"norms": norms}


# --- quantum_stat -----------------------------------------------------------------

@invariant("quantum_stat", "Gibbs identity s = pi + theta.q")
def gibbs_identity():
    worst = 0.0
    for model, theta, L, b in ((FreeFermionChainModel(), [0.8, 0.3], 64, "free"),
                               (FreeFermionChainModel(), [0.8, 0.3], 6, "dense"),
                               (SpinChainEDModel(L=6), [1.2, 0.4], 6, "dense"),
                               (ParamagnetModel(), [1.0], 5, "dense")):
        worst = max(worst, qs.gibbs_identity_residual(qs.FiniteGibbsState(model, theta, L, b)))
    return worst < 1e-10, {"max_residual": worst}


@invariant("quantum_stat", "moments equal derivatives of pi_L")
def moment_duality():
    a = qs.moment_duality_check(FreeFermionChainModel(), [1.0, 0.2], 128)
    b = qs.moment_duality_check(SpinChainEDModel(L=6), [1.0, 0.2], 6)
    ok = a["grad_residual"] < 1e-6 and a["hess_residual"] < 1e-6
    ok &= b["grad_residual"] < 1e-8 and b["hess_residual"] < 1e-8
    return ok, {"free": a["hess_residual"], "dense": b["hess_residual"]}


@invariant("quantum_stat", "KMS boundary condition")
def kms_identity():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(10):
        d = int(rng.integers(2, 9))
        X = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / (2 * np.sqrt(d))
        A, B = rng.normal(size=(2, d, d))
        rep = qs.kms_check(X + X.conj().T, float(rng.uniform(0.2, 2.0)), A, B, [0.0, 0.7, 2.3])
        worst = max(worst, rep.max_residual)
    return worst < 1e-10, {"max_residual": worst}


@invariant("quantum_stat", "dense and free-fermion backends agree")
def backend_agreement():
    m = FreeFermionChainModel()
    worst = 0.0
    for L in (4, 6, 8):
        a, b = qs.FiniteGibbsState(m, [0.9, -0.2], L, "free"), qs.FiniteGibbsState(m, [0.9, -0.2], L, "dense")
        worst = max(worst, abs(a.pi - b.pi), float(np.max(np.abs(qs.gibbs_moments(a)[0] - qs.gibbs_moments(b)[0]))),
                    abs(qs.entropy_density_L(a) - qs.entropy_density_L(b)))
    return worst < 1e-10, {"max_deviation": worst}


@invariant("quantum_stat", "Gibbs state maximizes s - theta.q")
def variational_gap():
    rep = qs.gts_variational_check(SpinChainEDModel(L=4), [1.0, 0.0], 4, lambdas=(0.0, 0.1, 0.5))
    gaps = [r["gap"] for r in rep["rows"]]
    return abs(gaps[0]) < 1e-12 and min(gaps[1:]) > 0, {"gaps": gaps}


# --- hydro --------------------------------------------------------------------------

def _relaxation():
    sc = hydro.HydroScenario(ParamagnetModel(), 48, lambda x: np.where(x < 0.5, -0.15, -0.8), t_end=0.03)
    return sc, hydro.solve(sc)


@invariant("hydro", "local conservation law")
def conservation():
    _, tr = _relaxation()
    drift = float(np.max(np.abs(np.diff(tr.step_totals, axis=0))))
    return drift < 1e-12, {"max_step_drift": drift}


@invariant("hydro", "nonnegative entropy production")
def second_law():
    try:
        _, tr = _relaxation()
    except LTEError as exc:
        return False, {"error": f"{type(exc).__name__}: {exc}"}
    d = hydro.entropy_diagnostics(tr)
    return d["production_ok"] and bool(d["entropy_nondecreasing"]), {
        "min_production": d["min_production"], "worst_step": d["worst_step_entropy_change"]}


@invariant("hydro", "closed systems relax to a uniform state")
def h_theorem():
    sc = hydro.HydroScenario(ParamagnetModel(), 32, lambda x: -0.5 + 0.3 * np.cos(2 * np.pi * x), t_end=0.3,
                             checkpoints=tuple(np.linspace(0.02, 0.28, 14)))
    tr = hydro.solve(sc)
    spread = [float(np.ptp(s.theta)) for s in tr.states]
    return bool(np.all(np.diff(spread) <= 1e-14)) and spread[-1] < 1e-3 * spread[0], {"final_spread": spread[-1]}


@invariant("hydro", "q-evolution agrees with direct theta-evolution")
def theta_formulation():
    sc = hydro.HydroScenario(QuadraticModel(), 40, lambda x: np.sin(2 * np.pi * x) + 0.3,
                             left=hydro.PERIODIC, right=hydro.PERIODIC, t_end=0.005)
    tr = hydro.solve(sc)
    # reference: theta = -q, d theta/dt = laplacian(theta), same steps
    theta = -sc.initial_q()[:, 0]
    h = sc.h
    for a, b in zip(tr.step_times[:-1], tr.step_times[1:]):
        theta = theta + (b - a) * (np.roll(theta, -1) - 2 * theta + np.roll(theta, 1)) / h ** 2
    err = float(np.max(np.abs(theta - tr.final.theta[:, 0])))
    return err < 1e-12, {"max_deviation": err}


# --- fluctuations ---------------------------------------------------------------------

def _uniform_field(M=100, length=2.0):
    return fl.ControlField.from_function(ParamagnetModel(), lambda x: 1.0 + 0 * x, M, length)


@invariant("fluctuations", "Gaussian smeared field")
def gaussianity():
    v = fl.smeared_samples(_uniform_field(), [fl.TestFunction(1.0, 1.0)], 40000, seed=3)[:, 0]
    g = fl.gaussianity(v)
    return abs(g["skewness"]) < g["tolerance"] and abs(g["excess_kurtosis"]) < g["tolerance"], g


@invariant("fluctuations", "covariance (f, pi'' g) of smeared fields")
def covariance_consistency():
    field = fl.ControlField.from_function(ParamagnetModel(), lambda x: 0.5 + 0.5 * x, 100, 2.0)
    fs = [fl.TestFunction(c, 0.5) for c in (0.5, 1.0, 1.5)]
    N = 40000
    v = fl.smeared_samples(field, fs, N, seed=4)
    worst = 0.0
    for i in range(3):
        for j in range(3):
            prod = v[:, i] * v[:, j]
            exact = fl.smeared_variance(field, fs[i], fs[j])
            se = float(np.std(prod, ddof=1) / np.sqrt(N))
            worst = max(worst, abs(fl.fsum_mean(prod) - exact) / se)
    return worst < 3.0, {"max_z": worst}


@invariant("fluctuations", "sampler covariance equals Gibbs covariance per site")
def meso_micro_bridge():
    m = FreeFermionChainModel()
    theta = np.array([1.0, 0.3])
    field = fl.ControlField.from_function(m, lambda x: np.tile(theta, (x.size, 1)), 8)
    _, cov = qs.gibbs_moments(qs.FiniteGibbsState(m, theta, 256))
    dev = float(np.max(np.abs(field.covariance()[0] - cov)))
    return dev < 1e-6, {"max_deviation": dev}


@invariant("fluctuations", "seed determinism")
def seed_determinism():
    field = _uniform_field(50, 1.0)
    a = fl.sample_field(field, 9, 64).xi
    b = fl.sample_field(field, 9, 64).xi
    return bool(np.array_equal(a, b)), {}


# --- zeroth_law -------------------------------------------------------------------------

@invariant("zeroth_law", "Gibbs state is the fixed point")
def fixed_point():
    worst = max(zl.build_davies_generator(zl.random_probe(d, seed=d), 0.8).stationary_residual()
                for d in (2, 3, 4, 6))
    return worst < 1e-12, {"max_residual": worst}


@invariant("zeroth_law", "detailed balance of rates")
def detailed_balance():
    worst = max(zl.build_davies_generator(zl.random_probe(4, seed=s), b).detailed_balance_residual()
                for s in range(3) for b in (0.3, 1.0, 2.5))
    return worst < 1e-14, {"max_residual": worst}


@invariant("zeroth_law", "trace and hermiticity preservation, monotone contraction")
def contraction():
    rep = zl.thermalization_check(zl.random_probe(4, seed=5), 0.7, np.diag([0, 0, 0, 1.0]), 40.0, 200)
    ok = rep["trace_error"] < 1e-12 and rep["hermiticity_error"] < 1e-12 and rep["monotone"]
    return ok, {k: rep[k] for k in ("trace_error", "hermiticity_error", "monotone", "final_distance")}


@invariant("zeroth_law", "transitivity: equal beta read off different probes")
def transitivity():
    betas = []
    for probe in (zl.qubit_probe(1.0), zl.random_probe(3, seed=1)):
        rep = zl.thermalization_check(probe, 0.9, np.eye(probe.dim) / probe.dim, 80.0, 200)
        fit = zl.BoltzmannFit().fit(rep["energies"][:, None], rep["populations"])
        betas.append(fit.beta_)
    return abs(betas[0] - betas[1]) < 1e-6, {"betas": betas}


# --- driver ------------------------------------------------------------------------------

def select(filter_=None):
    return [e for e in REGISTRY if not filter_ or filter_ in e.key]


def verify_suite(filter_=None, stream=None):
    """Run the selected entries, print a coverage table, return an exit code."""
    stream = stream or sys.stdout
    entries = select(filter_)
    results = []
    for e in entries:
        t0 = time.perf_counter()
        try:
            ok, detail = e.fn()
        except LTEError as exc:
            ok, detail = False, {"error": f"{type(exc).__name__}: {exc}"}
        results.append((e, bool(ok), detail, time.perf_counter() - t0))
    width = max((len(e.key) for e in entries), default=10)
    print(f"{'entry':<{width}}  {'result':<6}  {'secs':>6}  concept", file=stream)
    for e, ok, _, dt in results:
        print(f"{e.key:<{width}}  {'PASS' if ok else 'FAIL':<6}  {dt:6.2f}  {e.concept}", file=stream)
    failed = [e.key for e, ok, _, _ in results if not ok]
    print(f"{len(results) - len(failed)}/{len(results)} passed", file=stream)
    return (1 if failed else 0), results
