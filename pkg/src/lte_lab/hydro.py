"""Finite-volume conservation law with an Onsager constitutive flux.

Cells ``i = 0..M-1`` of width ``h`` carry densities ``q_i``; faces ``f = 0..M``
carry fluxes.  With ``theta = s'(q)`` the flux is ``j = L(theta) grad theta``
and ``dq/dt = -div j``, so entropy production ``grad theta . j`` is nonnegative
and heat runs towards larger ``theta_1`` (colder).

Reservoirs sit in ghost cells holding ``2 theta_res - theta_edge``, which puts
exactly ``theta_res`` on the boundary face.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import ConvergenceError, DomainError, InputError, StepRejected

CFL = 0.4
BOUNDARY_KINDS = ("reservoir", "no_flux", "periodic")


@dataclass(frozen=True)
class Boundary:
    kind: str
    theta: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in BOUNDARY_KINDS:
            raise InputError(f"boundary kind must be one of {BOUNDARY_KINDS}, got {self.kind!r}")
        if self.kind == "reservoir":
            if self.theta is None:
                raise InputError("a reservoir needs a theta value")
            object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))


def reservoir(theta):
    return Boundary("reservoir", theta)


NO_FLUX = Boundary("no_flux")
PERIODIC = Boundary("periodic")


def constant_onsager(mobility=1.0, n=1):
    """``L(theta) = mobility * I``."""
    eye = mobility * np.eye(n)

    def onsager(theta):
        return np.broadcast_to(eye, np.shape(theta) + (n,)).copy()

    return onsager


def beta_onsager(mobility=1.0):
    """``L(theta) = mobility * theta_1`` (scalar models)."""

    def onsager(theta):
        return mobility * np.asarray(theta)[..., :1, None]

    return onsager


@dataclass
class HydroScenario:
    """Everything needed to integrate one 1-D conservation-law problem.

    ``q0`` is an ``(M, n)`` array or a callable of the cell centers.
    """

    model: object
    M: int
    q0: object
    left: Boundary = NO_FLUX
    right: Boundary = NO_FLUX
    onsager: object = None
    length: float = 1.0
    c: float = 2.0
    t_end: float = 0.0
    checkpoints: tuple = ()
    name: str = "scenario"

    def __post_init__(self):
        if self.c != 2:
            raise InputError(f"only the diffusive class c = 2 is implemented, got c = {self.c}")
        if not 2 <= int(self.M) <= 4096:
            raise InputError("cell count M must be in [2, 4096]")
        self.M = int(self.M)
        if (self.left.kind == "periodic") != (self.right.kind == "periodic"):
            raise InputError("periodic boundaries must be set on both ends")
        self.n = self.model.n
        self.entropy = self.model.entropy()
        if self.onsager is None:
            self.onsager = constant_onsager(1.0, self.n)
        for b in (self.left, self.right):
            if b.kind == "reservoir":
                if b.theta.size != self.n:
                    raise InputError("reservoir theta has the wrong dimension")
                if self.thermal and b.theta[0] <= 0:
                    raise DomainError("reservoir theta_1 must be positive")
        probe = self.initial_q()
        if not np.all(self.entropy.in_domain(probe)):
            raise DomainError("initial data leaves the entropy domain")
        check_onsager(self.onsager, self.entropy.grad(probe))

    @property
    def thermal(self):
        return getattr(self.model, "thermal", True)

    @property
    def h(self):
        return self.length / self.M

    @property
    def x(self):
        return (np.arange(self.M) + 0.5) * self.h

    @property
    def periodic(self):
        return self.left.kind == "periodic"

    def initial_q(self):
        q0 = self.q0(self.x) if callable(self.q0) else self.q0
        q0 = np.asarray(q0, dtype=float)
        if q0.ndim == 1:
            q0 = q0[:, None] if self.n == 1 else np.broadcast_to(q0, (self.M, self.n))
        if q0.shape != (self.M, self.n):
            raise InputError(f"initial data must have shape ({self.M}, {self.n})")
        return q0.copy()


def check_onsager(onsager, theta, atol=1e-12):
    Lm = np.asarray(onsager(theta))
    if not np.allclose(Lm, np.swapaxes(Lm, -1, -2), atol=atol):
        raise InputError("Onsager matrix must be symmetric")
    if np.min(np.linalg.eigvalsh(Lm)) < -atol:
        raise InputError("Onsager matrix must be positive semidefinite")


@dataclass
class HydroState:
    q: np.ndarray
    t: float
    theta: np.ndarray
    info: dict = field(default_factory=dict)


@dataclass
class FluxField:
    """Face fluxes ``j`` (M+1, n) with the face gradients that produced them."""

    j: np.ndarray
    grad_theta: np.ndarray
    widths: np.ndarray

    @property
    def production(self):
        """Entropy production density ``grad theta . j`` per face."""
        return np.einsum("fk,fk->f", self.grad_theta, self.j)


def theta_of(scenario, q):
    theta = scenario.entropy.grad(q)
    if scenario.thermal and np.any(theta[..., 0] <= 0):
        raise DomainError("state has nonpositive theta_1")
    return theta


def face_fluxes(theta, scenario):
    """``j_f = L(theta_f) (theta_right - theta_left) / width_f`` on all ``M+1`` faces."""
    M, h = scenario.M, scenario.h
    if scenario.periodic:
        ext = np.concatenate([theta[-1:], theta, theta[:1]])
        widths = np.full(M + 1, h)
        face_theta = 0.5 * (ext[:-1] + ext[1:])
    else:
        left = scenario.left.theta if scenario.left.kind == "reservoir" else theta[0]
        right = scenario.right.theta if scenario.right.kind == "reservoir" else theta[-1]
        # ghost cells reflected through the boundary face value
        ext = np.concatenate([(2 * left - theta[0])[None], theta, (2 * right - theta[-1])[None]])
        widths = np.full(M + 1, h)
        face_theta = 0.5 * (ext[:-1] + ext[1:])
    grad = (ext[1:] - ext[:-1]) / h
    j = np.einsum("fkl,fl->fk", scenario.onsager(face_theta), grad)
    for f, b in ((0, scenario.left), (M, scenario.right)):
        if b.kind == "no_flux":
            j[f] = 0.0
            grad[f] = 0.0
        elif b.kind == "reservoir":
            widths[f] = 0.5 * h  # the face sits half a cell from the edge center
        elif f == M:
            widths[f] = 0.0  # periodic: face M is face 0
    return FluxField(j, grad, widths)


def rhs(q, scenario):
    theta = theta_of(scenario, q)
    flux = face_fluxes(theta, scenario)
    return -(flux.j[1:] - flux.j[:-1]) / scenario.h, theta, flux


def cfl_dt(q, theta, scenario):
    """``CFL h^2 / max_i rho(L(theta_i) |s''(q_i)|)``."""
    neg_hess = -scenario.entropy.hess(q)
    Lm = scenario.onsager(theta)
    rho = np.max(np.abs(np.linalg.eigvals(Lm @ neg_hess)))
    if not rho > 0:
        return np.inf
    return CFL * scenario.h ** 2 / rho


def step(state, scenario, dt):
    """One explicit Euler step; raises ``StepRejected`` if a cell leaves the domain."""
    dq, _, _ = rhs(state.q, scenario)
    q = state.q + dt * dq
    inside = scenario.entropy.in_domain(q)
    if not np.all(inside):
        bad = int(np.flatnonzero(~inside)[0])
        raise StepRejected(f"cell {bad} left the entropy domain at t={state.t + dt:.6g}")
    try:
        theta = theta_of(scenario, q)
    except DomainError as exc:
        raise StepRejected(str(exc)) from exc
    return HydroState(q, state.t + dt, theta)


@dataclass
class Trajectory:
    scenario: HydroScenario
    states: list
    step_times: np.ndarray
    step_entropy: np.ndarray
    step_totals: np.ndarray
    step_min_production: np.ndarray
    steps: int

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    @property
    def final(self):
        return self.states[-1]


def total_entropy(scenario, q):
    return float(np.sum(scenario.entropy.value(q)) * scenario.h)


def solve(scenario, t_end=None, checkpoints=None, dt_max=None, max_retries=8):
    """Integrate to ``t_end``, stopping exactly on each checkpoint."""
    t_end = scenario.t_end if t_end is None else t_end
    checkpoints = scenario.checkpoints if checkpoints is None else checkpoints
    marks = sorted({float(t) for t in checkpoints if 0 < t < t_end} | {float(t_end)})
    q = scenario.initial_q()
    state = HydroState(q, 0.0, theta_of(scenario, q))
    states = [state]
    times, ent, totals, minprod = [0.0], [total_entropy(scenario, q)], [q.sum(0) * scenario.h], [0.0]
    steps = 0
    for mark in marks:
        while state.t < mark:
            dt = cfl_dt(state.q, state.theta, scenario)
            if dt_max is not None:
                dt = min(dt, dt_max)
            remaining = mark - state.t
            if remaining <= dt * (1 + 1e-12):
                dt = remaining
            flux = face_fluxes(state.theta, scenario)
            for _ in range(max_retries + 1):
                try:
                    new = step(state, scenario, dt)
                    break
                except StepRejected:
                    dt *= 0.5
            else:
                raise ConvergenceError(
                    f"step rejected {max_retries + 1} times at t={state.t:.6g}; "
                    f"q range [{state.q.min():.6g}, {state.q.max():.6g}]")
            if dt == remaining:
                new.t = mark
            state = new
            steps += 1
            times.append(state.t)
            ent.append(total_entropy(scenario, state.q))
            totals.append(state.q.sum(0) * scenario.h)
            minprod.append(float(flux.production.min()))
        states.append(state)
    return Trajectory(scenario, states, np.array(times), np.array(ent), np.array(totals),
                      np.array(minprod), steps)


def entropy_balance(scenario, q):
    """Semi-discrete entropy budget ``dS/dt = production + inflow``.

    Production integrates ``grad theta . j`` with the face weights, which makes
    the identity the exact discrete chain rule.
    """
    dq, theta, flux = rhs(q, scenario)
    dS = float(np.sum(theta * dq) * scenario.h)
    production = float(flux.production @ flux.widths)
    inflow = 0.0
    if scenario.left.kind == "reservoir":
        inflow += float(scenario.left.theta @ flux.j[0])
    if scenario.right.kind == "reservoir":
        inflow -= float(scenario.right.theta @ flux.j[-1])
    return {"dS_dt": dS, "production": production, "inflow": inflow, "outflow": -inflow,
            "residual": abs(dS - production - inflow)}


def entropy_diagnostics(trajectory, tol=1e-12):
    """Entropy history, production field and second-law verdicts."""
    sc = trajectory.scenario
    S = np.array([total_entropy(sc, s.q) for s in trajectory.states])
    production = np.array([face_fluxes(s.theta, sc).production for s in trajectory.states])
    dS = np.diff(trajectory.step_entropy)
    closed = not any(b.kind == "reservoir" for b in (sc.left, sc.right))
    worst_drop = float(dS.min()) if dS.size else 0.0
    report = {
        "times": trajectory.times, "S": S, "production": production,
        "min_production": float(min(production.min(), trajectory.step_min_production.min())),
        "worst_step_entropy_change": worst_drop,
        "conservation_drift": float(np.max(np.abs(trajectory.step_totals - trajectory.step_totals[0])))
        if closed else None,
    }
    report["production_ok"] = report["min_production"] >= -tol
    report["entropy_nondecreasing"] = (worst_drop >= -tol) if closed else None
    balance = entropy_balance(sc, trajectory.final.q)
    report["final_balance"] = balance
    report["violations"] = []
    if not report["production_ok"]:
        report["violations"].append("negative production")
    if report["entropy_nondecreasing"] is False:
        report["violations"].append("entropy decreased")
    return report


# --- steady states --------------------------------------------------------

def _residual(theta_flat, scenario):
    theta = theta_flat.reshape(scenario.M, scenario.n)
    j = face_fluxes(theta, scenario).j
    return (j[1:] - j[:-1]).ravel()


def _colored_jacobian(theta_flat, scenario, rel=1e-7):
    """Block-tridiagonal Jacobian from ``3 n`` colored finite differences."""
    M, n = scenario.M, scenario.n
    size = M * n
    r0 = _residual(theta_flat, scenario)
    rows, cols, vals = [], [], []
    cell = np.arange(size) // n
    comp = np.arange(size) % n
    for color in range(3):
        for k in range(n):
            mask = (cell % 3 == color) & (comp == k)
            dx = rel * (1.0 + np.abs(theta_flat)) * mask
            dr = (_residual(theta_flat + dx, scenario) - r0)
            for col in np.flatnonzero(mask):
                c_cell = cell[col]
                nb = [c for c in (c_cell - 1, c_cell, c_cell + 1) if 0 <= c < M]
                idx = np.concatenate([np.arange(c * n, (c + 1) * n) for c in nb])
                rows.append(idx)
                cols.append(np.full(idx.size, col))
                vals.append(dr[idx] / dx[col])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(size, size))


def _q_of_theta(scenario, theta):
    return -np.asarray(scenario.model.pressure().grad(theta))


def steady_state(scenario, tol=1e-10, max_newton=30, max_relax=2_000_000):
    """Stationary profile between two reservoirs.

    Newton on ``div(L grad theta) = 0`` starting from the linear interpolation
    of the reservoir values; if Newton stalls, pseudo-time relaxation in theta.
    """
    if scenario.left.kind != "reservoir" or scenario.right.kind != "reservoir":
        raise InputError("a steady state needs reservoirs at both ends")
    ta, tb = scenario.left.theta, scenario.right.theta
    s = scenario.x / scenario.length
    theta = ((1 - s)[:, None] * ta + s[:, None] * tb).ravel()
    method, it = "newton", 0
    res = np.max(np.abs(_residual(theta, scenario)))
    try:
        while res >= tol:
            if it >= max_newton:
                raise ConvergenceError("newton did not converge")
            J = _colored_jacobian(theta, scenario)
            delta = spsolve(J.tocsc(), -_residual(theta, scenario))
            if not np.all(np.isfinite(delta)):
                raise ConvergenceError("singular Jacobian")
            theta = theta + delta
            res = np.max(np.abs(_residual(theta, scenario)))
            it += 1
    except ConvergenceError:
        method, it = "relaxation", 0
        theta = ((1 - s)[:, None] * ta + s[:, None] * tb).ravel()
        Lmax = max(np.max(np.abs(np.linalg.eigvalsh(scenario.onsager(theta.reshape(-1, scenario.n))))), 1e-300)
        dtau = 0.2 * scenario.h ** 2 / Lmax
        res = np.inf
        while res >= tol:
            if it >= max_relax:
                raise ConvergenceError(f"relaxation stalled at residual {res:.3g}")
            r = _residual(theta, scenario)
            theta = theta - dtau * r / scenario.h
            res = np.max(np.abs(r))
            it += 1
    theta = theta.reshape(scenario.M, scenario.n)
    q = _q_of_theta(scenario, theta)
    return HydroState(q, np.inf, theta, {"method": method, "iterations": it, "residual": float(res),
                                         "scenario": scenario.name})


# --- scaling --------------------------------------------------------------

def stretch(scenario, lam):
    """Domain ``lam * Omega`` with ``lam * M`` cells and initial data ``q(x / lam)``."""
    lam_i = int(round(lam))
    if lam_i < 1 or abs(lam - lam_i) > 1e-12:
        raise InputError("scale factor must be a positive integer")
    q0 = scenario.q0
    if callable(q0):
        new_q0 = lambda x: q0(x / lam_i)  # noqa: E731
    else:
        new_q0 = np.repeat(np.asarray(q0), lam_i, axis=0)
    return replace(scenario, M=scenario.M * lam_i, length=scenario.length * lam_i, q0=new_q0,
                   t_end=scenario.t_end * lam_i ** scenario.c,
                   checkpoints=tuple(t * lam_i ** scenario.c for t in scenario.checkpoints))


def scale_invariance_check(scenario, lam, t_star=None, tol_factor=10.0):
    """Compare a run with its ``x -> lam x, t -> lam^c t`` image at equal cell width."""
    if scenario.c != 2:
        raise InputError("scale invariance check is defined for c = 2")
    t_star = scenario.t_end if t_star is None else t_star
    base = solve(scenario, t_end=t_star, checkpoints=())
    big = stretch(scenario, lam)
    lam_i = int(round(lam))
    scaled = solve(big, t_end=t_star * lam_i ** scenario.c, checkpoints=())
    coarse = scaled.final.q.reshape(scenario.M, lam_i, scenario.n).mean(axis=1)
    err = float(np.max(np.abs(coarse - base.final.q)))
    tol = tol_factor * scenario.h ** 2
    return {"lambda": lam_i, "t_star": t_star, "max_deviation": err, "tolerance": tol,
            "passed": err <= tol, "base": base.final.q, "scaled": coarse}


def theta_at(source, x, t):
    """``theta(x, t)`` interpolated from a solution, with an identifier of the source.

    ``source`` is a ``Trajectory`` or a ``(HydroState, cell_centers)`` pair; a
    steady state (``t = inf``) covers every ``t``.
    """
    if isinstance(source, Trajectory):
        xs, times, name = source.scenario.x, source.times, source.scenario.name
        if not times[0] - 1e-12 <= t <= times[-1] + 1e-12:
            raise InputError(f"t={t} outside the trajectory span [{times[0]}, {times[-1]}]")
        fields = np.stack([s.theta for s in source.states])
    else:
        state, xs = source
        if np.isfinite(state.t) and abs(t - state.t) > 1e-12:
            raise InputError("a single state covers only its own time")
        times, name = None, state.info.get("scenario", "steady_state")
        fields = state.theta[None]
    if not xs[0] - 1e-12 <= x <= xs[-1] + 1e-12:
        raise InputError(f"x={x} outside the resolved cell centers [{xs[0]:.4g}, {xs[-1]:.4g}]")
    at = np.array([[np.interp(x, xs, f[:, k]) for k in range(f.shape[1])] for f in fields])
    if times is None:
        return at[0], name
    return np.array([np.interp(t, times, at[:, k]) for k in range(at.shape[1])]), name
