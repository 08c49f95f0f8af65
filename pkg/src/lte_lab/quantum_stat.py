"""Finite-volume quantum statistics: Gibbs states, their moments and KMS residuals.

Two backends realize a Gibbs state ``exp(-theta.Q)/Z`` on ``L`` sites:

* ``dense``: commuting many-body charges as matrices, diagonalized once.
* ``free``: quadratic fermions, handled through single-particle modes and the
  correlation matrix ``C = (I + exp(A))^-1`` with ``A = theta_1 h + theta_2 I``.

``theta_1 = 0`` is accepted and read as the ``0+`` (infinite temperature) limit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache, partial

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logsumexp, xlogy

from .errors import DomainError, InputError
from .models import FreeFermionChainModel, free_fermion_pi_infinity, periodic_hopping
from .thermo_core import ControlVariable, as_vector


def _theta(model, theta):
    theta = np.asarray(theta.values if isinstance(theta, ControlVariable) else theta, dtype=float)
    theta = as_vector(theta, model.n)
    if theta.ndim != 1:
        raise InputError("a Gibbs state needs a single control value")
    if theta[0] < 0:
        raise DomainError(f"theta_1 = {theta[0]} < 0 is outside the control space")
    return theta


def _default_backend(model):
    return "free" if isinstance(model, FreeFermionChainModel) else "dense"


class FiniteGibbsState:
    """Gibbs ensemble at control value ``theta`` on ``L`` sites. Immutable."""

    def __init__(self, model, theta, L, backend=None):
        self.model = model
        self.theta = _theta(model, theta)
        self.L = int(L)
        self.backend = backend or _default_backend(model)
        if self.backend == "free":
            if not isinstance(model, FreeFermionChainModel):
                raise InputError(f"{type(model).__name__} has no free-fermion realization")
            if self.L < 1:
                raise InputError("need at least one site")
        elif self.backend == "dense":
            self._realization = model.build_finite_model(self.L, backend="dense")
            if len(self._realization.charges) != model.n:
                raise InputError("charge count does not match the model dimension")
        else:
            raise InputError(f"unknown backend {self.backend!r}")

    # --- free-fermion internals ------------------------------------------
    @cached_property
    def mode_energies(self):
        """Single-particle energies ``eps(2 pi j / L)`` of the ring."""
        p = 2.0 * np.pi * np.arange(self.L) / self.L
        return self.model.dispersion(p)

    @cached_property
    def occupations(self):
        t1, t2 = self.theta
        return expit(-(t1 * self.mode_energies + t2))

    @cached_property
    def correlation_matrix(self):
        """``C_ij = <c_i^+ c_j>``; eigenvalues are the mode occupations."""
        if self.backend != "free":
            raise InputError("correlation matrix exists only for the free backend")
        h = periodic_hopping(self.L, self.model.J)
        t1, t2 = self.theta
        w, V = np.linalg.eigh(t1 * h + t2 * np.eye(self.L))
        return (V * expit(-w)) @ V.T

    # --- dense internals ---------------------------------------------------
    @cached_property
    def _spectral(self):
        A = sum(t * Q for t, Q in zip(self.theta, self._realization.charges))
        w, V = np.linalg.eigh(A)
        log_z = float(logsumexp(-w))
        p = np.exp(-w - log_z)
        charges = [V.conj().T @ Q @ V for Q in self._realization.charges]
        return w, V, p, log_z, charges

    @property
    def density_matrix(self):
        if self.backend != "dense":
            raise InputError("density matrix exists only for the dense backend")
        _, V, p, _, _ = self._spectral
        return (V * p) @ V.conj().T

    @property
    def charges(self):
        return self._realization.charges

    # --- thermodynamics ----------------------------------------------------
    @cached_property
    def log_z(self):
        if self.backend == "free":
            t1, t2 = self.theta
            return float(np.sum(np.logaddexp(0.0, -(t1 * self.mode_energies + t2))))
        return self._spectral[3]

    @property
    def pi(self):
        return self.log_z / self.L


def gibbs_state(model, theta, L, backend=None):
    return FiniteGibbsState(model, theta, L, backend)


def state_map(model, L, backend=None):
    """The control-value -> Gibbs-state factory used to build local states."""
    return partial(FiniteGibbsState, model, L=L, backend=backend)


def pi_L(model, theta, L, backend=None):
    """Finite-volume reduced pressure ``ln Tr exp(-theta.Q) / L``."""
    return FiniteGibbsState(model, theta, L, backend).pi


def _pi_L_mp(model, theta, L, dps):
    import mpmath as mp

    with mp.workdps(dps):
        t1, t2, J = (mp.mpf(float(x)) for x in (*theta, model.J))
        total = mp.fsum(
            mp.log1p(mp.exp(-(t1 * (-2 * J * mp.cos(2 * mp.pi * j / L)) + t2)))
            for j in range(L)
        )
        return total / L


@lru_cache(maxsize=32)
def _pi_inf_cached(J, t1, t2, dps):
    return free_fermion_pi_infinity(FreeFermionChainModel(J=J), (t1, t2), dps=dps)


def richardson_limit(L_list, values):
    """Extrapolate ``P_L = P + c L^-p`` with ``p`` fitted from the last three points.

    Returns ``(limit, p)``; ``p`` is ``None`` when the increments are already at
    roundoff or do not have a consistent sign, in which case the last value is kept.
    """
    (L1, L2, L3), (P1, P2, P3) = L_list[-3:], values[-3:]
    d1, d2 = P2 - P1, P3 - P2
    scale = abs(P3) + 1e-300
    if abs(d2) <= 64 * np.finfo(float).eps * scale or d1 * d2 <= 0 or abs(d2) >= abs(d1):
        return P3, None
    ratio = d1 / d2

    def mismatch(p):
        return (L1 ** -p - L2 ** -p) / (L2 ** -p - L3 ** -p) - ratio

    try:
        p = brentq(mismatch, 1e-3, 200.0)
    except ValueError:
        return P3, None
    return P3 + d2 * L3 ** -p / (L2 ** -p - L3 ** -p), p


def pi_convergence(model, theta, L_list, dps=None):
    """``pi_L`` along an increasing list of volumes, with its extrapolated limit.

    ``dps`` switches the free-fermion path to ``mpmath``. ``dps="auto"`` sizes
    the precision from the decay rate seen in double precision, so that the
    deviation at the largest ``L`` is still resolved.
    """
    L_list = [int(L) for L in L_list]
    if any(b <= a for a, b in zip(L_list, L_list[1:])):
        raise InputError("L_list must be strictly ascending")
    theta = _theta(model, theta)
    free = isinstance(model, FreeFermionChainModel)
    if dps is not None and not free:
        raise InputError("extended precision is available only for free fermions")

    if dps == "auto":
        dps = _auto_dps(model, theta, L_list)
    if dps is None:
        values = [pi_L(model, theta, L) for L in L_list]
        ref = free_fermion_pi_infinity(model, theta) if free else None
        deviations = [abs(v - ref) for v in values] if free else None
    else:
        import mpmath as mp

        ref = _pi_inf_cached(float(model.J), float(theta[0]), float(theta[1]), int(dps))
        mp_vals = [_pi_L_mp(model, theta, L, dps) for L in L_list]
        with mp.workdps(dps):
            # kept as mpf: most of these underflow a double
            deviations = [abs(v - ref) for v in mp_vals]
            log10_dev = [float(mp.log10(d)) if d else -np.inf for d in deviations]
        values = [float(v) for v in mp_vals]
        ref = float(ref)

    if dps is None and free:
        log10_dev = [float(np.log10(d)) if d else -np.inf for d in deviations]
    report = {"L": L_list, "pi_L": values, "reference": ref, "deviation": deviations, "dps": dps}
    if free:
        report["log10_deviation"] = log10_dev
    if len(L_list) >= 3:
        report["extrapolated"], report["fitted_power"] = richardson_limit(L_list, values)
    increments = [abs(b - a) for a, b in zip(values, values[1:])]
    report["increments"] = increments
    seq = deviations if deviations is not None else increments
    report["monotone"] = all(b < a for a, b in zip(seq, seq[1:]))
    report["non_monotone_at"] = [L_list[i + 1] for i, (a, b) in enumerate(zip(seq, seq[1:])) if b >= a]
    return report


def _auto_dps(model, theta, L_list):
    probe = [L for L in (4, 8, 12, 16) if L < L_list[-1]] or [2, 4]
    ref = free_fermion_pi_infinity(model, theta)
    devs = [abs(pi_L(model, theta, L) - ref) for L in probe]
    pairs = [(La, Lb, a, b) for La, Lb, a, b in zip(probe, probe[1:], devs, devs[1:])
             if a > 1e-13 and b > 1e-13 and b < a]
    rate = max((np.log(a / b) / (Lb - La) for La, Lb, a, b in pairs), default=1.0)
    return int(rate * L_list[-1] / np.log(10)) + 40


# --- moments -------------------------------------------------------------

def gibbs_moments(state):
    """``(<Q>/L, Cov(Q)/L)`` of a Gibbs state."""
    L = state.L
    if state.backend == "free":
        f = state.occupations
        c = np.stack([state.mode_energies, np.ones(L)])
        mean = c @ f
        cov = (c * (f * (1.0 - f))) @ c.T
        return mean / L, cov / L
    _, _, p, _, charges = state._spectral
    mean = np.array([np.real(np.einsum("i,ii->", p, Q)) for Q in charges])
    n = len(charges)
    cov = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            second = np.real(np.einsum("i,ij,ji->", p, charges[i], charges[j]))
            cov[i, j] = cov[j, i] = second - mean[i] * mean[j]
    return mean / L, cov / L


def _richardson_derivatives(f, x, h):
    """Gradient and Hessian of a smooth scalar ``f`` by central differences
    with one Richardson step, error ``O(h^4)``."""
    n = x.size
    f0 = f(x)

    def stencil(step):
        g = np.empty(n)
        H = np.empty((n, n))
        E = np.eye(n) * step
        fp = [f(x + E[i]) for i in range(n)]
        fm = [f(x - E[i]) for i in range(n)]
        for i in range(n):
            g[i] = (fp[i] - fm[i]) / (2 * step)
            H[i, i] = (fp[i] - 2 * f0 + fm[i]) / step ** 2
            for j in range(i + 1, n):
                H[i, j] = H[j, i] = (
                    f(x + E[i] + E[j]) - f(x + E[i] - E[j])
                    - f(x - E[i] + E[j]) + f(x - E[i] - E[j])
                ) / (4 * step ** 2)
        return g, H

    g1, H1 = stencil(h)
    g2, H2 = stencil(2 * h)
    return (4 * g1 - g2) / 3, (4 * H1 - H2) / 3


def moment_duality_check(model, theta, L, backend=None, step=1e-3):
    """Compare moments with ``-d pi_L/d theta`` and ``d^2 pi_L/d theta^2``."""
    state = FiniteGibbsState(model, theta, L, backend)
    q, cov = gibbs_moments(state)
    g, H = _richardson_derivatives(lambda t: pi_L(model, t, L, state.backend), state.theta, step)
    return {
        "q": q, "cov": cov, "fd_grad": g, "fd_hess": H,
        "grad_residual": float(np.max(np.abs(q + g))),
        "hess_residual": float(np.max(np.abs(cov - H))),
    }


def entropy_density_L(state):
    """Von Neumann entropy per site."""
    if state.backend == "free":
        f = state.occupations
        return float(-np.sum(xlogy(f, f) + xlogy(1.0 - f, 1.0 - f)) / state.L)
    p = state._spectral[2]
    return float(-np.sum(xlogy(p, p)) / state.L)


def gibbs_identity_residual(state):
    q, _ = gibbs_moments(state)
    return abs(entropy_density_L(state) - state.pi - float(state.theta @ q))


# --- variational principle ----------------------------------------------

def _von_neumann(rho):
    w = np.clip(np.linalg.eigvalsh(rho), 0.0, None)
    return float(-np.sum(xlogy(w, w)))


def random_pure_state(dim, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    v /= np.linalg.norm(v)
    return np.outer(v, v.conj())


def free_energy_functional(state, rho):
    """``s(rho) - theta.q(rho)`` per site for an arbitrary density matrix."""
    A = sum(t * Q for t, Q in zip(state.theta, state.charges))
    return (_von_neumann(rho) - float(np.real(np.trace(rho @ A)))) / state.L


def gts_variational_check(model, theta, L, lambdas=(0.0, 0.1, 0.5), sigma=None, seed=0):
    """Mix the Gibbs state with ``sigma`` and report the drop of ``s - theta.q``.

    The gap ``pi_L - F(rho')`` equals the relative entropy ``S(rho'||rho)/L``.
    """
    state = FiniteGibbsState(model, theta, L, backend="dense")
    rho = state.density_matrix
    if sigma is None:
        sigma = random_pure_state(rho.shape[0], seed)
    sigma = np.asarray(sigma)
    if sigma.shape != rho.shape:
        raise InputError("perturbation has the wrong dimension")
    rows = []
    for lam in lambdas:
        mixed = (1.0 - lam) * rho + lam * sigma
        F = free_energy_functional(state, mixed)
        rows.append({"lambda": float(lam), "F": F, "gap": state.pi - F})
    return {"pi_L": state.pi, "rows": rows,
            "min_gap": min(r["gap"] for r in rows)}


# --- dynamics and KMS ----------------------------------------------------

def build_effective_hamiltonian(model, theta, L, backend=None):
    """``theta.Q / theta_1``; for the free backend the single-particle matrix."""
    theta = _theta(model, theta)
    if theta[0] <= 0:
        raise DomainError("the effective Hamiltonian needs theta_1 > 0")
    backend = backend or _default_backend(model)
    if backend == "free":
        if not isinstance(model, FreeFermionChainModel):
            raise InputError(f"{type(model).__name__} has no free-fermion realization")
        h = periodic_hopping(L, model.J)
        return (theta[0] * h + theta[1] * np.eye(L)) / theta[0]
    real = model.build_finite_model(L, backend="dense")
    return sum(t * Q for t, Q in zip(theta, real.charges)) / theta[0]


@dataclass
class KMSCheckReport:
    beta: float
    entries: list = field(default_factory=list)

    @property
    def max_residual(self):
        return max((e[3] for e in self.entries), default=0.0)

    def as_dict(self):
        return {"beta": self.beta, "max_residual": self.max_residual,
                "entries": [{"A": a, "B": b, "tau": t, "residual": r} for a, b, t, r in self.entries]}


def _as_labelled(obs, default):
    if isinstance(obs, dict):
        return list(obs.items())
    return [(default, obs)]


def kms_sides(H, beta, A, B, tau):
    """``(Tr rho alpha_tau(A) B, Tr rho B alpha_{tau + i beta}(A))`` by spectral decomposition."""
    E, V = np.linalg.eigh(H)
    E = E - E[0]
    w = np.exp(-beta * E)
    rho = (V * (w / w.sum())) @ V.conj().T
    At = V.conj().T @ A @ V

    def alpha(z):
        phase = np.exp(1j * z * (E[:, None] - E[None, :]))
        return V @ (At * phase) @ V.conj().T

    lhs = np.trace(rho @ alpha(tau) @ B)
    rhs = np.trace(rho @ B @ alpha(tau + 1j * beta))
    return lhs, rhs


def kms_check(H, beta, A, B, taus):
    """KMS residuals for every (A, B, tau) combination.

    ``A`` and ``B`` are matrices or ``{label: matrix}`` dicts.
    """
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise InputError("H must be a square matrix")
    if not np.allclose(H, H.conj().T, atol=1e-12):
        raise InputError("H must be Hermitian")
    if not beta > 0:
        raise DomainError("beta must be positive")
    report = KMSCheckReport(float(beta))
    for la, a in _as_labelled(A, "A"):
        for lb, b in _as_labelled(B, "B"):
            if np.shape(a) != H.shape or np.shape(b) != H.shape:
                raise InputError("observable dimension does not match H")
            for tau in taus:
                lhs, rhs = kms_sides(H, beta, np.asarray(a), np.asarray(b), float(tau))
                report.entries.append((la, lb, float(tau), float(abs(lhs - rhs))))
    return report


# --- thermodynamic completeness ------------------------------------------

def completeness_check(model, theta_grid):
    """Injectivity of ``theta -> q`` and witnesses that no single density separates states."""
    pressure = model.pressure()
    grid = np.asarray(theta_grid, dtype=float).reshape(-1, model.n)
    hess = np.asarray(pressure.hess(grid)).reshape(-1, model.n, model.n)
    min_eig = float(np.min(np.linalg.eigvalsh(hess)))
    report = {"min_eigenvalue": min_eig, "injective": min_eig > 0}
    if model.n == 1:
        report["subset_witnesses"] = "vacuous"
        return report

    def density(t):
        return -np.asarray(pressure.grad(np.asarray(t, dtype=float)))

    witnesses = {}
    base = grid[0]
    q0 = density(base)
    for k in range(model.n):
        other = 1 - k if model.n == 2 else None
        found = None
        for shift in (1.0, 0.5, -0.5, 2.0):
            moved = base.copy()
            moved[other] += shift

            def mismatch(x, k=k, moved=moved):
                t = moved.copy()
                t[k] = x
                return density(t)[k] - q0[k]

            lo, hi = (1e-3, 20.0) if k == 0 else (-20.0, 20.0)
            try:
                x = brentq(mismatch, lo, hi, xtol=1e-12)
            except ValueError:
                continue
            cand = moved.copy()
            cand[k] = x
            q1 = density(cand)
            if abs(q1[other] - q0[other]) > 1e-6:
                found = {"theta": base.tolist(), "theta_prime": cand.tolist(),
                         "q": q0.tolist(), "q_prime": q1.tolist()}
                break
        witnesses[f"equal_q{k + 1}"] = found
    report["subset_witnesses"] = "found" if all(witnesses.values()) else "inconclusive"
    report["witnesses"] = witnesses
    return report


# --- local restriction ---------------------------------------------------

@dataclass(frozen=True)
class LocalGibbsProfile:
    """A control profile ``x -> theta(x)`` on the ring ``x = i/L``.

    Bond couplings carry the arithmetic mean of the endpoint ``theta_1``.
    """

    theta: callable
    L: int
    J: float = 1.0

    def site_thetas(self):
        x = np.arange(self.L) / self.L
        t = np.asarray(self.theta(x), dtype=float)
        return np.broadcast_to(t.T if t.shape[0] == 2 else t, (self.L, 2))

    def generator(self):
        """The quadratic form ``A`` with ``rho ~ exp(-c^+ A c)``."""
        t = self.site_thetas()
        L = self.L
        i = np.arange(L)
        j = (i + 1) % L
        A = np.diag(t[:, 1]).astype(float)
        bond = -self.J * 0.5 * (t[i, 0] + t[j, 0])
        np.add.at(A, (i, j), bond)
        np.add.at(A, (j, i), bond)
        return A

    def correlation_matrix(self):
        w, V = np.linalg.eigh(self.generator())
        return (V * expit(-w)) @ V.T


def _homogeneous_local_values(theta, L, J):
    p = 2.0 * np.pi * np.arange(L) / L
    eps = -2.0 * J * np.cos(p)
    f = expit(-(theta[0] * eps + theta[1]))
    return float(np.mean(f)), float(np.mean(eps * f))


def local_restriction_check(profile, window, centers):
    """Window-averaged density and bond energy against the homogeneous Gibbs state at ``theta(x)``."""
    L, window = profile.L, int(window)
    if window < 1:
        raise InputError("window must contain at least one site")
    if window / L > 0.1:
        raise InputError(f"window of {window} sites is not small against L={L}")
    C = profile.correlation_matrix()
    t = profile.site_thetas()
    rows = []
    for x in centers:
        c = int(round(x * L)) % L
        sites = (c - window // 2 + np.arange(window)) % L
        nxt = (sites + 1) % L
        density = float(np.mean(C[sites, sites]))
        energy = float(np.mean(-profile.J * (C[sites, nxt] + C[nxt, sites])))
        ref_n, ref_e = _homogeneous_local_values(t[c], L, profile.J)
        rows.append({"x": float(x), "site": c, "theta": t[c].tolist(),
                     "density": density, "energy": energy,
                     "density_deviation": abs(density - ref_n),
                     "energy_deviation": abs(energy - ref_e)})
    return {"L": L, "window": window, "rows": rows}


__all__ = [
    "FiniteGibbsState", "LocalGibbsProfile", "KMSCheckReport", "gibbs_state", "state_map", "pi_L", "pi_convergence",
    "richardson_limit", "gibbs_moments", "moment_duality_check", "entropy_density_L",
    "gibbs_identity_residual", "free_energy_functional", "gts_variational_check",
    "random_pure_state", "build_effective_hamiltonian", "kms_sides", "kms_check",
    "completeness_check", "local_restriction_check",
]
