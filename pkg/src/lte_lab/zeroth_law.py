"""A small probe thermalizing against a bath at the local temperature.

The bath enters only through detailed-balance rates: every coupling operator
is split into Bohr components ``A(w)`` with ``[H, A(w)] = -w A(w)``; emission
(``w > 0``) runs at ``gamma(w)``, absorption at ``gamma(w) exp(-beta w)``.
The Gibbs state of the probe is then a fixed point of the generator.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .errors import DomainError, InputError, IntegratorError
from .hydro import theta_at

MAX_DIM = 8
DEGENERACY_TOL = 1e-9
BOHR_TOL = 1e-9


def _hermitian(M, what):
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError(f"{what} must be square")
    if not np.allclose(M, M.conj().T, atol=1e-12):
        raise InputError(f"{what} must be Hermitian")
    return M


@dataclass(frozen=True)
class ProbeSystem:
    H: np.ndarray
    couplings: tuple
    name: str = "probe"

    def __post_init__(self):
        H = _hermitian(self.H, "probe Hamiltonian")
        if H.shape[0] > MAX_DIM:
            raise InputError(f"probe dimension {H.shape[0]} exceeds {MAX_DIM}")
        E = np.linalg.eigvalsh(H)
        if np.min(np.diff(E)) < DEGENERACY_TOL:
            raise InputError("degenerate probe spectra are not supported")
        couplings = tuple(_hermitian(A, "coupling operator") for A in self.couplings)
        if not couplings or any(A.shape != H.shape for A in couplings):
            raise InputError("need at least one coupling operator of the probe's dimension")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "couplings", couplings)

    @property
    def dim(self):
        return self.H.shape[0]

    @property
    def spectrum(self):
        return np.linalg.eigh(self.H)


def qubit_probe(omega=1.0, name="qubit"):
    """``H = diag(0, omega)`` coupled through ``sigma_x``."""
    return ProbeSystem(np.diag([0.0, omega]), (np.array([[0.0, 1.0], [1.0, 0.0]]),), name)


def random_probe(dim, seed=0, name=None):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    Y = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return ProbeSystem(X + X.conj().T, (Y + Y.conj().T,), name or f"random{dim}")


def flat_profile(gamma0=1.0):
    """Emission rate independent of the Bohr frequency."""
    return lambda omega: gamma0


def gibbs(H, beta):
    E, V = np.linalg.eigh(H)
    w = np.exp(-beta * (E - E[0]))
    return (V * (w / w.sum())) @ V.conj().T


def bohr_components(probe):
    """``[(k, omega, A_k(omega))]`` with ``A = sum_omega A(omega)``."""
    E, V = probe.spectrum
    gaps = E[None, :] - E[:, None]  # gaps[a, b] = E_b - E_a: lowering from b to a
    out = []
    for k, A in enumerate(probe.couplings):
        At = V.conj().T @ A @ V
        used = np.zeros(gaps.shape, dtype=bool)
        for a, b in zip(*np.nonzero(np.abs(At) > 0)):
            if used[a, b]:
                continue
            mask = (np.abs(gaps - gaps[a, b]) < BOHR_TOL) & ~used
            used |= mask
            comp = np.where(mask, At, 0.0)
            if np.abs(comp).max() > 0:
                out.append((k, float(gaps[a, b]), V @ comp @ V.conj().T))
    return out


def _superop(left, right):
    """Matrix of ``X -> left X right`` on column-stacked ``vec(X)``."""
    return np.kron(right.T, left)


def _vec(rho):
    return rho.reshape(-1, order="F")


def _unvec(v, d):
    return v.reshape(d, d, order="F")


@dataclass
class ThermalGenerator:
    probe: ProbeSystem
    beta: float
    jumps: list = field(default_factory=list)  # (k, omega, A(omega), rate)

    def __post_init__(self):
        d = self.probe.dim
        eye = np.eye(d)
        S = -1j * (_superop(self.probe.H, eye) - _superop(eye, self.probe.H))
        for _, _, A, rate in self.jumps:
            AdA = A.conj().T @ A
            S += rate * (_superop(A, A.conj().T) - 0.5 * _superop(AdA, eye) - 0.5 * _superop(eye, AdA))
        self.matrix = S

    def __call__(self, rho):
        d = self.probe.dim
        return _unvec(self.matrix @ _vec(np.asarray(rho, dtype=complex)), d)

    def gibbs(self):
        return gibbs(self.probe.H, self.beta)

    def stationary_residual(self):
        return float(np.abs(self(self.gibbs())).max())

    def spectral_gap(self):
        ev = np.sort(np.linalg.eigvals(self.matrix).real)[::-1]
        return float(-ev[1])

    def detailed_balance_residual(self):
        """Max ``|gamma(-w) / gamma(w) - exp(-beta w)|`` over paired components."""
        rates = {}
        for k, w, _, r in self.jumps:
            rates[(k, round(w / BOHR_TOL))] = (w, r)
        worst = 0.0
        for (k, key), (w, r) in rates.items():
            if w > 0 and (k, round(-w / BOHR_TOL)) in rates:
                worst = max(worst, abs(rates[(k, round(-w / BOHR_TOL))][1] / r - np.exp(-self.beta * w)))
        return worst


def build_davies_generator(probe, beta, base_rate=None, dephasing=None):
    """Davies-type generator with detailed-balance rates at inverse temperature ``beta``."""
    if not beta > 0:
        raise DomainError("beta must be positive")
    base_rate = base_rate or flat_profile(1.0)
    jumps = []
    for k, omega, A in bohr_components(probe):
        if abs(omega) < BOHR_TOL:
            rate = base_rate(0.0) if dephasing is None else dephasing
        elif omega > 0:
            rate = base_rate(omega)
        else:
            rate = base_rate(-omega) * np.exp(beta * omega)
        if rate < 0:
            raise InputError("rates must be nonnegative")
        jumps.append((k, omega, A, float(rate)))
    return ThermalGenerator(probe, float(beta), jumps)


def _check_density(rho, d):
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (d, d):
        raise InputError("initial state has the wrong dimension")
    if not np.allclose(rho, rho.conj().T, atol=1e-12) or abs(np.trace(rho) - 1) > 1e-12:
        raise InputError("initial state must be Hermitian with unit trace")
    if np.linalg.eigvalsh(rho).min() < -1e-12:
        raise InputError("initial state must be positive")
    return rho


def _checked(rho, floor=-1e-10):
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < floor:
        raise IntegratorError("evolved state lost positivity")
    return rho


def evolve(generator, rho0, tau):
    """``exp(tau L) rho0`` from the dense Liouvillian."""
    d = generator.probe.dim
    rho0 = _check_density(rho0, d)
    if tau == 0:
        return rho0.copy()
    return _checked(_unvec(expm(tau * generator.matrix) @ _vec(rho0), d))


def evolve_grid(generator, rho0, taus):
    """States on a uniform grid starting at 0, by repeated one-step propagation."""
    d = generator.probe.dim
    rho0 = _check_density(rho0, d)
    taus = np.asarray(taus, dtype=float)
    steps = np.diff(taus)
    if taus[0] != 0 or np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-12, atol=0):
        raise InputError("tau grid must be uniform and start at 0")
    P = expm(steps[0] * generator.matrix)
    v = _vec(rho0)
    out = [rho0]
    for _ in steps:
        v = P @ v
        out.append(_checked(_unvec(v, d)))
    return out


def trace_distance(a, b):
    return 0.5 * float(np.abs(np.linalg.eigvalsh(a - b)).sum())


def fit_decay_rate(taus, distances, floor=1e-11):
    """Exponential rate from a log-linear fit over the part of ``D(tau)`` above ``floor``."""
    taus, distances = np.asarray(taus), np.asarray(distances)
    keep = distances > floor
    if keep.sum() < 3:
        return None
    return float(-np.polyfit(taus[keep], np.log(distances[keep]), 1)[0])


def thermalization_check(probe, beta, rho0, tau_max, n_grid=400, base_rate=None, tol=1e-6):
    gen = build_davies_generator(probe, beta, base_rate)
    G = gen.gibbs()
    taus = np.linspace(0.0, tau_max, n_grid + 1)
    states = evolve_grid(gen, rho0, taus)
    D = np.array([trace_distance(s, G) for s in states])
    final = states[-1]
    E, V = probe.spectrum
    pops = np.real(np.einsum("ia,ij,ja->a", V.conj(), final, V))
    report = {
        "beta": float(beta), "probe": probe.name, "tau": taus, "distance": D,
        "final_distance": float(D[-1]),
        "monotone": bool(np.all(np.diff(D) <= 1e-12)),
        "trace_error": float(max(abs(np.trace(s) - 1) for s in states)),
        "hermiticity_error": float(max(np.abs(s - s.conj().T).max() for s in states)),
        "stationary_residual": gen.stationary_residual(),
        "spectral_gap": gen.spectral_gap(),
        "fitted_rate": fit_decay_rate(taus, D),
        "energies": E, "populations": pops, "final_state": final,
    }
    report["converged"] = report["final_distance"] < tol
    return report


class BoltzmannFit(BaseEstimator):
    """Read a temperature off populations: ``ln p = -beta E - ln Z``.

    ``fit(E, p)`` with energies as an ``(d, 1)`` array; ``predict(E)`` returns
    Boltzmann populations at the fitted ``beta_``.
    """

    def fit(self, X, y):
        X = check_array(X, ensure_min_samples=2)
        y = column_or_1d(y)
        if X.shape[1] != 1 or np.any(y <= 0):
            raise InputError("need one energy column and positive populations")
        slope, icpt = np.polyfit(X[:, 0], np.log(y), 1)
        self.beta_ = float(-slope)
        self.log_z_ = float(-icpt)
        return self

    def predict(self, X):
        check_is_fitted(self, "beta_")
        X = check_array(X)
        w = np.exp(-self.beta_ * (X[:, 0] - X[:, 0].min()))
        return w / w.sum()


def local_probe_scenario(source, x, t, probe, rho0=None, tau_max=20.0, n_grid=400, base_rate=None):
    """Thermalize ``probe`` at ``beta = theta_1(x, t)`` read from a hydro solution.

    ``source`` is a ``Trajectory`` or a ``(HydroState, cell_centers)`` pair; a
    steady state (``t = inf``) covers every ``t``.
    """
    theta, hydro_id = theta_at(source, x, t)
    beta = float(theta[0])
    if beta <= 0:
        raise DomainError(f"theta_1 = {beta} at x={x} is not a temperature")
    if rho0 is None:
        rho0 = np.eye(probe.dim) / probe.dim
    report = thermalization_check(probe, beta, rho0, tau_max, n_grid, base_rate)
    E = report["energies"]
    fit = BoltzmannFit().fit(E[:, None], np.clip(report["populations"], 1e-300, None))
    report.update({"x": float(x), "t": float(t), "local_beta": beta, "local_temperature": 1.0 / beta,
                   "fitted_beta": fit.beta_, "hydro": hydro_id})
    if not report["converged"]:
        report["failure"] = f"not converged by tau={tau_max}; spectral gap {report['spectral_gap']:.4g}"
    return report


__all__ = [
    "ProbeSystem", "ThermalGenerator", "BoltzmannFit", "qubit_probe", "random_probe",
    "flat_profile", "gibbs", "bohr_components", "build_davies_generator", "evolve",
    "evolve_grid", "trace_distance", "fit_decay_rate", "thermalization_check",
    "local_probe_scenario",
]
