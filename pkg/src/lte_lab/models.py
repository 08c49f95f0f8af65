"""Catalog of exactly solvable reference models.

Every model exposes ``entropy()`` and ``pressure()`` (thermo_core contracts)
and, where a microscopic realization exists, ``build_finite_model(L)``.

==================  ===  ===============================  ======================
model               n    q                                finite realization
==================  ===  ===============================  ======================
ParamagnetModel     1    energy density                   dense, product of qubits
QuadraticModel      1    generic density                  none (macroscopic toy)
FreeFermionChain    2    (energy, particle density)       hopping matrix or dense
SpinChainEDModel    2    (energy, z-magnetization)        dense XXZ ring
DoubleWellModel     1    generic density                  none (coexistence toy)
==================  ===  ===============================  ======================
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad
from scipy.special import expit, xlogy

from .errors import CapacityError, ConvergenceError, DomainError, InputError
from .thermo_core import (
    EntropyFunction,
    ReducedPressure,
    as_vector,
    concave_envelope,
    conjugate_pressure,
    legendre_transform,
)

ED_MAX_DIM = 4096


def _log2cosh(x):
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax))


# --- finite realizations ------------------------------------------------------

@dataclass(frozen=True)
class DenseRealization:
    """Commuting conserved charges as dense Hermitian matrices."""

    charges: tuple
    L: int
    labels: tuple

    @property
    def dim(self):
        return self.charges[0].shape[0]

    def commutator_norm(self):
        worst = 0.0
        for i, A in enumerate(self.charges):
            for B in self.charges[i + 1:]:
                worst = max(worst, float(np.abs(A @ B - B @ A).max()))
        return worst


@dataclass(frozen=True)
class FreeFermionRealization:
    """Single-particle hopping matrix ``h`` of a periodic chain."""

    h: np.ndarray
    L: int

    def single_particle_energies(self):
        return np.linalg.eigvalsh(self.h)


def _kron_chain(ops):
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), ops)


def _site_op(op, i, L, fill=None):
    eye = sp.identity(2, format="csr")
    fill = eye if fill is None else fill
    return _kron_chain([fill] * i + [op] + [eye] * (L - i - 1))


def _check_capacity(L):
    if L < 1:
        raise InputError("need at least one site")
    if 2 ** L > ED_MAX_DIM:
        raise CapacityError(f"2^{L} exceeds the dense capacity {ED_MAX_DIM}")


def periodic_hopping(L, J):
    """``h_{i,i+1} = h_{i+1,i} = -J`` on a ring (a 2-site ring carries both bonds)."""
    h = np.zeros((L, L))
    i = np.arange(L)
    np.add.at(h, (i, (i + 1) % L), -J)
    np.add.at(h, ((i + 1) % L, i), -J)
    return h


def fermion_operators(L):
    """Jordan-Wigner annihilators ``c_0..c_{L-1}`` as sparse matrices."""
    a = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
    z = sp.csr_matrix(np.diag([1.0, -1.0]))
    return [_site_op(a, i, L, fill=z) for i in range(L)]


def dense_quadratic_charges(h):
    """Many-body ``(H, N)`` for ``H = sum_ij h_ij c_i^+ c_j``."""
    L = h.shape[0]
    _check_capacity(L)
    c = fermion_operators(L)
    H = sp.csr_matrix((2 ** L, 2 ** L))
    N = sp.csr_matrix((2 ** L, 2 ** L))
    for i in range(L):
        N = N + c[i].T @ c[i]
        for j in range(L):
            if h[i, j] != 0.0:
                H = H + h[i, j] * (c[i].T @ c[j])
    return H.toarray(), N.toarray()


# --- models -----------------------------------------------------------------

@dataclass(frozen=True)
class ParamagnetModel:
    """Independent two-level sites with levels ``+-eps``; ``pi = ln 2cosh(theta eps)``."""

    eps: float = 1.0
    name = "paramagnet"
    n = 1

    def entropy(self):
        eps = self.eps

        def value(q):
            x = q[..., 0] / eps
            up, dn = 0.5 * (1 + x), 0.5 * (1 - x)
            return -(xlogy(up, up) + xlogy(dn, dn))

        def grad(q):
            return -np.arctanh(q / eps) / eps

        def hess(q):
            x = q[..., 0] / eps
            return (-1.0 / (eps ** 2 * (1 - x * x)))[..., None, None]

        return EntropyFunction(value, grad, hess, bounds=[(-eps, eps)], open_domain=True,
                               name=self.name)

    def pressure(self):
        eps = self.eps
        return ReducedPressure(
            lambda t: _log2cosh(t[..., 0] * eps),
            lambda t: eps * np.tanh(t * eps),
            lambda t: (eps ** 2 / np.cosh(t[..., 0] * eps) ** 2)[..., None, None],
            n=1, name=self.name)

    def build_finite_model(self, L, backend="dense"):
        _check_capacity(L)
        z = sp.csr_matrix(np.diag([1.0, -1.0]))
        H = sum(_site_op(z, i, L) for i in range(L)) * self.eps
        return DenseRealization((H.toarray(),), L, ("H",))


@dataclass(frozen=True)
class QuadraticModel:
    """``s(q) = -q^2/2`` on ``[lo, hi]``; macroscopic toy without a microscopic realization."""

    lo: float = -3.0
    hi: float = 3.0
    name = "quadratic"
    n = 1
    thermal = False  # q is a generic density, theta_1 carries no temperature meaning

    def entropy(self):
        return EntropyFunction(lambda q: -0.5 * q[..., 0] ** 2, lambda q: -q,
                               lambda q: -np.ones(q.shape + (1,)),
                               bounds=[(self.lo, self.hi)], name=self.name)

    def pressure(self):
        lo, hi = self.lo, self.hi

        def value(t):
            q = np.clip(-t[..., 0], lo, hi)
            return -0.5 * q ** 2 - t[..., 0] * q

        def grad(t):
            return -np.clip(-t, lo, hi)

        def hess(t):
            inside = (-t[..., 0] > lo) & (-t[..., 0] < hi)
            return inside.astype(float)[..., None, None]

        return ReducedPressure(value, grad, hess, n=1, name=self.name)


@dataclass(frozen=True)
class DoubleWellModel:
    """Concave envelope of ``s0(q) = -(q^2-1)^2`` on ``[-2, 2]``: flat on ``[-1, 1]``."""

    n_grid: int = 4001
    name = "double_well"
    n = 1
    thermal = False

    @staticmethod
    def raw(q):
        return -(q * q - 1.0) ** 2

    @staticmethod
    def raw_grad(q):
        return -4.0 * q * (q * q - 1.0)

    def entropy(self):
        grid = np.linspace(-2.0, 2.0, self.n_grid)
        return concave_envelope(grid, self.raw(grid), raw=self.raw, raw_grad=self.raw_grad,
                                name=self.name)

    def pressure(self):
        return conjugate_pressure(self.entropy())


@dataclass(frozen=True)
class FreeFermionChainModel:
    """Spinless fermions hopping on a ring, ``eps(p) = -2J cos p``; ``q = (e, n)``.

    The infinite-volume pressure is the momentum integral
    ``(1/2pi) int ln(1 + exp(-(theta_1 eps(p) + theta_2))) dp``.
    """

    J: float = 1.0
    name = "free_fermion"
    n = 2

    def dispersion(self, p):
        return -2.0 * self.J * np.cos(p)

    def _integrals(self, theta):
        """``pi``, ``pi'`` and ``pi''`` for a stack of control values.

        The integrands are analytic and periodic in ``p``, so the equispaced
        trapezoid rule converges geometrically; the Fermi-function poles sit
        about ``pi / (2 J theta_1)`` off the real axis, which sets the node count.
        """
        # negative theta_1 is admissible: the band is bounded
        theta = np.asarray(theta, dtype=float).reshape(-1, 2)
        t1, t2 = theta[:, 0], theta[:, 1]
        nodes = 64 + 48 * int(np.ceil(abs(self.J) * np.max(np.abs(t1), initial=0.0)))
        p = 2.0 * np.pi * (np.arange(nodes) + 0.5) / nodes
        e = self.dispersion(p)[:, None]
        a = t1 * e + t2
        f = expit(-a)
        w = f * (1.0 - f)
        vals = np.stack([np.logaddexp(0.0, -a), e * f, f, e * e * w, e * w, w]).mean(axis=1)
        k = theta.shape[0]
        pi = vals[0]
        grad = -np.stack([vals[1], vals[2]], axis=-1)
        hess = np.empty((k, 2, 2))
        hess[:, 0, 0] = vals[3]
        hess[:, 0, 1] = hess[:, 1, 0] = vals[4]
        hess[:, 1, 1] = vals[5]
        return pi, grad, hess

    def pressure(self):
        def value(t):
            return self._integrals(t)[0].reshape(t.shape[:-1])

        def grad(t):
            return self._integrals(t)[1].reshape(t.shape)

        def hess(t):
            return self._integrals(t)[2].reshape(t.shape + (2,))

        return ReducedPressure(value, grad, hess, n=2, name=self.name)

    def density_bounds(self):
        return 2.0 * self.J / np.pi

    def theta_from_density(self, q, tol=1e-12, max_iter=100):
        """Invert ``q = -pi'(theta)`` by damped Newton on ``pi(theta) + theta.q``.

        Vectorised over leading axes of ``q``.
        """
        q = np.asarray(q, dtype=float)
        flat = q.reshape(-1, 2)
        theta = np.tile([0.5, 0.0], (flat.shape[0], 1))
        pi, g, H = self._integrals(theta)
        phi = pi + np.einsum("ij,ij->i", theta, flat)
        for _ in range(max_iter):
            r = g + flat
            active = np.max(np.abs(r), axis=1) >= tol
            if not np.any(active):
                return theta.reshape(q.shape)
            step = -np.linalg.solve(H[active], r[active][..., None])[..., 0]
            base, phi0 = theta[active], phi[active]
            t = np.ones(base.shape[0])
            accepted = np.zeros(base.shape[0], dtype=bool)
            trial = base.copy()
            for _ in range(60):
                todo = ~accepted
                trial[todo] = base[todo] + t[todo, None] * step[todo]
                p_t, g_t, _ = self._integrals(trial[todo])
                fl = flat[active][todo]
                # near the root the decrease in phi drops below its rounding, so a
                # shrinking residual also accepts the step
                ok = (p_t + np.einsum("ij,ij->i", trial[todo], fl)
                      <= phi0[todo] + 1e-15 * (1 + np.abs(phi0[todo]))) \
                    | (np.max(np.abs(g_t + fl), axis=1) < np.max(np.abs(r[active][todo]), axis=1))
                idx = np.flatnonzero(todo)
                accepted[idx[ok]] = True
                t[idx[~ok]] *= 0.5
                if accepted.all():
                    break
            theta[active] = trial
            pi, g, H = self._integrals(theta)
            phi = pi + np.einsum("ij,ij->i", theta, flat)
        raise ConvergenceError(f"density inversion did not converge for q={q}")

    def entropy(self):
        """Entropy through the inverse map ``s(q) = pi(theta(q)) + theta(q).q``.

        No closed-form Hessian is attached: ``s''`` comes from finite differences
        of the inverted gradient, independent of the quadrature ``pi''``.
        """
        bound = self.density_bounds()

        def contains(q):
            e, n = q[..., 0], q[..., 1]
            return (n > 0) & (n < 1) & (np.abs(e) < bound * np.sin(np.pi * np.clip(n, 0, 1)))

        def _thetas(q):
            flat = q.reshape(-1, 2)
            return self.theta_from_density(flat), flat

        def value(q):
            th, flat = _thetas(q)
            pi = self._integrals(th)[0]
            return (pi + np.einsum("ij,ij->i", th, flat)).reshape(q.shape[:-1])

        def grad(q):
            return _thetas(q)[0].reshape(q.shape)

        return EntropyFunction(value, grad, bounds=[(-bound, bound), (0.0, 1.0)],
                               open_domain=True, interior_point=[0.0, 0.5],
                               contains=contains, name=self.name)

    def build_finite_model(self, L, backend="free"):
        h = periodic_hopping(L, self.J)
        if backend == "free":
            return FreeFermionRealization(h, L)
        if backend == "dense":
            H, N = dense_quadratic_charges(h)
            return DenseRealization((H, N), L, ("H", "N"))
        raise InputError(f"unknown backend {backend!r}")


@dataclass(frozen=True)
class SpinChainEDModel:
    """Periodic XXZ ring ``sum (J/2)(S+S- + S-S+) + Delta Sz Sz``; charges ``(H, M_z)``."""

    L: int = 8
    J: float = 1.0
    Delta: float = 0.5
    name = "spin_chain"
    n = 2

    def build_finite_model(self, L=None, backend="dense"):
        L = self.L if L is None else L
        _check_capacity(L)
        splus = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
        sz = sp.csr_matrix(np.diag([0.5, -0.5]))
        sp_ = [_site_op(splus, i, L) for i in range(L)]
        sz_ = [_site_op(sz, i, L) for i in range(L)]
        dim = 2 ** L
        H = sp.csr_matrix((dim, dim))
        for i in range(L):
            j = (i + 1) % L
            if L == 1:
                break
            H = H + 0.5 * self.J * (sp_[i] @ sp_[j].T + sp_[i].T @ sp_[j])
            H = H + self.Delta * (sz_[i] @ sz_[j])
        M = sum(sz_)
        return DenseRealization((H.toarray(), M.toarray()), L, ("H", "Mz"))


CATALOG = {
    "paramagnet": ParamagnetModel,
    "quadratic": QuadraticModel,
    "double_well": DoubleWellModel,
    "free_fermion": FreeFermionChainModel,
    "spin_chain": SpinChainEDModel,
}


def make_model(name, **params):
    try:
        cls = CATALOG[name]
    except KeyError:
        raise InputError(f"unknown model {name!r}; choose from {sorted(CATALOG)}") from None
    return cls(**params)


# --- operations -------------------------------------------------------------

def closed_form_check(model, theta):
    """Closed-form ``pi``, ``q = -pi'``, ``s = pi + theta.q`` against numeric conjugation."""
    theta = as_vector(theta, model.n)
    pressure = model.pressure()
    pi = float(pressure.value(theta))
    q = -pressure.grad(theta)
    s = pi + float(theta @ q)
    pi_num, q_num = legendre_transform(model.entropy(), theta)
    dev = max(abs(pi - pi_num), float(np.max(np.abs(q - q_num))))
    return {"pi": pi, "q": q, "s": s, "max_deviation_from_numeric": dev}


def free_fermion_pi_infinity(model, theta, dps=None):
    """Infinite-volume free-fermion pressure by adaptive quadrature.

    With ``dps`` set the integral is evaluated in ``mpmath`` at that many
    decimal digits and an ``mpf`` is returned.
    """
    t1, t2 = (float(x) for x in as_vector(theta, 2))
    if t1 < 0:
        raise DomainError("theta_1 must be >= 0")
    if dps is None:
        val, _ = quad(lambda p: np.logaddexp(0.0, -(t1 * model.dispersion(p) + t2)),
                      0.0, np.pi, epsabs=1e-12, epsrel=1e-12, limit=200)
        return val / np.pi
    import mpmath as mp

    with mp.workdps(dps):
        T1, T2, J = mp.mpf(t1), mp.mpf(t2), mp.mpf(model.J)
        f = lambda p: mp.log1p(mp.exp(-(T1 * (-2 * J * mp.cos(p)) + T2)))  # noqa: E731
        return +mp.quad(f, [0, mp.pi / 2, mp.pi]) / mp.pi
