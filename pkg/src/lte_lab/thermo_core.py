"""Convex thermodynamic formalism.

Entropy densities ``s(q)`` are concave functions of the conserved densities
``q = (e, q_2, ..., q_n)``.  Their Legendre conjugate is the reduced pressure

    pi(theta) = sup_q [ s(q) - theta . q ]  (= p / T),

a convex function of the control variable ``theta = s'(q)`` whose first
component is the inverse temperature.  Units: k = 1.

Arrays follow one convention throughout: a state or control value carries its
``n`` components on the last axis, so ``value`` maps ``(..., n) -> (...)``,
``grad`` maps ``(..., n) -> (..., n)`` and ``hess`` maps ``(..., n) -> (..., n, n)``.
For one-dimensional models scalars are accepted everywhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .errors import (
    CoexistenceError,
    DomainError,
    GradientDivergenceError,
    InputError,
    InsufficientDataError,
    ModelInconsistencyError,
    NonDifferentiableError,
)

__all__ = [
    "ControlVariable",
    "EntropyFunction",
    "ReducedPressure",
    "TabulatedEntropy",
    "TabulatedPressure",
    "TangentSet",
    "as_vector",
    "fd_jacobian",
    "fd_jacobian_extrapolated",
    "legendre_transform",
    "conjugate_pressure",
    "tabulate_pressure",
    "discrete_conjugate",
    "q_of_theta",
    "theta_of_q",
    "hessian_pair_check",
    "tangent_set",
    "concave_envelope",
    "pressure_from_pi",
    "ConcaveEnvelope",
    "LegendreConjugate",
]

FD_REL_STEP = 1e-4
KINK_REL_TOL = 1e-6
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def as_vector(x, n):
    """Return ``x`` as a float array whose last axis has length ``n``."""
    x = np.asarray(x, dtype=float)
    if n == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != n:
        raise InputError(f"expected {n} components on the last axis, got shape {x.shape}")
    return x


def fd_jacobian(f, x, rel_step=FD_REL_STEP):
    """Central-difference derivative of ``f`` along the last axis of ``x``.

    The step for coordinate ``k`` is ``rel_step * (1 + |x_k|)``.  If ``f``
    returns shape ``S`` the result has shape ``S + (n,)``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    h = rel_step * (1.0 + np.abs(x))
    # all 2n stencil points in one vectorised call: axis 0 = (+/-), axis 1 = coordinate
    shifts = np.eye(n) * h[..., None, :]
    pts = np.stack([x[..., None, :] + shifts, x[..., None, :] - shifts])
    pts = np.moveaxis(pts, (0, -2), (0, 1))
    vals = np.asarray(f(pts))
    diff = vals[0] - vals[1]
    hk = np.moveaxis(h, -1, 0)
    hk = np.reshape(hk, hk.shape + (1,) * (diff.ndim - hk.ndim))
    return np.moveaxis(diff / (2.0 * hk), 0, -1)


def fd_jacobian_extrapolated(f, x, rel_step=FD_REL_STEP):
    """``fd_jacobian`` with one Richardson step: the ``h^2`` error term cancels."""
    return (4.0 * fd_jacobian(f, x, rel_step / 2) - fd_jacobian(f, x, rel_step)) / 3.0


@dataclass(frozen=True)
class ControlVariable:
    """Control value ``theta``; ``theta[0]`` is the inverse temperature."""

    values: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise InputError("control variable must be a finite 1-D vector")
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def n(self):
        return self.values.size

    @property
    def beta(self):
        return float(self.values[0])

    @property
    def temperature(self):
        if self.values[0] <= 0:
            raise DomainError("temperature undefined for theta_1 <= 0")
        return 1.0 / self.values[0]

    @property
    def forces(self):
        """Conjugate forces ``f_j = theta_j / theta_1`` for ``j >= 2``."""
        return self.values[1:] / self.values[0]


class EntropyFunction:
    """Concave entropy density on a convex domain.

    Parameters
    ----------
    value : callable
        ``s(q)``, vectorised over leading axes.
    grad, hess : callable, optional
        Closed forms of ``s'`` and ``s''``.  Missing derivatives fall back to
        central finite differences.
    bounds : sequence of (lo, hi)
        Bounding box of the domain, one pair per component.
    open_domain : bool
        If True the gradient diverges on the boundary.
    interior_point : array_like, optional
        Starting point for multi-dimensional conjugation.
    contains : callable, optional
        Extra membership test for non-box domains.
    """

    def __init__(self, value, grad=None, hess=None, *, bounds, open_domain=False,
                 interior_point=None, contains=None, representation="closed-form",
                 name="entropy"):
        self._value = value
        self._grad = grad
        self._hess = hess
        self.bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
        if self.bounds.shape[1] != 2 or np.any(self.bounds[:, 0] >= self.bounds[:, 1]):
            raise InputError("bounds must be (lo, hi) pairs with lo < hi")
        self.n = self.bounds.shape[0]
        self.open_domain = open_domain
        if interior_point is None:
            interior_point = self.bounds.mean(axis=1)
        self.interior_point = as_vector(interior_point, self.n).copy()
        self._contains = contains
        self.representation = representation
        self.name = name

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, n={self.n})"

    def __call__(self, q):
        return self.value(q)

    def value(self, q):
        return np.asarray(self._value(as_vector(q, self.n)), dtype=float)

    def grad(self, q):
        q = as_vector(q, self.n)
        if self._grad is not None:
            return as_vector(self._grad(q), self.n)
        return fd_jacobian(self._value, q)

    def hess(self, q):
        q = as_vector(q, self.n)
        if self._hess is not None:
            return np.asarray(self._hess(q), dtype=float).reshape(q.shape + (self.n,))
        return fd_jacobian_extrapolated(self.grad, q)

    def in_domain(self, q, margin=0.0):
        q = as_vector(q, self.n)
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        width = hi - lo
        inside = np.all((q >= lo + margin * width) & (q <= hi - margin * width), axis=-1)
        if self.open_domain:
            inside &= np.all((q > lo) & (q < hi), axis=-1)
        if self._contains is not None:
            inside &= np.asarray(self._contains(q), dtype=bool)
        return inside

    def is_concave_at(self, q, atol=1e-10):
        """True where the Hessian is negative semidefinite."""
        eig = np.linalg.eigvalsh(self.hess(q))
        return np.all(eig <= atol * (1.0 + np.abs(eig).max(axis=-1, keepdims=True)), axis=-1)


class ReducedPressure:
    """Convex reduced pressure ``pi(theta)`` with derivative contracts."""

    def __init__(self, value, grad=None, hess=None, *, n=1, provenance="closed-form",
                 name="pressure"):
        self._value = value
        self._grad = grad
        self._hess = hess
        self.n = n
        self.provenance = provenance
        self.name = name

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, provenance={self.provenance!r})"

    def __call__(self, theta):
        return self.value(theta)

    def value(self, theta):
        return np.asarray(self._value(as_vector(theta, self.n)), dtype=float)

    def grad(self, theta):
        theta = as_vector(theta, self.n)
        if self._grad is not None:
            return as_vector(self._grad(theta), self.n)
        return fd_jacobian(self._value, theta)

    def hess(self, theta):
        theta = as_vector(theta, self.n)
        if self._hess is not None:
            return np.asarray(self._hess(theta), dtype=float).reshape(theta.shape + (self.n,))
        return fd_jacobian(self.grad, theta)

    def one_sided_slopes(self, theta, rel_delta=1e-8):
        """Left and right derivative estimates of a one-dimensional pressure."""
        t = float(as_vector(theta, 1)[..., 0])
        d = rel_delta * (1.0 + abs(t))
        return float(self.grad(t - d)[0]), float(self.grad(t + d)[0])


# --- conjugation -----------------------------------------------------------

def _golden_max(f, a, b, xtol):
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > xtol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def _legendre_1d(s, theta, n_grid, xtol):
    lo, hi = s.bounds[0]
    grid = np.linspace(lo, hi, n_grid)
    with np.errstate(invalid="ignore", divide="ignore"):
        obj = s.value(grid) - theta * grid
    if not np.any(np.isfinite(obj)):
        raise InputError("entropy is not finite anywhere on its domain")
    obj = np.where(np.isfinite(obj), obj, -np.inf)
    i = int(np.argmax(obj))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]

    def f(q):
        v = float(s.value(q)) - theta * q
        return v if np.isfinite(v) else -np.inf

    q, val = _golden_max(f, a, b, xtol)
    if obj[i] > val:
        q, val = grid[i], float(obj[i])
    # value comparisons stall near sqrt(machine eps); polish on the monotone slope
    with np.errstate(divide="ignore", invalid="ignore"):
        ga = float(s.grad(a)[0]) - theta
        gb = float(s.grad(b)[0]) - theta
    if np.isfinite(ga) and np.isfinite(gb) and ga > 0 > gb:
        root = brentq(lambda z: float(s.grad(z)[0]) - theta, a, b, xtol=1e-15, rtol=1e-15)
        if f(root) >= val - 1e-15 * (1.0 + abs(val)):
            q, val = root, f(root)
    if not s.open_domain:
        g = float(s.grad(q)[0]) - theta
        tol = 1e-8 * (1.0 + abs(theta))
        if (q - lo <= 10 * xtol and g < -tol) or (hi - q <= 10 * xtol and g > tol):
            raise DomainError(f"theta={theta:g} outside the control space: supremum on the boundary")
    return val, np.array([q])


def _legendre_nd(s, theta, gtol, max_iter):
    q = s.interior_point.copy()
    obj = float(s.value(q)) - theta @ q
    for _ in range(max_iter):
        g = s.grad(q) - theta
        if np.max(np.abs(g)) < gtol * (1.0 + np.max(np.abs(theta))):
            return obj, q
        H = s.hess(q)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise CoexistenceError("singular entropy Hessian during conjugation") from exc
        if step @ g <= 0:  # not an ascent direction: fall back to gradient ascent
            step = g
        t = 1.0
        for _ in range(60):
            trial = q + t * step
            if s.in_domain(trial):
                trial_obj = float(s.value(trial)) - theta @ trial
                if np.isfinite(trial_obj) and trial_obj >= obj - 1e-14 * (1 + abs(obj)):
                    break
            t *= 0.5
        else:
            raise DomainError(f"theta={theta} outside the control space: ascent left the domain")
        q, obj = trial, trial_obj
    raise DomainError(f"theta={theta} outside the control space: no stationary point found")


def legendre_transform(s, theta, *, n_grid=2001, xtol=1e-10, gtol=1e-11, max_iter=200):
    """Reduced pressure and maximiser: ``sup_q [s(q) - theta.q]``.

    One-dimensional entropies use a grid scan followed by golden-section
    refinement; higher dimensions use damped Newton ascent from the domain's
    interior point.

    Returns
    -------
    pi_value : float
    q_star : ndarray, shape (n,)
    """
    theta = as_vector(theta, s.n)
    if theta.ndim != 1:
        raise InputError("legendre_transform takes a single control value")
    if not np.all(np.isfinite(theta)):
        raise InputError("theta must be finite")
    if s.n == 1:
        return _legendre_1d(s, float(theta[0]), n_grid, xtol)
    return _legendre_nd(s, theta, gtol, max_iter)


def conjugate_pressure(s, **kwargs):
    """Numeric reduced pressure of ``s``; ``pi' = -q*`` by the envelope theorem."""

    def value(theta):
        theta = np.asarray(theta, dtype=float)
        flat = theta.reshape(-1, s.n)
        out = np.array([legendre_transform(s, t, **kwargs)[0] for t in flat])
        return out.reshape(theta.shape[:-1])

    def grad(theta):
        theta = np.asarray(theta, dtype=float)
        flat = theta.reshape(-1, s.n)
        out = np.array([-legendre_transform(s, t, **kwargs)[1] for t in flat])
        return out.reshape(theta.shape)

    return ReducedPressure(value, grad, n=s.n, provenance="numeric-conjugate",
                           name=f"conj({s.name})")


def q_of_theta(pressure, theta):
    """Equilibrium density ``-pi'(theta)`` in a pure phase."""
    theta = as_vector(theta, pressure.n)
    if pressure.n == 1:
        left, right = pressure.one_sided_slopes(theta)
        mid = 0.5 * (left + right)
        if abs(right - left) > KINK_REL_TOL * (1.0 + abs(mid)):
            raise NonDifferentiableError(
                f"pressure has a kink at theta={float(theta[0]):g} "
                f"(slopes {left:.6g}, {right:.6g}); use tangent_set")
    return -pressure.grad(theta)


def theta_of_q(s, q, *, require_positive=True):
    """Control variable ``s'(q)``.

    ``require_positive`` rejects a negative first component (negative
    temperature); ``theta_1 = 0`` is the infinite-temperature limit and passes.
    """
    q = as_vector(q, s.n)
    lo, hi = s.bounds[:, 0], s.bounds[:, 1]
    gap = np.minimum(q - lo, hi - q)
    if np.any(gap < 0):
        raise DomainError(f"q={q} outside the entropy domain")
    if s.open_domain and np.any(gap <= 1e-12 * (hi - lo)):
        raise GradientDivergenceError(f"q={q} on the domain boundary")
    if not np.all(s.in_domain(q)):
        raise DomainError(f"q={q} outside the entropy domain")
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = s.grad(q)
    if not np.all(np.isfinite(theta)):
        raise GradientDivergenceError(f"entropy gradient diverges at q={q}")
    if require_positive and np.any(theta[..., 0] < 0):
        raise ModelInconsistencyError(f"negative inverse temperature at q={q}")
    return theta


def hessian_pair_check(s, pressure, theta):
    """Max-norm of ``pi''(theta) s''(q) + I`` with ``q = q_of_theta(theta)``."""
    theta = as_vector(theta, s.n)
    q = q_of_theta(pressure, theta)
    Hs = s.hess(q)
    Hp = pressure.hess(theta)
    eig = np.linalg.eigvalsh(Hs)
    if np.min(np.abs(eig)) <= 1e-12 * max(1.0, np.max(np.abs(eig))):
        raise CoexistenceError(f"singular entropy Hessian at q={q}")
    return float(np.max(np.abs(Hp @ Hs + np.eye(s.n))))


def pressure_from_pi(pi_value, T):
    """Pressure ``p = pi * T``."""
    if not T > 0:
        raise InputError("temperature must be positive")
    return pi_value * T


# --- tabulated objects -------------------------------------------------------

class TabulatedPressure(ReducedPressure):
    """One-dimensional reduced pressure known on a grid of control values."""

    def __init__(self, theta_grid, values, q_star=None, name="tabulated pressure"):
        g = np.asarray(theta_grid, dtype=float)
        v = np.asarray(values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or np.any(np.diff(g) <= 0):
            raise InputError("theta grid must be strictly increasing and match values")
        self.theta_grid = g
        self.values = v
        self.q_star = None if q_star is None else np.asarray(q_star, dtype=float)
        super().__init__(lambda t: np.interp(t[..., 0], g, v), n=1,
                         provenance="tabulated", name=name)

    def grad(self, theta):
        t = as_vector(theta, 1)[..., 0]
        slopes = np.diff(self.values) / np.diff(self.theta_grid)
        i = np.clip(np.searchsorted(self.theta_grid, t) - 1, 0, slopes.size - 1)
        return slopes[i][..., None]

    def one_sided_slopes(self, theta, rel_delta=None):
        ts = tangent_set(self, float(as_vector(theta, 1)[0]))
        return ts.r_min, ts.r_max


def tabulate_pressure(s, theta_grid, **kwargs):
    """Tabulate ``pi`` and the maximiser ``q*`` of a 1-D entropy on a grid."""
    if s.n != 1:
        raise InputError("tabulation is one-dimensional")
    pis, qs = [], []
    for t in np.asarray(theta_grid, dtype=float):
        p, q = legendre_transform(s, t, **kwargs)
        pis.append(p)
        qs.append(q[0])
    return TabulatedPressure(theta_grid, pis, qs, name=f"tab({s.name})")


def discrete_conjugate(x, fx, y, kind="sup", chunk=512):
    """Discrete Legendre transform on grids.

    ``kind="sup"``: ``g(y) = max_x [f(x) - y x]`` (entropy -> pressure).
    ``kind="inf"``: ``g(y) = min_x [f(x) + y x]`` (pressure -> entropy).
    """
    x = np.asarray(x, dtype=float)
    fx = np.asarray(fx, dtype=float)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.empty(y.shape)
    for start in range(0, y.size, chunk):
        yy = y[start:start + chunk, None]
        if kind == "sup":
            out[start:start + chunk] = np.max(fx[None, :] - yy * x[None, :], axis=1)
        elif kind == "inf":
            out[start:start + chunk] = np.min(fx[None, :] + yy * x[None, :], axis=1)
        else:
            raise InputError(f"unknown kind {kind!r}")
    return out


@dataclass(frozen=True)
class TangentSet:
    """Subdifferential ``[r_min, r_max]`` of a 1-D convex pressure at ``theta``."""

    theta: float
    r_min: float
    r_max: float

    @property
    def degenerate(self):
        return self.r_min == self.r_max

    @property
    def extremal_slopes(self):
        return (self.r_min,) if self.degenerate else (self.r_min, self.r_max)

    @property
    def densities(self):
        """Interval of equilibrium densities ``-[r_min, r_max]``."""
        return (-self.r_max, -self.r_min)

    @property
    def pure_phase_densities(self):
        return tuple(sorted(-r for r in self.extremal_slopes))

    def contains(self, r, atol=1e-6):
        return self.r_min - atol <= r <= self.r_max + atol


def tangent_set(pi_tab, theta):
    """Tangent slopes of a tabulated pressure at a grid node.

    Each endpoint is a one-sided difference quotient, linearly extrapolated to
    ``theta`` from the two nearest grid intervals on that side.
    """
    g, v = pi_tab.theta_grid, pi_tab.values
    hits = np.flatnonzero(np.isclose(g, theta, rtol=0.0, atol=1e-12 * (1.0 + abs(theta))))
    if hits.size == 0:
        raise InputError(f"theta={theta:g} is not a node of the tabulation grid")
    i = int(hits[0])
    if i < 2 or i > g.size - 3:
        raise InsufficientDataError(f"theta={theta:g} too close to the grid edge")

    def extrapolate(j1, j2):
        # j1 = nearer interval, j2 = farther one; interval k spans nodes (k, k+1)
        d1 = (v[j1 + 1] - v[j1]) / (g[j1 + 1] - g[j1])
        d2 = (v[j2 + 1] - v[j2]) / (g[j2 + 1] - g[j2])
        m1 = 0.5 * (g[j1] + g[j1 + 1])
        m2 = 0.5 * (g[j2] + g[j2 + 1])
        return d1 + (d2 - d1) * (g[i] - m1) / (m2 - m1)

    left = extrapolate(i - 1, i - 2)
    right = extrapolate(i, i + 1)
    # convexity brackets both one-sided slopes by the adjacent secants; a side
    # that leaves the bracket has a stencil reaching across a nearby kink
    lo = (v[i] - v[i - 1]) / (g[i] - g[i - 1])
    hi = (v[i + 1] - v[i]) / (g[i + 1] - g[i])
    slack = 1e-9 * (1.0 + abs(lo) + abs(hi))
    left_ok = lo - slack <= left <= hi + slack
    right_ok = lo - slack <= right <= hi + slack
    if left_ok and not right_ok:
        right = left
    elif right_ok and not left_ok:
        left = right
    elif not (left_ok or right_ok):
        left, right = lo, hi
    mid = 0.5 * (left + right)
    if right - left <= KINK_REL_TOL * (1.0 + abs(mid)):
        left = right = mid
    return TangentSet(float(g[i]), float(left), float(right))


class TabulatedEntropy(EntropyFunction):
    """Concave envelope of tabulated data.

    Between two hull vertices that are adjacent grid nodes the envelope
    touches the raw function; if the raw callable is supplied it is used
    there, otherwise the envelope is piecewise linear.
    """

    def __init__(self, grid, values, hull, raw=None, raw_grad=None, name="envelope"):
        self.grid = grid
        self.values = values
        self.hull = hull
        self.hull_q = grid[hull]
        self.hull_s = values[hull]
        self.raw = raw
        self.raw_grad = raw_grad
        self._contact = np.diff(hull) == 1
        self._slopes = np.diff(self.hull_s) / np.diff(self.hull_q)
        super().__init__(self._env_value, self._env_grad, self._env_hess,
                         bounds=[(grid[0], grid[-1])], representation="tabulated-on-grid",
                         name=name)

    @property
    def contact_mask(self):
        mask = np.zeros(self.grid.size, dtype=bool)
        mask[self.hull] = True
        return mask

    def _segment(self, q):
        j = np.searchsorted(self.hull_q, q, side="right") - 1
        return np.clip(j, 0, self._slopes.size - 1)

    def _env_value(self, q):
        q = q[..., 0]
        j = self._segment(q)
        lin = self.hull_s[j] + self._slopes[j] * (q - self.hull_q[j])
        if self.raw is None:
            return lin
        return np.where(self._contact[j], self.raw(q), lin)

    def _raw_grad(self, q):
        if self.raw_grad is not None:
            return self.raw_grad(q)
        return fd_jacobian(lambda z: self.raw(z[..., 0]), q[..., None])[..., 0]

    def _env_grad(self, q):
        q = q[..., 0]
        j = self._segment(q)
        g = self._slopes[j]
        if self.raw is not None:
            g = np.where(self._contact[j], self._raw_grad(q), g)
        return g[..., None]

    def _env_hess(self, q):
        q = q[..., 0]
        j = self._segment(q)
        h = np.zeros_like(q)
        if self.raw is not None:
            curv = fd_jacobian(lambda z: self._raw_grad(z[..., 0]), q[..., None])[..., 0]
            h = np.where(self._contact[j], curv, 0.0)
        return h[..., None, None]


def _upper_hull(x, y):
    hull = []
    for k in range(x.size):
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            cross = (x[i1] - x[i0]) * (y[k] - y[i0]) - (y[i1] - y[i0]) * (x[k] - x[i0])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(k)
    return np.asarray(hull)


def concave_envelope(q_grid, s_values, raw=None, raw_grad=None, name="envelope"):
    """Least concave majorant of tabulated values (biconjugate of the data)."""
    x = np.asarray(q_grid, dtype=float)
    y = np.asarray(s_values, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise InputError("grid and values must be 1-D arrays of equal length")
    if x.size < 3:
        raise InputError("need at least 3 grid points")
    if np.any(np.diff(x) <= 0):
        raise InputError("grid must be strictly increasing")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InputError("grid values must be finite")
    return TabulatedEntropy(x, y, _upper_hull(x, y), raw=raw, raw_grad=raw_grad, name=name)


# --- estimator front ends ------------------------------------------------------


class ConcaveEnvelope(BaseEstimator):
    """Fit the concave envelope of sampled entropy values.

    ``fit(q, s)`` takes a 1-D grid and values; ``predict(q)`` evaluates the
    envelope; ``contact_`` flags the grid nodes where it touches the data.
    """

    def __init__(self, raw=None):
        self.raw = raw

    def fit(self, X, y):
        q = column_or_1d(check_array(np.reshape(X, (-1, 1)), ensure_min_samples=3))
        s = column_or_1d(y)
        order = np.argsort(q)
        self.entropy_ = concave_envelope(q[order], s[order], raw=self.raw)
        self.contact_ = np.empty(q.size, dtype=bool)
        self.contact_[order] = self.entropy_.contact_mask
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "entropy_")
        q = column_or_1d(check_array(np.reshape(X, (-1, 1))))
        return self.entropy_.value(q)


class LegendreConjugate(BaseEstimator):
    """Reduced pressure of a tabulated 1-D entropy.

    ``predict(theta)`` returns ``pi(theta)``; ``transform(theta)`` returns the
    maximising densities ``q*``.  Conjugation runs on the concave envelope of
    the data, which leaves ``pi`` unchanged.
    """

    def __init__(self, n_grid=2001, xtol=1e-10):
        self.n_grid = n_grid
        self.xtol = xtol

    def fit(self, X, y):
        envelope = ConcaveEnvelope().fit(X, y)
        self.entropy_ = envelope.entropy_
        self.n_features_in_ = 1
        return self

    def _solve(self, X):
        check_is_fitted(self, "entropy_")
        thetas = column_or_1d(check_array(np.reshape(X, (-1, 1))))
        return [legendre_transform(self.entropy_, t, n_grid=self.n_grid, xtol=self.xtol)
                for t in thetas]

    def predict(self, X):
        return np.array([p for p, _ in self._solve(X)])

    def transform(self, X):
        return np.array([q for _, q in self._solve(X)])
