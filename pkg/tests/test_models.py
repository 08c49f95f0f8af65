import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import frozen as F
import oracles as o
from lte_lab import models
from lte_lab.errors import CapacityError, DomainError, InputError
from lte_lab.models import (
    DoubleWellModel,
    FreeFermionChainModel,
    ParamagnetModel,
    QuadraticModel,
    SpinChainEDModel,
)

FF = FreeFermionChainModel()


@pytest.mark.parametrize("theta, pi, e, s", [
    (1.0, F.PM_PI_1, F.PM_E_1, F.PM_S_1),
    (0.0, np.log(2), 0.0, np.log(2)),
])
def test_paramagnet_closed_form_check(theta, pi, e, s):
    rep = models.closed_form_check(ParamagnetModel(), [theta])
    assert rep["pi"] == pytest.approx(pi, abs=1e-14)
    assert rep["q"][0] == pytest.approx(e, abs=1e-14)
    assert rep["s"] == pytest.approx(s, abs=1e-14)
    assert rep["max_deviation_from_numeric"] < 1e-8


def test_free_fermion_infinite_temperature_limit():
    rep = models.closed_form_check(FF, [1e-10, 0.0])
    assert rep["pi"] == pytest.approx(np.log(2), abs=1e-9)
    assert rep["q"][1] == pytest.approx(0.5, abs=1e-12)
    assert rep["max_deviation_from_numeric"] < 1e-8


@pytest.mark.parametrize("model", [ParamagnetModel(), QuadraticModel(), ParamagnetModel(eps=0.5)])
def test_closed_form_agrees_with_numeric_on_grid(model):
    devs = [models.closed_form_check(model, [t])["max_deviation_from_numeric"]
            for t in np.linspace(-2, 2, 21)]
    assert max(devs) < 1e-8


def test_paramagnet_hessian_identity_exact():
    t = np.linspace(-3, 3, 13)
    pm = ParamagnetModel()
    prod = pm.pressure().hess(t[:, None])[:, 0, 0] * pm.entropy().hess(-np.tanh(t)[:, None])[:, 0, 0]
    np.testing.assert_allclose(prod, -1.0, atol=1e-12)


# --- free_fermion_pi_infinity -------------------------------------------------------

def test_pi_infinity_values():
    assert models.free_fermion_pi_infinity(FF, [1e-14, 0.0]) == pytest.approx(np.log(2), abs=1e-12)
    assert models.free_fermion_pi_infinity(FF, [1.0, 0.0]) == pytest.approx(F.FF_PI_INF_10, abs=1e-12)
    assert float(models.free_fermion_pi_infinity(FF, [1.0, 0.0], dps=30)) == pytest.approx(
        F.FF_PI_INF_10, abs=1e-16)


def test_pi_infinity_ground_state_slope():
    beta = 200.0
    assert models.free_fermion_pi_infinity(FF, [beta, 0.0]) / beta == pytest.approx(
        F.FF_GROUND_ENERGY_SLOPE, abs=1e-4)


def test_pi_infinity_rejects_negative_beta():
    with pytest.raises(DomainError):
        models.free_fermion_pi_infinity(FF, [-1.0, 0.0])


@settings(max_examples=20, deadline=None)
@given(t1=st.floats(0.1, 3.0), t2=st.floats(-2.0, 2.0))
def test_particle_hole_symmetry(t1, t2):
    p = FF.pressure()
    assert float(p.value([t1, t2]) - p.value([t1, -t2])) == pytest.approx(-t2, abs=1e-10)
    assert float(-p.grad([t1, 0.0])[1]) == pytest.approx(0.5, abs=1e-12)


def test_free_fermion_hessian_vs_moment_oracle():
    np.testing.assert_allclose(FF.pressure().hess([0.7, 0.3]), o.ff_hessian_inf(0.7, 0.3), atol=1e-10)


# --- finite realizations --------------------------------------------------------------

def test_xxz_two_site_spectrum():
    H = SpinChainEDModel(L=2, J=1.0, Delta=0.0).build_finite_model().charges[0]
    np.testing.assert_allclose(np.linalg.eigvalsh(H), F.XXZ2_SPECTRUM_DELTA0, atol=1e-14)


@pytest.mark.parametrize("L", [3, 4, 5])
def test_xxz_matches_kronecker_oracle(L):
    H, M = SpinChainEDModel(L=L).build_finite_model().charges
    Ho, Mo = o.xxz_ring(L, 1.0, 0.5)
    np.testing.assert_allclose(H, Ho, atol=1e-14)
    np.testing.assert_allclose(M, Mo, atol=1e-14)


def test_free_fermion_hopping_spectrum():
    real = FF.build_finite_model(4)
    np.testing.assert_allclose(np.sort(real.single_particle_energies()), [-2, 0, 0, 2], atol=1e-14)
    h = real.h
    assert h[0, 1] == h[0, 3] == -1.0


@pytest.mark.parametrize("L", [5, 8])
def test_free_fermion_spectrum_oracle(L):
    np.testing.assert_allclose(np.sort(FF.build_finite_model(L).single_particle_energies()),
                               o.ff_hopping_spectrum(L), atol=1e-13)


@pytest.mark.parametrize("real", [
    SpinChainEDModel(L=6).build_finite_model(),
    FreeFermionChainModel().build_finite_model(5, backend="dense"),
    ParamagnetModel().build_finite_model(4),
])
def test_commutators_vanish(real):
    assert real.commutator_norm() < 1e-12
    for Q in real.charges:
        np.testing.assert_allclose(Q, Q.conj().T, atol=0)


def test_capacity_limit():
    with pytest.raises(CapacityError):
        SpinChainEDModel(L=13).build_finite_model()


def test_catalog_and_unknown_model():
    assert set(models.CATALOG) == {"paramagnet", "quadratic", "double_well", "free_fermion", "spin_chain"}
    with pytest.raises(InputError):
        models.make_model("ising")
    assert isinstance(models.make_model("paramagnet", eps=2.0), ParamagnetModel)


def test_double_well_envelope_model():
    s = DoubleWellModel().entropy()
    assert float(s.value([0.3])) == 0.0
    assert float(s.value([1.5])) == pytest.approx(-(1.5 ** 2 - 1) ** 2, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(e=st.floats(-0.55, 0.55), n=st.floats(0.1, 0.9))
def test_free_fermion_entropy_inverts_pressure(e, n):
    s = FF.entropy()
    q = np.array([e, n])
    if not s.in_domain(q):
        return
    theta = FF.theta_from_density(q)
    np.testing.assert_allclose(-FF.pressure().grad(theta), q, atol=1e-9)


@pytest.mark.parametrize("t1, t2", [(0.3, -1.2), (5.0, 0.4), (40.0, 1.0)])
def test_pressure_vs_quadrature_oracle(t1, t2):
    got = float(FF.pressure().value([t1, t2]))
    assert got == pytest.approx(float(o.ff_pi_inf(t1, t2, 1.0, 30)), rel=1e-13, abs=1e-13)
