import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import frozen as F
from lte_lab import thermo_core as tc
from lte_lab.errors import (
    CoexistenceError,
    DomainError,
    GradientDivergenceError,
    InputError,
    ModelInconsistencyError,
    NonDifferentiableError,
)
from lte_lab.models import DoubleWellModel, FreeFermionChainModel, ParamagnetModel, QuadraticModel

PM = ParamagnetModel()
QM = QuadraticModel()
FF = FreeFermionChainModel()


@pytest.fixture(scope="module")
def dw_tab():
    grid = np.round(np.linspace(-0.05, 0.05, 101), 12)
    return tc.tabulate_pressure(DoubleWellModel().entropy(), grid)


# --- legendre_transform -----------------------------------------------------------

@pytest.mark.parametrize("model, theta, pi, q", [
    (QM, 1.0, 0.5, -1.0),
    (PM, 0.0, np.log(2), 0.0),
    (PM, 1.0, F.PM_PI_1, F.PM_E_1),
])
def test_legendre_transform_examples(model, theta, pi, q):
    p, qs = tc.legendre_transform(model.entropy(), [theta])
    assert p == pytest.approx(pi, abs=1e-10)
    assert qs[0] == pytest.approx(q, abs=1e-8)


def test_legendre_transform_two_dimensional_matches_quadrature():
    p, q = tc.legendre_transform(FF.entropy(), [1.0, 0.0])
    assert p == pytest.approx(F.FF_PI_INF_10, abs=1e-9)
    assert q[1] == pytest.approx(0.5, abs=1e-9)


def test_legendre_transform_rejects_nonfinite():
    with pytest.raises(InputError):
        tc.legendre_transform(PM.entropy(), [np.nan])


@settings(max_examples=40, deadline=None)
@given(theta=st.floats(-3, 3), q=st.floats(-0.999, 0.999))
def test_fenchel_young_inequality(theta, q):
    s = PM.entropy()
    pi, _ = tc.legendre_transform(s, [theta])
    assert float(s.value(np.array([q]))) - theta * q <= pi + 1e-10


@settings(max_examples=30, deadline=None)
@given(theta=st.floats(-2.9, 2.9))
def test_quadratic_conjugate_closed_form(theta):
    pi, q = tc.legendre_transform(QM.entropy(), [theta])
    assert pi == pytest.approx(theta ** 2 / 2, abs=1e-10)
    assert q[0] == pytest.approx(-theta, abs=1e-8)


# --- q_of_theta / theta_of_q ------------------------------------------------------------

@pytest.mark.parametrize("model, theta, idx, expected", [
    (QM, [1.0], 0, -1.0),
    (PM, [0.0], 0, 0.0),
    (FF, [1e-12, 0.0], 1, 0.5),
])
def test_q_of_theta(model, theta, idx, expected):
    assert tc.q_of_theta(model.pressure(), theta)[idx] == pytest.approx(expected, abs=1e-10)


def test_q_of_theta_refuses_kink(dw_tab):
    with pytest.raises(NonDifferentiableError):
        tc.q_of_theta(dw_tab, [0.0])


@pytest.mark.parametrize("model, q, expected", [
    (PM, [-np.tanh(1.0)], 1.0),
    (QM, [-1.0], 1.0),
    (PM, [0.0], 0.0),
])
def test_theta_of_q(model, q, expected):
    assert tc.theta_of_q(model.entropy(), q)[0] == pytest.approx(expected, abs=1e-12)


def test_theta_of_q_errors():
    s = PM.entropy()
    with pytest.raises(DomainError):
        tc.theta_of_q(s, [1.5])
    with pytest.raises(GradientDivergenceError):
        tc.theta_of_q(s, [1.0])
    with pytest.raises(ModelInconsistencyError):
        tc.theta_of_q(s, [0.5])  # above half filling: negative temperature
    assert tc.theta_of_q(s, [0.5], require_positive=False)[0] < 0


@settings(max_examples=30, deadline=None)
@given(theta=st.floats(0.0, 4.0))
def test_density_map_round_trip(theta):
    q = tc.q_of_theta(PM.pressure(), [theta])
    assert tc.theta_of_q(PM.entropy(), q)[0] == pytest.approx(theta, abs=1e-9)


# --- hessian_pair_check ---------------------------------------------------------------------

@pytest.mark.parametrize("theta", [-2.0, 0.0, 0.7, 2.5])
def test_hessian_pair_quadratic_exact(theta):
    assert tc.hessian_pair_check(QM.entropy(), QM.pressure(), [theta]) == 0.0


def test_hessian_pair_paramagnet():
    assert float(PM.pressure().hess([1.0])[0, 0]) == pytest.approx(F.PM_PI2_1, abs=1e-15)
    assert float(PM.entropy().hess([F.PM_E_1])[0, 0]) == pytest.approx(F.PM_S2_1, abs=1e-12)
    assert tc.hessian_pair_check(PM.entropy(), PM.pressure(), [1.0]) < 1e-8


def test_hessian_pair_free_fermion():
    np.testing.assert_allclose(FF.pressure().hess([1.0, 0.0]), F.FF_HESS_INF_10, atol=1e-10)
    assert tc.hessian_pair_check(FF.entropy(), FF.pressure(), [1.0, 0.0]) < 1e-6


def test_hessian_pair_flat_segment_is_coexistence():
    dw = DoubleWellModel()
    flat = tc.EntropyFunction(lambda q: 0 * q[..., 0], lambda q: 0 * q, lambda q: 0 * q[..., None],
                              bounds=[(-1, 1)])
    with pytest.raises(CoexistenceError):
        tc.hessian_pair_check(flat, dw.pressure(), [0.5])


# --- tangent sets ------------------------------------------------------------------------------

def test_double_well_tangent_set(dw_tab):
    ts = tc.tangent_set(dw_tab, 0.0)
    h = 1e-3
    assert abs(ts.r_min + 1) < 2 * h and abs(ts.r_max - 1) < 2 * h
    assert ts.pure_phase_densities == pytest.approx((-1.0, 1.0), abs=2 * h)
    assert not ts.degenerate


@pytest.mark.parametrize("model, theta, slope", [(PM, 1.0, np.tanh(1.0)), (QM, 0.0, 0.0)])
def test_degenerate_tangent_sets(model, theta, slope):
    grid = np.round(np.linspace(theta - 0.05, theta + 0.05, 101), 12)
    tab = tc.TabulatedPressure(grid, model.pressure().value(grid[:, None]))
    ts = tc.tangent_set(tab, theta)
    assert ts.degenerate
    assert ts.r_min == pytest.approx(slope, abs=1e-6)


def test_tangent_set_needs_grid_node(dw_tab):
    with pytest.raises(InputError):
        tc.tangent_set(dw_tab, 0.00037)


# --- concave envelope ------------------------------------------------------------------------------

def test_double_well_envelope_flat_between_wells():
    s = DoubleWellModel().entropy()
    q = np.array([[-1.5], [-1.0], [-0.3], [0.0], [0.8], [1.0], [1.7]])
    expected = np.where(np.abs(q[:, 0]) <= 1, 0.0, -(q[:, 0] ** 2 - 1) ** 2)
    np.testing.assert_allclose(s.value(q), expected, atol=1e-12)
    assert DoubleWellModel.raw(0.0) == -1.0


def test_envelope_of_concave_input_is_identity():
    q = np.linspace(-3, 3, 301)
    env = tc.concave_envelope(q, -0.5 * q ** 2)
    np.testing.assert_allclose(env.value(q[:, None]), -0.5 * q ** 2, atol=1e-12)
    assert env.contact_mask.all()


def test_envelope_idempotent():
    q = np.linspace(-2, 2, 401)
    env = tc.concave_envelope(q, DoubleWellModel.raw(q))
    again = tc.concave_envelope(q, env.value(q[:, None]))
    np.testing.assert_allclose(again.value(q[:, None]), env.value(q[:, None]), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=5, max_size=40))
def test_envelope_majorant_and_concave(values):
    y = np.asarray(values)
    x = np.arange(y.size, dtype=float)
    env = tc.concave_envelope(x, y).value(x[:, None])
    assert np.all(env >= y - 1e-12)
    assert np.all(np.diff(env, 2) <= 1e-9)


def test_envelope_input_validation():
    with pytest.raises(InputError):
        tc.concave_envelope([0, 1], [0, 1])
    with pytest.raises(InputError):
        tc.concave_envelope([0, 2, 1], [0, 1, 2])


# --- pressure_from_pi ------------------------------------------------------------------------------

@pytest.mark.parametrize("pi, T, p", [(0.5, 2.0, 1.0), (0.0, 3.7, 0.0), (np.log(2), 1.0, np.log(2))])
def test_pressure_from_pi(pi, T, p):
    assert tc.pressure_from_pi(pi, T) == pytest.approx(p, abs=1e-15)


def test_pressure_from_pi_rejects_nonpositive_temperature():
    with pytest.raises(InputError):
        tc.pressure_from_pi(1.0, 0.0)


# --- estimator front ends --------------------------------------------------------------------------

def test_concave_envelope_estimator():
    q = np.linspace(-2, 2, 401)
    est = tc.ConcaveEnvelope().fit(q, DoubleWellModel.raw(q))
    assert est.predict([0.0, 0.5])[0] == pytest.approx(0.0, abs=1e-12)
    assert not est.contact_[200]
    assert est.get_params() == {"raw": None}


def test_legendre_conjugate_estimator_matches_closed_form():
    q = np.linspace(-0.999999, 0.999999, 4001)
    est = tc.LegendreConjugate().fit(q, PM.entropy().value(q[:, None]))
    theta = np.array([0.0, 0.5, 1.0])
    np.testing.assert_allclose(est.predict(theta), np.log(2 * np.cosh(theta)), atol=1e-6)
    np.testing.assert_allclose(est.transform(theta)[:, 0], -np.tanh(theta), atol=1e-3)


def test_control_variable():
    cv = tc.ControlVariable([2.0, 0.5])
    assert cv.temperature == pytest.approx(0.5)
    assert np.asarray(cv).shape == (2,)


def test_containment_next_to_kink():
    grid = np.round(np.linspace(-0.02, 0.02, 41), 12)
    tab = tc.tabulate_pressure(DoubleWellModel().entropy(), grid)
    for i in (19, 21):
        ts = tc.tangent_set(tab, grid[i])
        assert ts.degenerate and ts.contains(-tab.q_star[i])
