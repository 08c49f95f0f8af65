import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import frozen as F
import oracles as o
from lte_lab import fluctuations as fl
from lte_lab.errors import InputError, PhaseBoundaryError
from lte_lab.models import DoubleWellModel, ParamagnetModel, QuadraticModel

PM = ParamagnetModel()
BUMP = fl.TestFunction(1.0, 1.0)


def pm_field(M=200, length=2.0, theta=1.0):
    return fl.ControlField.from_function(PM, lambda x: np.full_like(x, theta), M, length)


def test_bump_norm_constant():
    assert fl.BUMP_NORM_SQ == pytest.approx(F.BUMP_NORM_SQ, abs=1e-16)
    assert float(o.bump_norm_sq()) == pytest.approx(F.BUMP_NORM_SQ, abs=1e-15)
    assert fl.TestFunction(0.0, 2.5, (1.0, 2.0)).norm_sq() == pytest.approx(F.BUMP_NORM_SQ * 2.5 * 5)


# --- cell statistics --------------------------------------------------------------

def test_cell_variance_at_fine_grid():
    field = fl.ControlField.from_function(PM, lambda x: np.ones_like(x), 100, 1.0)
    assert field.h == pytest.approx(0.01)
    xs = np.concatenate([fl.sample_field(field, 3, fl.CHUNK, chunk=c).xi[:, :2, 0] for c in range(13)])
    xs = xs[:100_000]
    var, se = fl.variance_with_error(xs[:, 0])
    assert abs(var - F.PM_CELL_VAR_H001) < 3 * se
    cross = fl.fsum_mean(xs[:, 0] * xs[:, 1])
    assert abs(cross) < 3 * np.std(xs[:, 0] * xs[:, 1]) / np.sqrt(xs.shape[0])


def test_covariance_matches_hessian():
    field = fl.ControlField.from_function(PM, lambda x: 0.5 + x, 16)
    np.testing.assert_allclose(field.covariance()[:, 0, 0], 1 / np.cosh(0.5 + field.x) ** 2, atol=1e-14)


# --- smearing ---------------------------------------------------------------------------

def test_smearing_linear():
    field = pm_field()
    s = fl.sample_field(field, 0, 50)
    zero = fl.TestFunction(1.0, 1.0, (0.0,))
    np.testing.assert_array_equal(fl.smear(s, zero), 0.0)
    g = fl.TestFunction(0.7, 0.3)
    total = fl.smear(s, BUMP) + fl.smear(s, g)
    both = np.einsum("mk,smk->s", field.h * (BUMP(field.x) + g(field.x)), s.xi)
    np.testing.assert_allclose(total, both, atol=1e-12)


def test_bump_variance():
    assert fl.smeared_variance(pm_field(M=2000), BUMP) == pytest.approx(F.PM_BUMP_VAR, rel=1e-5)


def test_characteristic_function():
    field = pm_field()
    N = 40_000
    vals = fl.smeared_samples(field, [BUMP], N, seed=1)[:, 0]
    phi = fl.characteristic_estimate(vals)
    assert fl.characteristic_estimate(0 * vals) == 1
    assert fl.characteristic_estimate(-vals) == pytest.approx(phi.conjugate(), abs=1e-15)
    assert abs(phi - F.PM_BUMP_CHAR) < 3 / np.sqrt(N)
    assert fl.characteristic_target(F.PM_BUMP_VAR) == pytest.approx(F.PM_BUMP_CHAR, abs=1e-14)


def test_gaussianity_of_smeared_values():
    vals = fl.smeared_samples(pm_field(), [BUMP], 20_000, seed=2)[:, 0]
    g = fl.gaussianity(vals)
    assert abs(g["skewness"]) < g["tolerance"] and abs(g["excess_kurtosis"]) < 2 * g["tolerance"]


def test_clipped_support_rejected():
    with pytest.raises(InputError):
        fl.smeared_variance(pm_field(), fl.TestFunction(1.9, 0.5))
    with pytest.raises(InputError):
        fl.TestFunction(0.0, 0.0)
    with pytest.raises(InputError):
        fl.ScaledTestFunction(BUMP, 1.0, 0.0)


@settings(max_examples=20, deadline=None)
@given(eps=st.floats(0.05, 1.0), x0=st.floats(0.95, 1.05))
def test_scaled_norm_invariant(eps, x0):
    g = fl.ScaledTestFunction(BUMP, x0, eps)
    assert g.norm_sq() == BUMP.norm_sq()
    assert fl.grid_norm_sq(pm_field(M=4000), g) == pytest.approx(BUMP.norm_sq(), rel=1e-4)


# --- punctual limit and scale invariance --------------------------------------------

def test_punctual_uniform_is_eps_independent():
    rep = fl.punctual_covariance_check(pm_field(M=400), BUMP, 1.0, [1.0, 0.5, 0.25], 4000, seed=4)
    for r in rep["rows"]:
        assert abs(r["bias"]) < 1e-14 and r["grid_bias"] == pytest.approx(0.0, abs=1e-14)
        assert r["within_band"]
    assert rep["final_within_band"]


def test_punctual_linear_profile_slope():
    field = fl.ControlField.from_function(PM, lambda x: 0.5 + 0.5 * x, 800, 2.0)
    rep = fl.punctual_covariance_check(field, BUMP, 1.0, [1.0, 0.5, 0.25, 0.125], 8192, seed=5)
    assert rep["mirror"]
    assert 1.0 <= rep["log_log_slope"] <= 4.0
    assert rep["final_within_band"]


def test_punctual_eps_floor():
    with pytest.raises(InputError):
        fl.punctual_covariance_check(pm_field(M=100), BUMP, 1.0, [0.1], 100)


def test_scaling_invariance():
    rep = fl.scaling_invariance_check(pm_field(M=4000), BUMP, 1.0, [1.0, 0.5, 0.25], 8000, seed=6)
    assert rep["passed"]
    assert rep["norm_spread"] < 1e-4
    with pytest.raises(InputError):
        fl.scaling_invariance_check(fl.ControlField.from_function(PM, lambda x: 0.5 + x, 50), BUMP,
                                    0.5, [0.4], 10)


# --- errors and determinism ----------------------------------------------------------

def test_double_well_coexistence_rejected():
    with pytest.raises(PhaseBoundaryError):
        fl.local_covariance(DoubleWellModel().pressure(), [0.0])
    field = fl.ControlField.from_function(DoubleWellModel(), lambda x: np.zeros_like(x), 8)
    with pytest.raises(PhaseBoundaryError):
        fl.sample_field(field, 0, 1)


def test_local_covariance_positive():
    assert fl.local_covariance(QuadraticModel().pressure(), [0.3])[0, 0] == pytest.approx(1.0)


def test_seed_determinism_and_threads():
    field = pm_field()
    a = fl.smeared_samples(field, [BUMP], 20_000, seed=9)
    b = fl.smeared_samples(field, [BUMP], 20_000, seed=9, workers=3)
    np.testing.assert_array_equal(a, b)
    c = fl.smeared_samples(field, [BUMP], 20_000, seed=10)
    assert not np.array_equal(a, c)
    # a prefix of a longer run draws the same normals
    np.testing.assert_array_equal(fl.smeared_samples(field, [BUMP], 100, seed=9), a[:100])


def test_too_many_samples_per_chunk():
    with pytest.raises(InputError):
        fl.sample_field(pm_field(), 0, fl.CHUNK + 1)
