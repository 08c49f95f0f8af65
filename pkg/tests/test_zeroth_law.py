import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import frozen as F
import oracles as o
from lte_lab import hydro
from lte_lab import zeroth_law as zl
from lte_lab.errors import DomainError, InputError
from lte_lab.models import ParamagnetModel

PM = ParamagnetModel()
EXCITED = np.diag([0.0, 1.0])


def rates(gen):
    return sorted((round(w, 12), r) for _, w, _, r in gen.jumps)


def test_qubit_jump_rates():
    gen = zl.build_davies_generator(zl.qubit_probe(), 1.0)
    assert rates(gen) == [(-1.0, pytest.approx(np.exp(-1.0), abs=1e-15)), (1.0, 1.0)]
    assert gen.detailed_balance_residual() < 1e-15


@pytest.mark.parametrize("beta", [0.3, 1.0, 4.0])
def test_qubit_gibbs_population(beta):
    G = zl.build_davies_generator(zl.qubit_probe(), beta).gibbs()
    assert G[1, 1].real == pytest.approx(1 / (1 + np.exp(beta)), abs=1e-15)


def test_large_beta_ground_state():
    G = zl.gibbs(np.diag([0.0, 1.0, 2.5]), 200.0)
    np.testing.assert_allclose(G, np.diag([1.0, 0, 0]), atol=1e-80)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_probe_gibbs_stationary(seed):
    gen = zl.build_davies_generator(zl.random_probe(4, seed), 0.8)
    assert gen.stationary_residual() < 1e-12
    assert gen.detailed_balance_residual() < 1e-12


def test_evolve_zero_time_and_gibbs_invariance():
    gen = zl.build_davies_generator(zl.random_probe(3, 5), 1.3)
    rho = np.diag([0.2, 0.3, 0.5]).astype(complex)
    np.testing.assert_array_equal(zl.evolve(gen, rho, 0.0), rho)
    G = gen.gibbs()
    np.testing.assert_allclose(zl.evolve(gen, G, 7.0), G, atol=1e-12)


def test_qubit_relaxation_matches_closed_form():
    gen = zl.build_davies_generator(zl.qubit_probe(), 1.0)
    taus = np.linspace(0, 5, 51)
    states = zl.evolve_grid(gen, EXCITED, taus)
    p, _, p_eq = o.qubit_relaxation(taus, 1.0)
    np.testing.assert_allclose([s[1, 1].real for s in states], p, atol=1e-12)
    assert p_eq == pytest.approx(F.QUBIT_P_EQ_BETA1, abs=1e-15)


def test_qubit_thermalization_rate():
    rep = zl.thermalization_check(zl.qubit_probe(), 1.0, EXCITED, 20.0)
    assert rep["converged"] and rep["monotone"]
    assert rep["populations"][1] == pytest.approx(F.QUBIT_P_EQ_BETA1, abs=1e-6)
    assert rep["fitted_rate"] == pytest.approx(1 + np.exp(-1.0), rel=1e-2)
    # coherences decay at half the population rate
    assert rep["spectral_gap"] == pytest.approx(0.5 * (1 + np.exp(-1.0)), rel=1e-12)


def test_four_level_boltzmann_populations():
    probe = zl.random_probe(4, 7)
    rho0 = np.eye(4) / 4
    rep = zl.thermalization_check(probe, 0.9, rho0, 60.0, n_grid=600)
    E = rep["energies"]
    w = np.exp(-0.9 * (E - E[0]))
    np.testing.assert_allclose(rep["populations"], w / w.sum(), atol=1e-8)
    fit = zl.BoltzmannFit().fit(E[:, None], rep["populations"])
    assert fit.beta_ == pytest.approx(0.9, abs=1e-6)
    np.testing.assert_allclose(fit.predict(E[:, None]), w / w.sum(), atol=1e-6)


@settings(max_examples=15, deadline=None)
@given(beta=st.floats(0.05, 5.0), seed=st.integers(0, 50))
def test_trace_and_hermiticity_preserved(beta, seed):
    gen = zl.build_davies_generator(zl.random_probe(3, seed), beta)
    rho = zl.evolve(gen, np.eye(3) / 3, 0.7)
    assert abs(np.trace(rho) - 1) < 1e-12
    np.testing.assert_allclose(rho, rho.conj().T, atol=1e-12)


# --- validation ------------------------------------------------------------------------

def test_probe_validation():
    with pytest.raises(InputError):
        zl.ProbeSystem(np.eye(2), (np.array([[0, 1], [1, 0]]),))
    with pytest.raises(InputError):
        zl.random_probe(9)
    with pytest.raises(InputError):
        zl.ProbeSystem(np.array([[0, 1], [0, 0]]), (np.eye(2),))
    with pytest.raises(DomainError):
        zl.build_davies_generator(zl.qubit_probe(), 0.0)
    gen = zl.build_davies_generator(zl.qubit_probe(), 1.0)
    with pytest.raises(InputError):
        zl.evolve(gen, np.eye(2), 1.0)
    with pytest.raises(InputError):
        zl.evolve_grid(gen, EXCITED, [0.0, 0.1, 0.3])


def test_boltzmann_fit_rejects_bad_input():
    with pytest.raises(InputError):
        zl.BoltzmannFit().fit(np.array([[0.0], [1.0]]), [0.5, 0.0])


# --- local probes on hydro solutions --------------------------------------------------------

def test_probe_in_uniform_state():
    sc = hydro.HydroScenario(PM, 16, -np.tanh(np.ones(16)), t_end=0.01)
    tr = hydro.solve(sc)
    rep = zl.local_probe_scenario(tr, 0.5, 0.01, zl.qubit_probe(), rho0=EXCITED)
    assert rep["local_beta"] == pytest.approx(1.0, abs=1e-12)
    assert rep["populations"][1] == pytest.approx(F.QUBIT_P_EQ_BETA1, abs=1e-6)


@pytest.mark.parametrize("x, beta", [(0.25, 0.75), (0.75, 1.25)])
def test_probe_in_driven_steady_state(x, beta):
    sc = hydro.HydroScenario(PM, 64, lambda y: -np.tanh(0.5 + y), hydro.reservoir([0.5]),
                             hydro.reservoir([1.5]))
    st_ = hydro.steady_state(sc)
    rep = zl.local_probe_scenario((st_, sc.x), x, np.inf, zl.qubit_probe())
    assert rep["local_beta"] == pytest.approx(beta, abs=1e-9)
    assert rep["fitted_beta"] == pytest.approx(beta, abs=1e-5)
    other = zl.local_probe_scenario((st_, sc.x), x, np.inf, zl.qubit_probe(), rho0=EXCITED)
    np.testing.assert_allclose(other["final_state"], rep["final_state"], atol=1e-8)


def test_probe_rejects_nonpositive_theta():
    sc = hydro.HydroScenario(PM, 8, -np.tanh(np.full(8, -0.5)), t_end=0.001)
    with pytest.raises(DomainError):
        zl.local_probe_scenario(hydro.solve(sc), 0.5, 0.001, zl.qubit_probe())
