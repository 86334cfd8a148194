import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wfcoupled._random import derived_rng
from wfcoupled.diffusion import (
    _em_kernel,
    _kernel_arrays,
    diffusion_matrix,
    diffusion_matrix_factor,
    diffusion_matrix_inverse,
    em_step,
    em_step_array,
    sde_endpoints,
    simulate_sde,
)
from wfcoupled.errors import NonFiniteState, SingularAtBoundary
from wfcoupled.fitness import full_drift
from wfcoupled.harness import integrated_autocorrelation_time
from wfcoupled.model import LocusSpec, ModelSpec, random_interior_state, random_model, validate_model

from conftest import biallelic, single_coupling


def test_diffusion_matrix_examples():
    np.testing.assert_allclose(diffusion_matrix([0.5]), [[0.25]])
    np.testing.assert_allclose(diffusion_matrix([0.2, 0.3]), [[0.16, -0.06], [-0.06, 0.21]], atol=1e-16)
    D = diffusion_matrix([0.0, 0.4, 0.3])
    assert np.all(D[0] == 0) and np.all(D[:, 0] == 0)


def test_inverse_examples():
    inv = diffusion_matrix_inverse([0.2, 0.3])
    np.testing.assert_allclose(inv, [[7.0, 2.0], [2.0, 16.0 / 3.0]], rtol=1e-14)
    np.testing.assert_allclose(inv @ diffusion_matrix([0.2, 0.3]), np.eye(2), atol=1e-14)
    p = 0.3
    assert diffusion_matrix_inverse([p])[0, 0] == pytest.approx(1 / (p * (1 - p)), rel=1e-14)
    m = validate_model(ModelSpec((LocusSpec(3, (1, 1, 1), (0, 0, 0)),)))
    with pytest.raises(SingularAtBoundary):
        diffusion_matrix_inverse([0.5, 0.5, 0.0], 0, model=m)
    with pytest.raises(SingularAtBoundary):
        diffusion_matrix_inverse([0.0, 0.5])


@settings(max_examples=80, deadline=None)
@given(st.sampled_from([2, 3, 5]), st.integers(0, 2**32 - 1))
def test_inverse_property(M, seed):
    rng = np.random.default_rng(seed)
    x = 1e-3 + (1 - M * 1e-3) * rng.dirichlet(np.full(M, 0.5))
    xr = x[:-1]
    np.testing.assert_allclose(diffusion_matrix(xr) @ diffusion_matrix_inverse(xr), np.eye(M - 1), atol=1e-10)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_symmetric_psd(M, seed):
    rng = np.random.default_rng(seed)
    x = rng.dirichlet(np.full(M, 0.3))[:-1]
    D = diffusion_matrix(x)
    np.testing.assert_array_equal(D, D.T)
    assert np.linalg.eigvalsh(D).min() >= -1e-12


def test_factor_examples():
    p = 0.3
    assert diffusion_matrix_factor([p])[0, 0] == pytest.approx(np.sqrt(p * (1 - p)), rel=1e-15)
    B = diffusion_matrix_factor([0.2, 0.3])
    np.testing.assert_allclose(B @ B.T, [[0.16, -0.06], [-0.06, 0.21]], atol=1e-14)
    assert np.all(np.triu(B, 1) == 0)
    B = diffusion_matrix_factor([0.0, 0.4, 0.3])
    assert np.all(B[:, 0] == 0)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1), st.sampled_from([1.0, 1e-6, 1e-12]))
def test_factor_reconstruction(M, seed, eps):
    rng = np.random.default_rng(seed)
    x = rng.dirichlet(np.ones(M))
    x[rng.integers(M)] = eps  # near (or on) a facet
    x /= x.sum()
    B = diffusion_matrix_factor(x[:-1])
    D = diffusion_matrix(x[:-1])
    tol = 1e-12 if eps == 1.0 else 1e-9
    assert np.max(np.abs(B @ B.T - D)) <= tol


def test_em_step_without_noise():
    m = validate_model(ModelSpec((biallelic(), biallelic())))
    x = [0.5, 0.5, 0.5, 0.5]
    np.testing.assert_array_equal(em_step(m, x, 0.01, noise=np.zeros(2)).augmented, x)
    m = single_coupling(1.5, u=(0.7, 0.4))
    x = np.array([0.3, 0.6])
    dt = 1e-2
    out = em_step(m, x, dt, noise=np.zeros(2)).reduced
    np.testing.assert_array_equal(out, x + full_drift(m, x) * dt)


def test_em_step_stays_on_simplex(rng):
    for _ in range(200):
        m = random_model(rng)
        x = random_interior_state(m, rng, concentration=0.2)
        state = em_step(m, x, 0.05, rng=rng)  # large dt forces clamping sometimes
        for xi in state.loci:
            assert np.all(xi >= 0) and abs(xi.sum() - 1) <= 1e-12


def test_em_step_nan_detected():
    m = single_coupling(1.0)
    with pytest.raises(NonFiniteState):
        em_step(m, [0.3, 0.6], 1e-3, noise=[np.nan, 0.0])


def test_kernel_matches_numpy_step(rng):
    for _ in range(50):
        m = random_model(rng)
        x = random_interior_state(m, rng, min_coord=0.02)
        xi = rng.standard_normal((1, m.reduced_dim))
        ref, _ = em_step_array(m, x, 1e-3, noise=xi[0])
        y = x.copy()
        _em_kernel(y, *_kernel_arrays(m), 1e-3, xi, 1, 0, np.empty((1, m.dim)), 0)
        np.testing.assert_allclose(y, ref, atol=1e-13, rtol=0)


def test_kernel_parent_dependent_matches_numpy():
    U = np.array([[0.0, 1.0, 2.0], [0.5, 0.0, 0.5], [3.0, 0.0, 0.0]])
    m = validate_model(ModelSpec((LocusSpec(3, (1, 1, 1), (0.2, 0, -0.1)), biallelic()), (), (U, None)))
    x = np.array([0.2, 0.5, 0.3, 0.4, 0.6])
    xi = np.array([[0.3, -1.2, 0.5]])
    ref, _ = em_step_array(m, x, 1e-3, noise=xi[0])
    y = x.copy()
    _em_kernel(y, *_kernel_arrays(m), 1e-3, xi, 1, 0, np.empty((1, 5)), 0)
    np.testing.assert_allclose(y, ref, atol=1e-13, rtol=0)


def test_simulate_sde_records_and_determinism():
    m = single_coupling(1.0)
    t0 = simulate_sde(m, [0.3, 0.6], 0.0, seed=1)
    assert len(t0) == 1
    a = simulate_sde(m, [0.3, 0.6], 1.0, dt=1e-3, thin=100, seed=4)
    b = simulate_sde(m, [0.3, 0.6], 1.0, dt=1e-3, thin=100, seed=4)
    assert len(a) == 11
    np.testing.assert_allclose(a.times, np.arange(11) * 0.1)
    np.testing.assert_array_equal(a.states, b.states)
    assert np.all(a.states >= 0)


def test_chunked_noise_is_seamless(monkeypatch):
    import wfcoupled.diffusion as dmod

    m = single_coupling(1.0)
    full = simulate_sde(m, [0.3, 0.6], 5.0, thin=7, seed=2)
    monkeypatch.setattr(dmod, "NOISE_CHUNK", 333)
    # a different chunking draws the same normals in the same order
    chunked = dmod.simulate_sde(m, [0.3, 0.6], 5.0, thin=7, seed=2)
    np.testing.assert_array_equal(full.states, chunked.states)


@pytest.mark.slow
def test_neutral_long_run_mean():
    m = validate_model(ModelSpec((biallelic((1.0, 1.0)),)))
    traj = simulate_sde(m, [0.5], 2000.0, dt=1e-3, thin=100, seed=7)
    x = traj.states[1:, 0]
    tau = integrated_autocorrelation_time(x)
    se = x.std() * np.sqrt(tau / len(x))
    assert abs(x.mean() - 0.5) <= 3 * se


@pytest.mark.slow
def test_uncoupled_loci_are_uncorrelated():
    m = validate_model(ModelSpec((biallelic((1.0, 1.0)), biallelic((0.7, 1.3)))))
    traj = simulate_sde(m, [0.5, 0.5], 2000.0, thin=100, seed=8)
    x, y = traj.states[1:, 0], traj.states[1:, 2]
    n_eff = len(x) / max(integrated_autocorrelation_time(x), integrated_autocorrelation_time(y))
    assert abs(np.corrcoef(x, y)[0, 1]) <= 3 / np.sqrt(n_eff)


def test_sde_endpoints_shape():
    ends = sde_endpoints(single_coupling(1.0), [0.2, 0.7], 0.1, 5, seed=1)
    assert ends.shape == (5, 4)
    np.testing.assert_allclose(ends[:, 0] + ends[:, 1], 1.0)
    again = sde_endpoints(single_coupling(1.0), [0.2, 0.7], 0.1, 5, seed=1)
    np.testing.assert_array_equal(ends, again)
    assert not np.array_equal(ends[0], ends[1])
    assert derived_rng(1, 0).random() != derived_rng(1, 1).random()
