#!/usr/bin/env python3
"""
Tests for the reservoir network: construction, recurrence, readout
training, closed-loop forecasts and the hidden-space tangent model.
"""

import dataclasses
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to Python path
parent_path = Path(__file__).parent.parent
sys.path.insert(0, str(parent_path))

from src.exceptions import NotTrainedError, NumericalError
from src.l96_model import integrate
from src.models import MacroParams
from src.reservoir import (closed_loop_step, fit_readout, free_forecast, init_reservoir, readout,
                           readout_normal_equations, rnn_propagator, solve_readout, step_hidden,
                           synchronize, synchronize_final, train_readout)


def small_model(N=50, D=3, seed=0, rho=0.6, sigma_in=0.5, leak=0.8, out_scale=0.05):
    """Reservoir with a random readout, for tests that do not need training"""
    macro = MacroParams(rho=rho, sigma_in=sigma_in, leak=leak, tikhonov=1e-6)
    model = init_reservoir(N, D, D, density=0.2, seed=seed, macro=macro)
    W_out = np.random.default_rng(seed + 100).normal(0.0, out_scale, size=(D, N))
    return dataclasses.replace(model, W_out=W_out)


def l96_driving(D=6, steps=3000, seed=0):
    rng = np.random.default_rng(seed)
    return integrate(8.0 + rng.normal(0.0, 0.01, D), 0.01, steps)


def test_init_sparsity_and_spectral_radius():
    """Density 0.01 at N=1600 gives about 25,600 non-zeros and unit spectral radius"""
    print("Testing reservoir initialization...")
    model = init_reservoir(1600, 6, 6, density=0.01, seed=0)
    assert abs(model.W_res.nnz - 25_600) <= 256, f"nnz={model.W_res.nnz}"
    assert model.W_in.shape == (1600, 6)
    assert np.all(np.abs(model.W_in) <= 1.0)
    assert not model.is_trained

    small = init_reservoir(300, 6, 6, density=0.05, seed=1)
    radius = np.max(np.abs(np.linalg.eigvals(small.W_res.toarray())))
    assert abs(radius - 1.0) < 1e-6, f"Spectral radius {radius}"
    print("✓ Initialization tests passed")


def test_init_deterministic():
    a = init_reservoir(200, 6, 6, density=0.05, seed=7)
    b = init_reservoir(200, 6, 6, density=0.05, seed=7)
    c = init_reservoir(200, 6, 6, density=0.05, seed=8)
    assert (a.W_res != b.W_res).nnz == 0
    assert np.array_equal(a.W_in, b.W_in)
    assert not np.array_equal(a.W_in, c.W_in)


def test_init_rejects_bad_arguments():
    with pytest.raises(ValueError):
        init_reservoir(0, 6, 6)
    with pytest.raises(ValueError):
        init_reservoir(10, 6, 6, density=1.5)


def test_step_hidden_limits():
    """Leak 0 keeps the state; leak 1 stays in [-1, 1]"""
    print("Testing recurrence...")
    rng = np.random.default_rng(0)
    model = small_model()
    s = rng.normal(0.0, 2.0, 50)
    x = rng.normal(0.0, 5.0, 3)

    frozen = dataclasses.replace(model, macro=dataclasses.replace(model.macro, leak=0.0))
    assert np.array_equal(step_hidden(frozen, s, x), s)

    full = dataclasses.replace(model, macro=dataclasses.replace(model.macro, leak=1.0))
    assert np.all(np.abs(step_hidden(full, s, x)) <= 1.0)
    print("✓ Recurrence limit tests passed")


def test_step_hidden_dense_oracle():
    rng = np.random.default_rng(1)
    model = small_model()
    m = model.macro
    s, x = rng.normal(size=50), rng.normal(size=3)
    expected = m.leak * np.tanh(m.rho * model.W_res.toarray() @ s + m.sigma_in * model.W_in @ x) + (1 - m.leak) * s
    assert np.allclose(step_hidden(model, s, x), expected, atol=1e-12, rtol=0)

    S, X = rng.normal(size=(50, 4)), rng.normal(size=(3, 4))
    batched = step_hidden(model, S, X)
    for j in range(4):
        assert np.allclose(batched[:, j], step_hidden(model, S[:, j], X[:, j]))


def test_readout_requires_training():
    model = init_reservoir(20, 3, 3, density=0.2, seed=0)
    with pytest.raises(NotTrainedError):
        readout(model, np.zeros(20))
    assert np.array_equal(readout(small_model(N=20), np.zeros(20)), np.zeros(3))


def test_train_readout_oracles():
    """Ridge closed form, pseudo-inverse limit, and large-beta shrinkage"""
    print("Testing readout training...")
    rng = np.random.default_rng(2)
    S = rng.normal(size=(3, 5))
    X = rng.normal(size=(2, 5))

    beta = 1e-2
    expected = X @ S.T @ np.linalg.inv(S @ S.T + beta * np.eye(3))
    assert np.allclose(train_readout(S, X, beta), expected, atol=1e-10, rtol=0)
    assert np.allclose(train_readout(S, X, 1e-12), X @ np.linalg.pinv(S), atol=1e-6)
    assert np.linalg.norm(train_readout(S, X, 1e12)) < 1e-6

    W = train_readout(S, X, beta)

    def loss(W_):
        return np.sum((W_ @ S - X) ** 2) + beta * np.sum(W_ ** 2)

    for _ in range(5):
        assert loss(W + 1e-3 * rng.normal(size=W.shape)) > loss(W)

    with pytest.raises(ValueError):
        train_readout(S, X, 0.0)
    print("✓ Readout training tests passed")


def test_indefinite_system_reports_numerical_error():
    with pytest.raises(NumericalError):
        solve_readout(-np.eye(3), np.ones((2, 3)), 1e-6)


def test_streamed_normal_equations_match_dense():
    """Chunked accumulation equals S S^T and X S^T over the post-washout columns"""
    model = small_model(N=30, D=6)
    driving = l96_driving(steps=499)
    eqs = readout_normal_equations(model, driving, washout=100)
    hidden = synchronize(model, driving).states[:, 100:]
    assert np.allclose(eqs['gram'], hidden @ hidden.T, rtol=1e-10, atol=1e-10)
    assert np.allclose(eqs['cross'], driving.states[:, 100:] @ hidden.T, rtol=1e-10, atol=1e-10)


def test_synchronize_final_matches_synchronize():
    model = small_model(N=30, D=6)
    driving = l96_driving(steps=99)
    hidden = synchronize(model, driving)
    final = synchronize_final(model, driving.states)
    assert np.allclose(final, step_hidden(model, hidden.states[:, -1], driving.states[:, -1]))


def test_free_forecast_first_step():
    """n = 1: one recurrence step on x0 followed by the readout"""
    print("Testing free forecast...")
    rng = np.random.default_rng(3)
    model = small_model()
    s0, x0 = rng.normal(size=50), rng.normal(size=3)
    run = free_forecast(model, s0, x0, 1)
    assert run['states'].n_times == 2
    assert np.array_equal(run['states'].states[:, 0], x0)
    assert np.array_equal(run['hidden'].states[:, 0], s0)
    s1 = step_hidden(model, s0, x0)
    assert np.allclose(run['hidden'].states[:, 1], s1)
    assert np.allclose(run['states'].states[:, 1], readout(model, s1))

    longer = free_forecast(model, s0, x0, 5)
    assert np.allclose(longer['hidden'].states[:, 2], closed_loop_step(model, s1))
    print("✓ Free forecast tests passed")


def test_propagator_identity_when_frozen():
    model = small_model()
    frozen = dataclasses.replace(model, macro=dataclasses.replace(model.macro, leak=0.0))
    v = np.random.default_rng(4).normal(size=50)
    M = rnn_propagator(frozen, np.zeros(50))
    assert np.allclose(M.matvec(v), v)
    assert np.allclose(M.rmatvec(v), v)


def test_transposed_recurrence_built_once():
    model = small_model()
    first = model.W_res_T
    rng = np.random.default_rng(6)
    u = rng.normal(size=50)
    for _ in range(3):
        rnn_propagator(model, rng.normal(0.0, 0.5, 50)).rmatvec(u)
    assert model.W_res_T is first
    assert (first != model.W_res.T).nnz == 0

    # a replaced recurrence gets its own transpose
    scaled = dataclasses.replace(model, W_res=(2.0 * model.W_res).tocsr())
    assert scaled.W_res_T is not first
    assert np.allclose(scaled.W_res_T.toarray(), 2.0 * first.toarray())


def test_propagator_adjoint_and_finite_difference():
    print("Testing hidden-space tangent model...")
    rng = np.random.default_rng(5)
    model = small_model()
    s = rng.normal(0.0, 0.5, 50)
    M = rnn_propagator(model, s)
    for _ in range(5):
        v, w = rng.normal(size=50), rng.normal(size=50)
        lhs, rhs = np.dot(M.matvec(v), w), np.dot(v, M.rmatvec(w))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))

    eps = 1e-6
    for _ in range(5):
        v = rng.normal(size=50)
        v /= np.linalg.norm(v)
        fd = (closed_loop_step(model, s + eps * v) - closed_loop_step(model, s)) / eps
        assert np.linalg.norm(fd - M.matvec(v)) < 1e-5

    V = rng.normal(size=(50, 3))
    assert np.allclose(M.matmat(V), np.column_stack([M.matvec(V[:, j]) for j in range(3)]))
    print("✓ Tangent model tests passed")


def test_echo_state_synchronization():
    """Two different initial hidden states forget themselves under the same driving"""
    model = init_reservoir(100, 6, 6, density=0.1, seed=3,
                           macro=MacroParams(rho=0.3, sigma_in=0.5, leak=1.0, tikhonov=1e-6))
    driving = l96_driving(steps=2999).states
    rng = np.random.default_rng(6)
    a = synchronize_final(model, driving, rng.uniform(-1, 1, 100))
    b = synchronize_final(model, driving, rng.uniform(-1, 1, 100))
    assert np.linalg.norm(a - b) < 1e-6


def test_fit_readout_reconstructs_input():
    """A trained readout recovers the driving signal on the training data"""
    model = init_reservoir(200, 6, 6, density=0.05, seed=2,
                           macro=MacroParams(rho=0.3, sigma_in=0.1, leak=0.7, tikhonov=1e-8))
    train = l96_driving(steps=3999)
    trained = fit_readout(model, train, washout=500)
    hidden = synchronize(trained, train)
    error = trained.W_out @ hidden.states[:, 500:] - train.states[:, 500:]
    assert np.sqrt(np.mean(error ** 2)) < 0.1 * train.states.std()
    assert trained.is_trained and trained.d_out == 6


def main():
    """Run all reservoir tests"""
    print("Running reservoir network tests\n")

    try:
        test_init_sparsity_and_spectral_radius()
        test_init_deterministic()
        test_step_hidden_limits()
        test_step_hidden_dense_oracle()
        test_train_readout_oracles()
        test_streamed_normal_equations_match_dense()
        test_synchronize_final_matches_synchronize()
        test_free_forecast_first_step()
        test_propagator_identity_when_frozen()
        test_transposed_recurrence_built_once()
        test_propagator_adjoint_and_finite_difference()
        test_echo_state_synchronization()
        test_fit_readout_reconstructs_input()

        print("\n✅ All reservoir tests passed!")

    except AssertionError as e:
        print(f"\n❌ Test failed: {e}")
        sys.exit(1)
    except Exception as e:
        print(f"\n❌ Unexpected error: {e}")
        sys.exit(1)


if __name__ == '__main__':
    main()
