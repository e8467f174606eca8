#!/usr/bin/env python3
"""
Tests for the Lorenz-96 source system: tendency, RK4 integration, the
one-step tangent linear / adjoint propagator, observations and datasets.
Tendency cases come from test_config.json.
"""

import json
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to Python path
parent_path = Path(__file__).parent.parent
sys.path.insert(0, str(parent_path))

from src.exceptions import AlignmentError, DivergenceError, InvalidDimensionError
from src.l96_model import (generate_dataset, integrate, l96_linear_propagator, l96_propagator_matrix,
                           l96_tendency, rk4_step, sample_observations)
from src.models import Trajectory


def load_test_config():
    """Load test configuration from JSON file."""
    config_path = Path(__file__).parent / 'test_config.json'
    try:
        with open(config_path, 'r') as f:
            return json.load(f)
    except FileNotFoundError:
        print(f"Warning: Test config not found at {config_path}")
        print("Using minimal built-in test cases")
        return get_minimal_test_config()


def get_minimal_test_config():
    """Fallback test configuration if JSON file is missing."""
    return {
        "tendency_test_cases": [
            {
                "name": "Equilibrium state",
                "state": [8.0] * 6,
                "forcing": 8.0,
                "expected": [0.0] * 6,
                "description": "Fixed point"
            }
        ]
    }


def attractor_state(D=6, seed=0, steps=500):
    rng = np.random.default_rng(seed)
    return integrate(8.0 + rng.normal(0.0, 0.01, D), 0.01, steps).states[:, -1]


def test_tendency_cases():
    """Tendency matches the configured cases"""
    print("Testing L96 tendency cases...")
    for case in load_test_config().get("tendency_test_cases", []):
        got = l96_tendency(np.array(case["state"]), case["forcing"])
        assert np.allclose(got, case["expected"], atol=1e-14), f"{case['name']}: got {got}"
    print("✓ Tendency case tests passed")


def test_tendency_matches_loop_oracle():
    """Vectorized stencil equals an explicit cyclic loop"""
    print("Testing tendency against loop oracle...")
    rng = np.random.default_rng(1)
    for D in (4, 6, 40):
        x = rng.normal(0.0, 3.0, D)
        expected = np.array([x[(i - 1) % D] * (x[(i + 1) % D] - x[(i - 2) % D]) - x[i] + 8.0 for i in range(D)])
        assert np.allclose(l96_tendency(x), expected, atol=1e-12)

    X = rng.normal(size=(6, 5))
    batched = l96_tendency(X)
    for j in range(5):
        assert np.allclose(batched[:, j], l96_tendency(X[:, j]))
    print("✓ Loop oracle tests passed")


def test_small_dimension_rejected():
    with pytest.raises(InvalidDimensionError):
        l96_tendency(np.zeros(3))


def test_rk4_fourth_order():
    """Halving dt cuts the error at a fixed time by about 2^4"""
    print("Testing RK4 order...")
    x0 = attractor_state()
    T = 0.2

    def run(dt):
        return integrate(x0, dt, int(round(T / dt))).states[:, -1]

    reference = run(0.000625)
    e1 = np.linalg.norm(run(0.01) - reference)
    e2 = np.linalg.norm(run(0.005) - reference)
    ratio = e1 / e2
    assert 12.0 < ratio < 20.0, f"Error ratio {ratio:.2f} not consistent with fourth order"
    print("✓ RK4 order tests passed")


def test_integrate_shape_and_start():
    x0 = attractor_state()
    traj = integrate(x0, 0.01, 10, t0=2.0)
    assert traj.states.shape == (6, 11)
    assert np.array_equal(traj.states[:, 0], x0)
    assert np.allclose(traj.states[:, 1], rk4_step(x0, 0.01))
    assert traj.times[0] == 2.0


def test_integrate_divergence_flagged():
    with np.errstate(all='ignore'):
        with pytest.raises(DivergenceError):
            integrate(np.full(6, 1e200), 0.01, 5)


def test_propagator_adjoint_identity():
    """<M v, w> = <v, M^T w>"""
    print("Testing propagator adjoint...")
    rng = np.random.default_rng(2)
    x = attractor_state()
    M = l96_linear_propagator(x, 0.01)
    for _ in range(5):
        v, w = rng.normal(size=6), rng.normal(size=6)
        lhs = np.dot(M.matvec(v), w)
        rhs = np.dot(v, M.rmatvec(w))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))
    print("✓ Adjoint tests passed")


def test_propagator_finite_difference():
    """Tangent model matches a one-sided finite difference of rk4_step"""
    print("Testing propagator against finite differences...")
    rng = np.random.default_rng(3)
    x = attractor_state()
    M = l96_linear_propagator(x, 0.01)
    eps = 1e-6
    for _ in range(5):
        v = rng.normal(size=6)
        v /= np.linalg.norm(v)
        fd = (rk4_step(x + eps * v, 0.01) - rk4_step(x, 0.01)) / eps
        assert np.linalg.norm(fd - M.matvec(v)) < 1e-5
    print("✓ Finite difference tests passed")


def test_propagator_commutes_with_shift_at_equilibrium():
    x = np.full(6, 8.0)
    M = l96_propagator_matrix(x, 0.01)
    P = np.roll(np.eye(6), 1, axis=0)
    assert np.allclose(M @ P, P @ M, atol=1e-14)


def test_noise_free_observations_equal_truth():
    print("Testing observation sampling...")
    truth = integrate(attractor_state(), 0.01, 100)
    obs = sample_observations(truth, [0, 1, 3], 0.02, 0.0, 0.5, seed=0)
    assert np.array_equal(obs.steps, np.arange(0, 101, 2))
    assert np.array_equal(obs.values, truth.states[np.ix_([0, 1, 3], obs.steps)])
    assert np.allclose(obs.times, obs.steps * 0.01)
    assert np.allclose(obs.R, 0.25 * np.eye(3))
    print("✓ Observation sampling tests passed")


def test_observation_start_step():
    truth = Trajectory(np.zeros((6, 50)), 0.01)
    obs = sample_observations(truth, [2], 0.05, 0.0, 0.5, start_step=10)
    assert obs.steps[0] == 10
    assert obs.steps[-1] == 45


def test_observation_noise_variance():
    """Sample variance within 5% of sigma_noise^2"""
    truth = Trajectory(np.zeros((6, 10001)), 0.01)
    obs = sample_observations(truth, range(6), 0.01, 0.5, 0.5, seed=4)
    assert obs.values.size == 60006
    assert abs(obs.values.var() - 0.25) < 0.05 * 0.25


def test_misaligned_tau_obs_rejected():
    truth = Trajectory(np.zeros((6, 100)), 0.01)
    with pytest.raises(AlignmentError):
        sample_observations(truth, [0], 0.015, 0.5, 0.5)


def test_dataset_segments_disjoint_and_contiguous():
    """Train and test come from one nature run with no shared step"""
    print("Testing dataset generation...")
    data = generate_dataset(D=6, train_length=300, test_length=50, spinup=100, seed=5)
    train, test = data['train'], data['test']
    assert train.n_times == 300 and test.n_times == 50
    assert np.isclose(train.t0, 100 * 0.01)
    assert np.isclose(test.t0, train.t0 + train.n_times * train.dt)
    assert np.allclose(test.states[:, 0], rk4_step(train.states[:, -1], 0.01))

    again = generate_dataset(D=6, train_length=300, test_length=50, spinup=100, seed=5)
    assert np.array_equal(again['train'].states, train.states)
    print("✓ Dataset generation tests passed")


def main():
    """Run all L96 model tests"""
    print("Running Lorenz-96 model tests\n")

    try:
        test_tendency_cases()
        test_tendency_matches_loop_oracle()
        test_rk4_fourth_order()
        test_integrate_shape_and_start()
        test_propagator_adjoint_identity()
        test_propagator_finite_difference()
        test_propagator_commutes_with_shift_at_equilibrium()
        test_noise_free_observations_equal_truth()
        test_observation_start_step()
        test_observation_noise_variance()
        test_dataset_segments_disjoint_and_contiguous()

        print("\n✅ All Lorenz-96 tests passed!")

    except AssertionError as e:
        print(f"\n❌ Test failed: {e}")
        sys.exit(1)
    except Exception as e:
        print(f"\n❌ Unexpected error: {e}")
        sys.exit(1)


if __name__ == '__main__':
    main()
