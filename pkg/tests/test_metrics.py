#!/usr/bin/env python3
"""
Tests for scoring: climatological std, normalized RMSE, valid prediction
time and error-correlation RMSE. VPT cases come from test_config.json.
"""

import json
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to Python path
parent_path = Path(__file__).parent.parent
sys.path.insert(0, str(parent_path))

from src.exceptions import CorrelationError
from src.l96_model import integrate
from src.metrics import (climatological_std, error_correlation, error_correlation_rmse, nrmse, nrse,
                         time_mean_nrmse, vpt)
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
        "vpt_test_cases": [
            {
                "name": "Ramp crossing at step 37",
                "n_steps": 100,
                "slope": 0.2 / 36.5,
                "eps": 0.2,
                "dt": 0.01,
                "expected": 0.37,
                "description": "Constructed error ramp"
            }
        ]
    }


def test_climatological_std_conventions():
    print("Testing climatological std...")
    assert np.array_equal(climatological_std(np.ones((3, 10))), np.zeros(3))
    a = np.array([1.5, -2.0, 0.25])
    two_point = np.column_stack([a, -a])
    assert np.allclose(climatological_std(two_point), np.abs(a))
    with pytest.raises(ValueError):
        climatological_std(np.ones((3, 1)))
    print("✓ Climatological std tests passed")


def test_climatological_std_streaming_oracle():
    """Matches a one-pass Welford accumulation"""
    traj = integrate(np.full(6, 8.0) + 0.01 * np.arange(6), 0.01, 10_000)
    mean = np.zeros(6)
    m2 = np.zeros(6)
    for n, x in enumerate(traj.states.T, start=1):
        delta = x - mean
        mean += delta / n
        m2 += delta * (x - mean)
    oracle = np.sqrt(m2 / traj.n_times)
    assert np.allclose(climatological_std(traj), oracle, atol=1e-10, rtol=0)


def test_nrmse_basic_values():
    print("Testing normalized RMSE...")
    rng = np.random.default_rng(0)
    truth = rng.normal(size=(6, 20))
    sigma = rng.uniform(0.5, 2.0, 6)
    assert np.allclose(nrmse(truth, truth, sigma), 0.0)
    assert np.allclose(nrmse(truth + sigma[:, None], truth, sigma), 1.0)

    estimate = truth.copy()
    estimate[[0, 1, 3]] += 2.0 * sigma[[0, 1, 3], None]
    assert np.allclose(nrmse(estimate, truth, sigma, [0, 1, 3]), 2.0)
    assert np.allclose(nrmse(estimate, truth, sigma, [2, 4, 5]), 0.0)
    assert np.all(np.isnan(nrmse(estimate, truth, sigma, [])))
    print("✓ Normalized RMSE tests passed")


def test_nrmse_rejects_zero_sigma():
    sigma = np.array([1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        nrmse(np.ones((3, 2)), np.zeros((3, 2)), sigma)
    # the zero lies outside the subset
    assert np.allclose(nrmse(np.ones((3, 2)), np.zeros((3, 2)), sigma, [0, 2]), 1.0)


def test_nrmse_affine_invariance():
    rng = np.random.default_rng(1)
    est, truth = rng.normal(size=(4, 10)), rng.normal(size=(4, 10))
    sigma = rng.uniform(0.5, 1.5, 4)
    scale, shift = rng.uniform(0.1, 10.0, 4), rng.normal(size=4)
    transformed = nrmse(scale[:, None] * est + shift[:, None], scale[:, None] * truth + shift[:, None],
                        scale * sigma)
    assert np.allclose(transformed, nrmse(est, truth, sigma))


def test_nrse_per_node():
    sigma = np.array([1.0, 2.0])
    values = nrse(np.array([[3.0], [-4.0]]), np.zeros((2, 1)), sigma)
    assert np.allclose(values[:, 0], [3.0, 2.0])


def test_time_mean_window():
    series = np.arange(10, dtype=float)
    times = 0.5 * np.arange(10)
    assert time_mean_nrmse(series, times, 2.0) == np.mean(series[4:])
    assert time_mean_nrmse(series, times, 1.0, 2.0) == np.mean(series[2:5])
    assert np.isnan(time_mean_nrmse(series, times, 100.0))


def test_vpt_cases():
    print("Testing valid prediction time...")
    sigma = np.array([1.0, 2.0, 0.5])
    truth = np.zeros((3, 101))
    assert vpt(truth, truth, sigma, 0.2, dt=0.01) == pytest.approx(1.0)

    far = truth + 10.0
    assert vpt(far, truth, sigma, 0.2, dt=0.01) == 0.0

    for case in load_test_config().get("vpt_test_cases", []):
        steps = np.arange(case["n_steps"] + 1)
        forecast = truth[:, :steps.size] + case["slope"] * steps[None, :] * sigma[:, None]
        got = vpt(Trajectory(forecast, case["dt"]), truth[:, :steps.size], sigma, case["eps"])
        assert got == pytest.approx(case["expected"]), f"{case['name']}: got {got}"

    with pytest.raises(ValueError):
        vpt(truth, truth, sigma, 0.2)
    print("✓ Valid prediction time tests passed")


def test_vpt_monotone_in_error():
    rng = np.random.default_rng(2)
    sigma = np.ones(3)
    truth = np.zeros((3, 60))
    larger = np.cumsum(np.abs(rng.normal(0.0, 0.02, (3, 60))), axis=1)
    smaller = 0.5 * larger
    assert vpt(smaller, truth, sigma, 0.2, dt=0.01) >= vpt(larger, truth, sigma, 0.2, dt=0.01)


def test_error_correlation_properties():
    print("Testing error correlation diagnostics...")
    rng = np.random.default_rng(3)
    ens = rng.normal(size=(5, 30))
    corr = error_correlation(ens)
    assert np.allclose(corr, corr.T)
    assert np.allclose(np.diag(corr), 1.0)
    assert np.all(np.abs(corr) <= 1.0 + 1e-12)

    series = np.stack([ens, ens + 0.1])
    assert np.allclose(error_correlation_rmse(series, series), 0.0)
    print("✓ Error correlation property tests passed")


def test_two_member_hand_oracle():
    """With two members every off-diagonal correlation is +1 or -1"""
    ens = np.array([[1.0, -1.0], [2.0, 0.0], [0.0, 3.0]])
    expected = np.array([[1.0, 1.0, -1.0], [1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]])
    assert np.allclose(error_correlation(ens), expected)

    identity = np.eye(3)
    # six off-diagonal entries of magnitude 1 over nine entries
    assert np.allclose(error_correlation_rmse(ens, reference_corr=identity), np.sqrt(6.0 / 9.0))


def test_correlation_rmse_single_time_ensembles():
    """A 2-D second argument is one ensemble, even when it is square"""
    print("Testing correlation RMSE on single-time ensembles...")
    rng = np.random.default_rng(11)
    a = rng.normal(size=(6, 6))
    b = rng.normal(size=(6, 6))
    expected = np.sqrt(np.mean((np.corrcoef(a) - np.corrcoef(b)) ** 2))
    result = error_correlation_rmse(a, b)
    assert result.shape == (1,)
    assert np.isclose(result[0], expected)

    wide, narrow = rng.normal(size=(6, 10)), rng.normal(size=(6, 8))
    expected = np.sqrt(np.mean((np.corrcoef(wide) - np.corrcoef(narrow)) ** 2))
    assert np.isclose(error_correlation_rmse(wide, narrow)[0], expected)

    # the same square array as a fixed reference is compared directly
    fixed = np.corrcoef(b)
    assert np.isclose(error_correlation_rmse(a, reference_corr=fixed)[0],
                      np.sqrt(np.mean((np.corrcoef(a) - fixed) ** 2)))
    print("✓ Single-time correlation RMSE tests passed")


def test_correlation_rmse_argument_checks():
    a = np.random.default_rng(12).normal(size=(2, 4, 5))
    with pytest.raises(ValueError):
        error_correlation_rmse(a)
    with pytest.raises(ValueError):
        error_correlation_rmse(a, a, reference_corr=np.eye(4))
    with pytest.raises(CorrelationError):
        error_correlation_rmse(a, reference_corr=np.eye(3))
    with pytest.raises(CorrelationError):
        error_correlation_rmse(a, a[:1])


def test_zero_variance_rejected():
    ens = np.array([[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]])
    with pytest.raises(CorrelationError):
        error_correlation(ens)
    with pytest.raises(CorrelationError):
        error_correlation(np.ones((3, 1)))


def main():
    """Run all metric tests"""
    print("Running metric tests\n")

    try:
        test_climatological_std_conventions()
        test_climatological_std_streaming_oracle()
        test_nrmse_basic_values()
        test_nrmse_affine_invariance()
        test_nrse_per_node()
        test_time_mean_window()
        test_vpt_cases()
        test_vpt_monotone_in_error()
        test_error_correlation_properties()
        test_two_member_hand_oracle()
        test_correlation_rmse_single_time_ensembles()

        print("\n✅ All metric tests passed!")

    except AssertionError as e:
        print(f"\n❌ Test failed: {e}")
        sys.exit(1)
    except Exception as e:
        print(f"\n❌ Unexpected error: {e}")
        sys.exit(1)


if __name__ == '__main__':
    main()
