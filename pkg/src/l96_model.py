"""
Lorenz-96 source system: tendency, RK4 integration, one-step tangent
linear / adjoint propagator, synthetic observations and nature-run datasets.
"""

import logging
from typing import Dict, Sequence, Union

import numpy as np
from scipy.sparse.linalg import LinearOperator, aslinearoperator

try:
    from .exceptions import AlignmentError, DivergenceError, InvalidDimensionError
    from .models import ObservationSequence, Trajectory
except ImportError:
    from exceptions import AlignmentError, DivergenceError, InvalidDimensionError
    from models import ObservationSequence, Trajectory

logger = logging.getLogger(__name__)

DEFAULT_FORCING = 8.0
DEFAULT_SPINUP_STEPS = 1000

SeedLike = Union[int, np.random.Generator, np.random.SeedSequence, None]


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _check_dimension(x: np.ndarray) -> None:
    if x.shape[0] < 4:
        raise InvalidDimensionError(
            f"Lorenz-96 needs at least 4 nodes for its cyclic stencil, got D={x.shape[0]}"
        )


def l96_tendency(x: np.ndarray, forcing: float = DEFAULT_FORCING) -> np.ndarray:
    """
    dx_i/dt = x_{i-1}(x_{i+1} - x_{i-2}) - x_i + F on a cyclic domain.
    Accepts a D-vector or a D x k matrix of column states.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_dimension(x)
    x_m1 = np.roll(x, 1, axis=0)
    x_p1 = np.roll(x, -1, axis=0)
    x_m2 = np.roll(x, 2, axis=0)
    return x_m1 * (x_p1 - x_m2) - x + forcing


def rk4_step(x: np.ndarray, dt: float, forcing: float = DEFAULT_FORCING) -> np.ndarray:
    """One classical Runge-Kutta step"""
    k1 = l96_tendency(x, forcing)
    k2 = l96_tendency(x + 0.5 * dt * k1, forcing)
    k3 = l96_tendency(x + 0.5 * dt * k2, forcing)
    k4 = l96_tendency(x + dt * k3, forcing)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(x0: np.ndarray, dt: float, n_steps: int,
              forcing: float = DEFAULT_FORCING, t0: float = 0.0) -> Trajectory:
    """Integrate n_steps RK4 steps; returns n_steps + 1 states including x0"""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if n_steps < 0:
        raise ValueError(f"n_steps must be non-negative, got {n_steps}")

    x = np.asarray(x0, dtype=np.float64).copy()
    _check_dimension(x)
    states = np.empty((x.shape[0], n_steps + 1))
    states[:, 0] = x

    for step in range(1, n_steps + 1):
        x = rk4_step(x, dt, forcing)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"Lorenz-96 integration diverged at step {step}", step=step)
        states[:, step] = x

    return Trajectory(states, dt, t0)


def l96_jacobian(x: np.ndarray) -> np.ndarray:
    """Dense Jacobian of the tendency at x (forcing drops out)"""
    x = np.asarray(x, dtype=np.float64)
    _check_dimension(x)
    D = x.shape[0]
    idx = np.arange(D)
    J = -np.eye(D)
    # offsets -2, -1, +1 are distinct columns for D >= 4
    J[idx, (idx - 1) % D] = x[(idx + 1) % D] - x[(idx - 2) % D]
    J[idx, (idx + 1) % D] = x[(idx - 1) % D]
    J[idx, (idx - 2) % D] = -x[(idx - 1) % D]
    return J


def l96_propagator_matrix(x: np.ndarray, dt: float, forcing: float = DEFAULT_FORCING) -> np.ndarray:
    """Jacobian of one RK4 step at x, assembled as a D x D matrix"""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=np.float64)
    eye = np.eye(x.shape[0])

    k1 = l96_tendency(x, forcing)
    x2 = x + 0.5 * dt * k1
    k2 = l96_tendency(x2, forcing)
    x3 = x + 0.5 * dt * k2
    k3 = l96_tendency(x3, forcing)
    x4 = x + dt * k3

    K1 = l96_jacobian(x)
    K2 = l96_jacobian(x2) @ (eye + 0.5 * dt * K1)
    K3 = l96_jacobian(x3) @ (eye + 0.5 * dt * K2)
    K4 = l96_jacobian(x4) @ (eye + dt * K3)
    return eye + (dt / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)


def l96_linear_propagator(x: np.ndarray, dt: float, forcing: float = DEFAULT_FORCING) -> LinearOperator:
    """One-step tangent linear model as a LinearOperator; .rmatvec applies the adjoint"""
    return aslinearoperator(l96_propagator_matrix(x, dt, forcing))


def sample_observations(truth: Trajectory, obs_indices: Sequence[int], tau_obs: float,
                        sigma_noise: float, sigma_obs: float, seed: SeedLike = None,
                        start_step: int = 0) -> ObservationSequence:
    """
    Observe `obs_indices` every tau_obs MTU starting at `start_step`,
    adding independent N(0, sigma_noise^2) noise per component.
    """
    ratio = tau_obs / truth.dt
    every = int(round(ratio))
    if every < 1 or abs(ratio - every) > 1e-9 * max(1.0, ratio):
        raise AlignmentError(f"tau_obs={tau_obs} is not an integer multiple of dt={truth.dt}")

    indices = np.asarray(list(obs_indices), dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= truth.dim):
        raise ValueError(f"Observation indices must lie in [0, {truth.dim})")

    steps = np.arange(start_step, truth.n_times, every, dtype=np.int64)
    clean = truth.states[np.ix_(indices, steps)]
    rng = _rng(seed)
    noise = rng.normal(0.0, sigma_noise, size=clean.shape) if sigma_noise > 0 else np.zeros_like(clean)

    logger.debug(f"Sampled {steps.size} observation times of {indices.size} nodes every {every} steps")
    return ObservationSequence(
        times=truth.t0 + truth.dt * steps,
        steps=steps,
        obs_indices=indices,
        values=clean + noise,
        noise_std=float(sigma_noise),
        assumed_std=float(sigma_obs),
    )


def generate_dataset(D: int = 6, train_length: int = 100_000, test_length: int = 20_000,
                     dt: float = 0.01, forcing: float = DEFAULT_FORCING,
                     spinup: int = DEFAULT_SPINUP_STEPS, seed: SeedLike = 0) -> Dict[str, Trajectory]:
    """
    Spun-up nature run split into disjoint train and test segments.
    The first `spinup` steps are discarded.
    """
    if train_length <= spinup or test_length < 1:
        raise ValueError(
            f"train_length ({train_length}) must exceed spinup ({spinup}) and test_length must be positive"
        )

    rng = _rng(seed)
    x0 = forcing + rng.normal(0.0, 0.01, size=D)
    total = spinup + train_length + test_length
    logger.info(f"Integrating L96-{D}D nature run: {total} steps at dt={dt}")
    nature = integrate(x0, dt, total - 1, forcing)

    train = nature.segment(spinup, spinup + train_length)
    test = nature.segment(spinup + train_length, total)
    logger.info(f"Dataset ready: train {train.n_times} steps, test {test.n_times} steps")
    return {'train': train, 'test': test}
