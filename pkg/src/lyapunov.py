"""
Lyapunov spectra and finite-time Lyapunov exponents by QR re-orthonormalization
of a tangent basis pushed through one linear propagator per step.
"""

import logging
from typing import Callable, Dict, Iterable, Iterator, Sequence

import numpy as np
import scipy.linalg as la
from joblib import Parallel, delayed
from scipy.sparse.linalg import LinearOperator, aslinearoperator

try:
    from .l96_model import DEFAULT_FORCING, l96_propagator_matrix, rk4_step
    from .models import ReservoirModel
    from .reservoir import closed_loop_step, rnn_propagator
except ImportError:
    from l96_model import DEFAULT_FORCING, l96_propagator_matrix, rk4_step
    from models import ReservoirModel
    from reservoir import closed_loop_step, rnn_propagator

logger = logging.getLogger(__name__)

COLLAPSE_FLOOR = 1e-300


def l96_propagator_stream(x0: np.ndarray, dt: float, n_steps: int,
                          forcing: float = DEFAULT_FORCING) -> Iterator[np.ndarray]:
    """One-step RK4 Jacobians along the L96 trajectory from x0"""
    x = np.asarray(x0, dtype=np.float64).copy()
    for _ in range(n_steps):
        yield l96_propagator_matrix(x, dt, forcing)
        x = rk4_step(x, dt, forcing)


def rnn_propagator_stream(model: ReservoirModel, s0: np.ndarray, n_steps: int) -> Iterator[LinearOperator]:
    """Closed-loop hidden-space tangent operators along the free-running network"""
    s = np.asarray(s0, dtype=np.float64).copy()
    for _ in range(n_steps):
        yield rnn_propagator(model, s)
        s = closed_loop_step(model, s)


def _random_basis(dim: int, n_vectors: int, rng: np.random.Generator) -> np.ndarray:
    Q, _ = la.qr(rng.standard_normal((dim, n_vectors)), mode='economic')
    return Q


def _qr_recursion(propagator_stream: Iterable, n_exponents: int, n_steps: int,
                  seed: int = 0, record_steps: Sequence[int] = ()) -> Dict[str, np.ndarray]:
    """
    Push a random orthonormal basis through the stream, re-orthonormalizing
    every step. Returns summed log growth and, at each requested step count,
    the partial sums.
    """
    rng = np.random.default_rng(seed)
    stream = iter(propagator_stream)
    record = sorted(set(int(s) for s in record_steps))
    partial = np.zeros((len(record), n_exponents))
    log_growth = np.zeros(n_exponents)
    Q = None
    next_record = 0

    for step in range(1, n_steps + 1):
        try:
            op = aslinearoperator(next(stream))
        except StopIteration:
            raise ValueError(f"Propagator stream ended after {step - 1} of {n_steps} steps")
        if Q is None:
            if n_exponents > op.shape[0]:
                raise ValueError(f"Cannot compute {n_exponents} exponents in dimension {op.shape[0]}")
            Q = _random_basis(op.shape[0], n_exponents, rng)

        V = op.matmat(Q)
        Q, R = la.qr(V, mode='economic')
        growth = np.abs(np.diag(R))
        if not np.all(np.isfinite(growth)) or np.any(growth < COLLAPSE_FLOOR):
            logger.warning(f"Tangent basis lost rank at step {step}; restarting from a random basis")
            Q = _random_basis(op.shape[0], n_exponents, rng)
            growth = np.where(np.isfinite(growth) & (growth >= COLLAPSE_FLOOR), growth, 1.0)
        log_growth += np.log(growth)

        while next_record < len(record) and record[next_record] == step:
            partial[next_record] = log_growth
            next_record += 1

    return {'log_growth': log_growth, 'partial': partial, 'record_steps': np.asarray(record)}


def lyapunov_spectrum(propagator_stream: Iterable, n_exponents: int, n_steps: int,
                      dt: float, seed: int = 0) -> np.ndarray:
    """Exponents per unit time, sorted non-increasing"""
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    result = _qr_recursion(propagator_stream, n_exponents, n_steps, seed)
    exponents = result['log_growth'] / (n_steps * dt)
    return np.sort(exponents)[::-1]


def ftle(propagator_stream: Iterable, horizon_steps: int, dt: float, seed: int = 0) -> float:
    """Leading finite-time exponent over the horizon"""
    if horizon_steps < 1:
        raise ValueError("horizon_steps must be at least 1")
    return float(lyapunov_spectrum(propagator_stream, 1, horizon_steps, dt, seed)[0])


def _running_ftle(stream_factory: Callable[[int], Iterable], index: int, horizons: np.ndarray,
                  dt: float, seed: int) -> np.ndarray:
    result = _qr_recursion(stream_factory(index), 1, int(horizons.max()), seed + index, horizons)
    return result['partial'][:, 0] / (result['record_steps'] * dt)


def ftle_curve(stream_factory: Callable[[int], Iterable], horizons: Sequence[int], dt: float,
               n_initial: int = 100, seed: int = 0, n_jobs: int = 1) -> Dict[str, np.ndarray]:
    """
    Leading FTLE against horizon, averaged over initial conditions.
    `stream_factory(i)` returns the propagator stream started from initial
    condition i; each is run once up to the longest horizon.
    """
    steps = np.unique(np.asarray(horizons, dtype=np.int64))
    if steps.size == 0 or steps.min() < 1:
        raise ValueError("Horizons must be positive step counts")

    logger.info(f"FTLE curve over {n_initial} initial conditions, {steps.size} horizons")
    samples = Parallel(n_jobs=n_jobs)(
        delayed(_running_ftle)(stream_factory, i, steps, dt, seed) for i in range(n_initial)
    )
    samples = np.vstack(samples)
    return {
        'horizon_mtu': steps * dt,
        'ftle_mean': samples.mean(axis=0),
        'ftle_std': samples.std(axis=0),
        'samples': samples,
    }


def two_trajectory_exponent(step_fn: Callable[[np.ndarray], np.ndarray], x0: np.ndarray, dt: float,
                            n_steps: int, separation: float = 1e-8, seed: int = 0,
                            transient: int = 0) -> float:
    """
    Leading exponent from the growth of a renormalized separation between
    a reference and a nearby trajectory.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x0, dtype=np.float64).copy()
    for _ in range(transient):
        x = step_fn(x)

    direction = rng.standard_normal(x.shape)
    y = x + separation * direction / np.linalg.norm(direction)
    total = 0.0
    for _ in range(n_steps):
        x = step_fn(x)
        y = step_fn(y)
        distance = np.linalg.norm(y - x)
        if not np.isfinite(distance) or distance == 0.0:
            raise ValueError("Separation collapsed or diverged; adjust the initial separation")
        total += np.log(distance / separation)
        y = x + (separation / distance) * (y - x)

    return total / (n_steps * dt)
