"""
Scores used across experiments: climatological normalization, normalized
RMSE, valid prediction time, and forecast error-correlation diagnostics.
"""

import logging
from typing import Optional, Sequence, Union

import numpy as np

try:
    from .exceptions import CorrelationError
    from .models import Trajectory
except ImportError:
    from exceptions import CorrelationError
    from models import Trajectory

logger = logging.getLogger(__name__)

DEFAULT_VPT_THRESHOLD = 0.2

ArrayOrTrajectory = Union[np.ndarray, Trajectory]


def _states(data: ArrayOrTrajectory) -> np.ndarray:
    states = data.states if isinstance(data, Trajectory) else np.asarray(data, dtype=np.float64)
    return states[:, None] if states.ndim == 1 else states


def climatological_std(train: ArrayOrTrajectory) -> np.ndarray:
    """Per-variable standard deviation over time, population (1/T) convention"""
    states = _states(train)
    if states.shape[1] < 2:
        raise ValueError("Climatological std needs at least two time steps")
    return states.std(axis=1, ddof=0)


def _subset(D: int, subset: Optional[Sequence[int]]) -> np.ndarray:
    return np.arange(D) if subset is None else np.asarray(list(subset), dtype=np.int64)


def nrse(estimate: ArrayOrTrajectory, truth: ArrayOrTrajectory, sigma_clim: np.ndarray) -> np.ndarray:
    """Normalized root-square error per node and time (D x T)"""
    est, ref = _states(estimate), _states(truth)
    sigma = np.asarray(sigma_clim, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("Climatological std must be strictly positive for normalization")
    return np.abs(est - ref) / sigma[:, None]


def nrmse(estimate: ArrayOrTrajectory, truth: ArrayOrTrajectory, sigma_clim: np.ndarray,
          subset: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Per-time RMS of (estimate - truth) / sigma_clim over the node subset.
    A value of 1.0 equals the climatological spread.
    """
    est, ref = _states(estimate), _states(truth)
    if est.shape != ref.shape:
        raise ValueError(f"Estimate shape {est.shape} does not match truth shape {ref.shape}")

    idx = _subset(est.shape[0], subset)
    if idx.size == 0:
        return np.full(est.shape[1], np.nan)
    sigma = np.asarray(sigma_clim, dtype=np.float64)[idx]
    if np.any(sigma <= 0):
        raise ValueError(f"Zero climatological std at nodes {idx[sigma <= 0].tolist()}")

    scaled = (est[idx] - ref[idx]) / sigma[:, None]
    return np.sqrt(np.mean(scaled ** 2, axis=0))


def time_mean_nrmse(series: np.ndarray, times: np.ndarray, start_time: float = 0.0,
                    end_time: Optional[float] = None) -> float:
    """Mean of an NRMSE series over [start_time, end_time]"""
    series = np.asarray(series, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    mask = times >= start_time
    if end_time is not None:
        mask &= times <= end_time
    if not np.any(mask):
        return float('nan')
    return float(np.mean(series[mask]))


def vpt(forecast: ArrayOrTrajectory, truth: ArrayOrTrajectory, sigma_clim: np.ndarray,
        eps: float = DEFAULT_VPT_THRESHOLD, dt: Optional[float] = None) -> float:
    """
    Valid prediction time: dt times the first grid index whose normalized
    error reaches eps. Column 0 is the forecast start. A forecast that never
    reaches eps is valid for the whole horizon.
    """
    if not eps > 0:
        raise ValueError(f"VPT threshold must be positive, got {eps}")
    if dt is None:
        if not isinstance(forecast, Trajectory):
            raise ValueError("dt is required when forecast is a bare array")
        dt = forecast.dt

    errors = nrmse(forecast, truth, sigma_clim)
    crossed = np.flatnonzero(errors >= eps)
    if crossed.size == 0:
        return float((errors.size - 1) * dt)
    return float(crossed[0] * dt)


def error_correlation(ensemble: np.ndarray) -> np.ndarray:
    """D x D correlation matrix of ensemble perturbations (members as columns)"""
    members = np.asarray(ensemble, dtype=np.float64)
    if members.ndim != 2 or members.shape[1] < 2:
        raise CorrelationError("Error correlation needs at least two ensemble members")
    variance = members.var(axis=1)
    if np.any(variance <= 0):
        raise CorrelationError(f"Zero ensemble variance at nodes {np.flatnonzero(variance <= 0).tolist()}")
    return np.corrcoef(members)


def climatological_correlation(train: ArrayOrTrajectory) -> np.ndarray:
    """Correlation between state variables over the training period"""
    return error_correlation(_states(train))


def error_correlation_rmse(ens_a: np.ndarray, ens_b: Optional[np.ndarray] = None,
                           reference_corr: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Elementwise RMSE between correlation matrices over time.
    ens_a is n_times x D x k (a single D x k ensemble counts as one time).
    Compare against another ensemble series ens_b, or against a fixed
    D x D matrix passed as reference_corr.
    """
    if (ens_b is None) == (reference_corr is None):
        raise ValueError("Pass exactly one of ens_b and reference_corr")
    ens_a = np.asarray(ens_a, dtype=np.float64)
    if ens_a.ndim == 2:
        ens_a = ens_a[None]

    if reference_corr is not None:
        corr_b = np.asarray(reference_corr, dtype=np.float64)
        if corr_b.shape != (ens_a.shape[1], ens_a.shape[1]):
            raise CorrelationError(f"reference_corr must be {ens_a.shape[1]} x {ens_a.shape[1]}, got {corr_b.shape}")
    else:
        ens_b = np.asarray(ens_b, dtype=np.float64)
        if ens_b.ndim == 2:
            ens_b = ens_b[None]
        if ens_b.shape[0] != ens_a.shape[0] or ens_b.shape[1] != ens_a.shape[1]:
            raise CorrelationError(f"Ensemble series shapes {ens_a.shape} and {ens_b.shape} do not align")

    out = np.empty(ens_a.shape[0])
    for t in range(ens_a.shape[0]):
        corr_a = error_correlation(ens_a[t])
        corr_t = corr_b if reference_corr is not None else error_correlation(ens_b[t])
        out[t] = np.sqrt(np.mean((corr_a - corr_t) ** 2))
    return out
