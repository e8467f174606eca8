"""
Forecast-skill diagnostics for a trained forecaster on held-out data:
valid-prediction-time samples, leading finite-time Lyapunov exponents
against horizon, and forecast error correlations against a perfect-model
reference ensemble.
"""

import logging
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

try:
    from .assimilation.base_forecaster import BaseForecaster
    from .assimilation.cycling import steps_per
    from .exceptions import DivergenceError
    from .experiment_config import EvaluationConfig
    from .lyapunov import ftle_curve
    from .metrics import climatological_correlation, error_correlation_rmse, vpt
    from .models import Trajectory
except ImportError:
    from assimilation.base_forecaster import BaseForecaster
    from assimilation.cycling import steps_per
    from exceptions import DivergenceError
    from experiment_config import EvaluationConfig
    from lyapunov import ftle_curve
    from metrics import climatological_correlation, error_correlation_rmse, vpt
    from models import Trajectory

logger = logging.getLogger(__name__)

BATCH_SIZE = 64


class ForecastEvaluator:
    """
    Runs free forecasts of `forecaster` from synchronized states on the
    test trajectory. Every forecast starts `spinup` or more steps into
    the test data so the hidden state can be synchronized first.
    """

    def __init__(self, forecaster: BaseForecaster, test: Trajectory, sigma_clim: np.ndarray,
                 spinup: int = 1000, n_jobs: int = 1):
        self.forecaster = forecaster
        self.test = test
        self.sigma_clim = np.asarray(sigma_clim, dtype=np.float64)
        self.spinup = spinup
        self.n_jobs = n_jobs

    def start_steps(self, n_forecasts: int, n_steps: int, rng: np.random.Generator) -> np.ndarray:
        """Sorted start columns; drawn with replacement when the test data is too short"""
        candidates = np.arange(self.spinup, self.test.n_times - n_steps)
        if candidates.size == 0:
            raise ValueError(
                f"Test trajectory of {self.test.n_times} steps cannot hold spinup {self.spinup} "
                f"plus a {n_steps}-step forecast"
            )
        replace = n_forecasts > candidates.size
        if replace:
            logger.warning(f"Only {candidates.size} distinct start times; sampling with replacement")
        return np.sort(rng.choice(candidates, size=n_forecasts, replace=replace))

    def synchronized_states(self, starts: Sequence[int]) -> np.ndarray:
        """n x b forecaster states whose readouts estimate truth at each start"""
        rng = np.random.default_rng(0)
        unique, inverse = np.unique(np.asarray(starts, dtype=np.int64), return_inverse=True)
        columns = [
            self.forecaster.initial_ensemble(self.test, int(start), 1, 0.0, self.spinup, rng)[:, 0]
            for start in unique
        ]
        return np.column_stack(columns)[:, inverse]

    def forecast(self, starts: Sequence[int], n_steps: int, perturbation: Optional[np.ndarray] = None,
                 fill_on_divergence: bool = False) -> np.ndarray:
        """
        Forecasts of n_steps from each start, D x (n_steps + 1) x b.
        Column 0 is the (optionally perturbed) truth that the first step
        consumes. With fill_on_divergence, steps after a blow-up are inf.
        """
        starts = np.asarray(starts, dtype=np.int64)
        x0 = self.test.states[:, starts]
        if perturbation is not None:
            x0 = x0 + perturbation
        states = self.synchronized_states(starts)

        out = np.empty((self.forecaster.system_dim, n_steps + 1, starts.size))
        out[:, 0] = x0
        for j in range(1, n_steps + 1):
            try:
                if j == 1:
                    states = self.forecaster.step_driven(states, x0)
                else:
                    states = self.forecaster.advance(states, 1)
            except DivergenceError:
                if not fill_on_divergence:
                    raise
                logger.debug(f"Forecast from step {starts.tolist()} diverged after {j} steps")
                out[:, j:] = np.inf
                break
            out[:, j] = self.forecaster.to_system(states)
        return out

    def _forecast_robust(self, starts: np.ndarray, n_steps: int) -> np.ndarray:
        """Batch forecast; a diverging batch is redone one start at a time"""
        try:
            return self.forecast(starts, n_steps)
        except DivergenceError:
            pass
        out = np.empty((self.forecaster.system_dim, n_steps + 1, starts.size))
        for i, start in enumerate(starts):
            out[:, :, i] = self.forecast([start], n_steps, fill_on_divergence=True)[:, :, 0]
        return out

    def _vpt_batch(self, starts: np.ndarray, n_steps: int, eps: float) -> np.ndarray:
        forecasts = self._forecast_robust(starts, n_steps)
        values = np.empty(starts.size)
        for i, start in enumerate(starts):
            truth = self.test.states[:, start:start + n_steps + 1]
            values[i] = vpt(forecasts[:, :, i], truth, self.sigma_clim, eps, self.test.dt)
        return values

    def vpt_samples(self, n_forecasts: int, n_steps: int, eps: float,
                    rng: np.random.Generator) -> pd.DataFrame:
        """One VPT per forecast start"""
        starts = self.start_steps(n_forecasts, n_steps, rng)
        batches = [starts[i:i + BATCH_SIZE] for i in range(0, starts.size, BATCH_SIZE)]
        logger.info(f"Running {n_forecasts} forecasts of {n_steps} steps for VPT (eps={eps})")
        results = Parallel(n_jobs=self.n_jobs)(
            delayed(self._vpt_batch)(batch, n_steps, eps)
            for batch in tqdm(batches, desc='VPT forecasts', disable=not logger.isEnabledFor(logging.INFO))
        )
        values = np.concatenate(results) if results else np.empty(0)
        return pd.DataFrame({'start_step': starts, 'start_time': self.test.t0 + starts * self.test.dt,
                             'vpt': values})

    @staticmethod
    def vpt_histogram(samples: pd.DataFrame, n_bins: int, horizon: float) -> pd.DataFrame:
        """Histogram over [0, horizon]; edges depend only on n_bins and horizon"""
        counts, edges = np.histogram(samples['vpt'].to_numpy(), bins=n_bins, range=(0.0, horizon))
        total = max(int(counts.sum()), 1)
        return pd.DataFrame({
            'bin_left': edges[:-1],
            'bin_right': edges[1:],
            'count': counts,
            'fraction': counts / total,
        })

    def ftle(self, horizons_mtu: Sequence[float], n_initial: int, rng: np.random.Generator,
             seed: int = 0) -> pd.DataFrame:
        """Leading FTLE against horizon, averaged over n_initial start states"""
        dt = self.test.dt
        steps = [steps_per(h, dt, 'FTLE horizon') for h in horizons_mtu]
        starts = self.start_steps(n_initial, max(steps), rng)
        initial = self.synchronized_states(starts)
        forecaster = self.forecaster

        def stream_factory(i: int):
            state = initial[:, i].copy()
            while True:
                yield forecaster.propagator(state)
                state = forecaster.advance(state, 1)

        result = ftle_curve(stream_factory, steps, dt, n_initial=n_initial, seed=seed, n_jobs=self.n_jobs)
        return pd.DataFrame({
            'horizon_mtu': result['horizon_mtu'],
            'ftle_mean': result['ftle_mean'],
            'ftle_std': result['ftle_std'],
            'n_initial': n_initial,
        })

    def error_correlation(self, reference: BaseForecaster, train: Trajectory, n_members: int,
                          perturbation: float, lead: float, interval: float, n_starts: int,
                          rng: np.random.Generator) -> pd.DataFrame:
        """
        Compare forecast error correlations of this forecaster with those of
        a perfect-model reference ensemble started from the same perturbed
        states, and compare the climatological correlation with both.
        """
        dt = self.test.dt
        every = steps_per(interval, dt, 'correlation interval')
        n_steps = steps_per(lead, dt, 'correlation lead')
        leads = np.arange(every, n_steps + 1, every)
        climatology = climatological_correlation(train)
        starts = self.start_steps(n_starts, n_steps, rng)

        rows = []
        for start in tqdm(starts, desc='Correlation starts', disable=not logger.isEnabledFor(logging.INFO)):
            noise = rng.normal(0.0, perturbation, size=(self.forecaster.system_dim, n_members))
            model_ens = self.forecast(np.full(n_members, start), n_steps, noise)[:, leads]
            x = self.test.states[:, start][:, None] + noise
            reference_ens = np.empty_like(model_ens)
            for j in range(1, n_steps + 1):
                x = reference.advance(x, 1)
                if j % every == 0:
                    reference_ens[:, j // every - 1] = x

            model_ens = np.moveaxis(model_ens, 1, 0)
            reference_ens = np.moveaxis(reference_ens, 1, 0)
            model_vs_ref = error_correlation_rmse(model_ens, reference_ens)
            clim_vs_ref = error_correlation_rmse(reference_ens, reference_corr=climatology)
            clim_vs_model = error_correlation_rmse(model_ens, reference_corr=climatology)
            for i, step in enumerate(leads):
                rows.append({'start_step': int(start), 'lead_mtu': step * dt,
                             'rmse_model_vs_reference': model_vs_ref[i],
                             'rmse_climatology_vs_reference': clim_vs_ref[i],
                             'rmse_climatology_vs_model': clim_vs_model[i]})

        per_start = pd.DataFrame(rows)
        logger.info(f"Error-correlation diagnostic over {len(starts)} starts and {leads.size} leads")
        return per_start.groupby('lead_mtu', as_index=False).mean(numeric_only=True).drop(columns='start_step')


def evaluate_forecaster(evaluator: ForecastEvaluator, reference: BaseForecaster, train: Trajectory,
                        settings: EvaluationConfig, rng: np.random.Generator, seed: int = 0) -> Dict[str, pd.DataFrame]:
    """All forecast-skill tables for one model, keyed by output name"""
    samples = evaluator.vpt_samples(settings.n_forecasts, settings.forecast_steps, settings.vpt_eps, rng)
    horizon = settings.forecast_steps * evaluator.test.dt
    tables = {
        'vpt_samples': samples,
        'vpt_histogram': evaluator.vpt_histogram(samples, settings.histogram_bins, horizon),
        'ftle_curve': evaluator.ftle(settings.ftle_horizons, settings.ftle_initial, rng, seed),
        'error_correlation': evaluator.error_correlation(
            reference, train, settings.correlation_members, settings.correlation_perturbation,
            settings.correlation_lead, settings.correlation_interval, settings.correlation_starts, rng,
        ),
    }
    logger.info(f"Median VPT {samples['vpt'].median():.3f} MTU over {len(samples)} forecasts")
    return tables
