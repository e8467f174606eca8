"""
Forecast-update cycling over a twin-experiment window.

Cycle 0 is placed at nature column `start_step` (= the synchronization
spinup); each later cycle is tau_da further on. All errors are scored in
system space against the nature run.
"""

import logging
import time
from typing import Callable, Dict, Optional

import numpy as np

from .base_forecaster import BaseForecaster
from .direct_insertion import direct_insertion
from .etkf import etkf_update
from .fourdvar import fourdvar_analysis

try:
    from ..exceptions import AlignmentError, DivergenceError
    from ..metrics import nrmse, nrse
    from ..models import (CycleConfig, CycleDiagnostics, CycleRecord, HiddenEnsemble,
                          ObservationSequence, ObsWindow, Trajectory)
except ImportError:
    import sys
    from pathlib import Path
    sys.path.append(str(Path(__file__).parent.parent))
    from exceptions import AlignmentError, DivergenceError
    from metrics import nrmse, nrse
    from models import (CycleConfig, CycleDiagnostics, CycleRecord, HiddenEnsemble,
                        ObservationSequence, ObsWindow, Trajectory)

logger = logging.getLogger(__name__)

SCHEMES = ('direct_insertion', 'etkf', 'fourdvar')

# update(members n x k, y, obs indices) -> analysis members n x k
EnsembleUpdate = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def steps_per(interval: float, dt: float, label: str) -> int:
    """Number of model steps in `interval`; it must be an integer multiple of dt"""
    ratio = interval / dt
    steps = int(round(ratio))
    if steps < 1 or abs(ratio - steps) > 1e-9 * max(1.0, ratio):
        raise AlignmentError(f"{label}={interval} is not an integer multiple of dt={dt}")
    return steps


class AssimilationCycler:
    """
    Runs one scheme over the experiment window and collects per-cycle records.
    """

    def __init__(self, forecaster: BaseForecaster, nature: Trajectory, obs: ObservationSequence,
                 cfg: CycleConfig, sigma_clim: np.ndarray, rng: np.random.Generator,
                 start_step: Optional[int] = None):
        self.forecaster = forecaster
        self.nature = nature
        self.obs = obs
        self.cfg = cfg
        self.sigma_clim = np.asarray(sigma_clim, dtype=np.float64)
        self.rng = rng
        self.start_step = cfg.spinup if start_step is None else start_step

        self.da_steps = steps_per(cfg.tau_da, nature.dt, 'tau_da')
        self.n_cycles = int(round(cfg.duration / cfg.tau_da))
        last_step = self.start_step + self.n_cycles * self.da_steps
        if last_step >= nature.n_times:
            raise AlignmentError(
                f"Nature run has {nature.n_times} steps; cycling needs {last_step + 1}"
            )

        self.obs_lookup = obs.step_lookup()
        self.observed = obs.obs_indices
        self.unobserved = np.setdiff1d(np.arange(nature.dim), self.observed)
        self.diagnostics: Optional[CycleDiagnostics] = None
        self._bad_streak = 0

    def _offset(self) -> Optional[np.ndarray]:
        if self.cfg.init_offset_std <= 0:
            return None
        return self.rng.normal(0.0, self.cfg.init_offset_std, size=self.nature.dim)

    def _initial_states(self, k: int) -> np.ndarray:
        return self.forecaster.initial_ensemble(
            self.nature, self.start_step, k, self.cfg.sigma_init, self.cfg.spinup, self.rng, self._offset()
        )

    def _observation(self, step: int) -> Optional[np.ndarray]:
        col = self.obs_lookup.get(step)
        return None if col is None else self.obs.values[:, col]

    def _record(self, step: int, analysis_sys: np.ndarray, background_sys: np.ndarray,
                y: Optional[np.ndarray], analysis_members_sys: Optional[np.ndarray] = None) -> bool:
        """Append one record; returns False once the divergence patience is exhausted"""
        truth = self.nature.states[:, step]
        a = analysis_sys[:, None]
        t = truth[:, None]

        def score(subset) -> float:
            return float(nrmse(a, t, self.sigma_clim, subset)[0]) if len(subset) else float('nan')

        if y is not None and y.size:
            innovation = y - background_sys[self.observed]
            innovation_mean, innovation_var = float(innovation.mean()), float(innovation.var())
        else:
            innovation_mean = innovation_var = float('nan')

        spread = 0.0
        if analysis_members_sys is not None and analysis_members_sys.shape[1] > 1:
            spread = float(np.sqrt(np.mean(analysis_members_sys.var(axis=1, ddof=1))))

        record = CycleRecord(
            cycle=len(self.diagnostics.records),
            time=(step - self.start_step) * self.nature.dt,
            analysis_nrmse_obs=score(self.observed),
            analysis_nrmse_unobs=score(self.unobserved),
            analysis_nrmse_all=score(np.arange(self.nature.dim)),
            background_nrmse_all=float(nrmse(background_sys[:, None], t, self.sigma_clim)[0]),
            spread=spread,
            innovation_mean=innovation_mean,
            innovation_var=innovation_var,
            node_nrse=nrse(a, t, self.sigma_clim)[:, 0] if self.cfg.record_node_nrse else None,
        )
        self.diagnostics.records.append(record)
        self._analyses.append(analysis_sys.copy())

        if record.analysis_nrmse_all > self.cfg.divergence_threshold or not np.isfinite(record.analysis_nrmse_all):
            self._bad_streak += 1
        else:
            self._bad_streak = 0
        if self._bad_streak >= self.cfg.divergence_patience:
            logger.warning(
                f"{self.diagnostics.scheme}: NRMSE above {self.cfg.divergence_threshold} for "
                f"{self._bad_streak} consecutive cycles; stopping at t={record.time:.2f}"
            )
            self.diagnostics.diverged = True
            self.diagnostics.stopped_early = True
            return False
        return True

    def _begin(self, scheme: str) -> None:
        self.diagnostics = CycleDiagnostics(scheme=scheme)
        self._analyses = []
        self._bad_streak = 0
        self._clock = time.perf_counter()

    def _finish(self) -> CycleDiagnostics:
        diag = self.diagnostics
        if self._analyses:
            diag.analysis_states = np.column_stack(self._analyses)
        diag.wall_seconds = time.perf_counter() - self._clock
        if diag.records:
            logger.info(
                f"{diag.scheme}: {len(diag.records)} cycles in {diag.wall_seconds:.1f}s, "
                f"final analysis NRMSE {diag.records[-1].analysis_nrmse_all:.3f}"
            )
        else:
            logger.warning(f"{diag.scheme}: no cycles completed")
        return diag

    def _diverged(self, e: DivergenceError) -> None:
        logger.warning(f"{self.diagnostics.scheme}: forecast diverged ({e}); stopping early")
        self.diagnostics.diverged = True
        self.diagnostics.stopped_early = True

    def run_direct_insertion(self) -> CycleDiagnostics:
        """
        Insert observations at every observation time and continue the
        forecast from the corrected system state.
        """
        self._begin('direct_insertion')
        state = self._initial_states(1)[:, 0]
        end_step = self.start_step + self.n_cycles * self.da_steps
        step = self.start_step
        try:
            while step < end_step:
                y = self._observation(step)
                if y is None:
                    state = self.forecaster.advance(state, 1)
                else:
                    background = self.forecaster.to_system(state)
                    analysis = direct_insertion(background, y, self.observed)
                    if not self._record(step, analysis, background, y):
                        break
                    state = self.forecaster.step_driven(state, analysis)
                step += 1
        except DivergenceError as e:
            self._diverged(e)
        return self._finish()

    def run_ensemble(self, update: EnsembleUpdate, scheme: str = 'etkf',
                     members: Optional[np.ndarray] = None) -> CycleDiagnostics:
        """Ensemble filter cycling; `update` performs the analysis of one cycle"""
        self._begin(scheme)
        if members is None:
            members = self._initial_states(self.cfg.ensemble_size)
        try:
            for cycle in range(self.n_cycles):
                step = self.start_step + cycle * self.da_steps
                background_sys = self.forecaster.to_system(members).mean(axis=1)
                y = self._observation(step)
                if y is not None:
                    members = update(members, y, self.observed)
                analysis_sys_members = self.forecaster.to_system(members)
                if not self._record(step, analysis_sys_members.mean(axis=1), background_sys, y,
                                    analysis_sys_members):
                    break
                members = self.forecaster.advance(members, self.da_steps)
        except DivergenceError as e:
            self._diverged(e)
        return self._finish()

    def run_etkf(self) -> CycleDiagnostics:
        if self.cfg.ensemble_size < 2:
            raise ValueError("ETKF needs an ensemble of at least 2 members")
        R = np.full(self.obs.n_obs, self.obs.assumed_std ** 2)
        obs_op = self.forecaster.obs_operator(self.observed)

        def update(members, y, _indices):
            analysis, _ = etkf_update(HiddenEnsemble(members), y, R, self.cfg.inflation, obs_op)
            return analysis.members

        return self.run_ensemble(update, 'etkf')

    def _window(self, step: int) -> ObsWindow:
        offsets, columns = [], []
        for offset in range(self.da_steps):
            col = self.obs_lookup.get(step + offset)
            if col is not None:
                offsets.append(offset)
                columns.append(self.obs.values[:, col])
        values = np.column_stack(columns) if columns else np.empty((self.obs.n_obs, 0))
        return ObsWindow(offsets, values, np.full(self.obs.n_obs, self.obs.assumed_std ** 2))

    def run_fourdvar(self) -> CycleDiagnostics:
        """Analysis at each window start, then a nonlinear forecast to the next window"""
        self._begin('fourdvar')
        obs_op = self.forecaster.obs_operator(self.observed)
        background = self._initial_states(1)[:, 0]
        try:
            for cycle in range(self.n_cycles):
                step = self.start_step + cycle * self.da_steps
                window = self._window(step)
                result = fourdvar_analysis(self.forecaster, background, background, window, self.cfg.var, obs_op)
                self.diagnostics.fourdvar_traces.append(result['trace'])

                y = window.values[:, 0] if window.n_times and window.offsets[0] == 0 else None
                if not self._record(step, self.forecaster.to_system(result['analysis']),
                                    self.forecaster.to_system(background), y):
                    break
                background = self.forecaster.advance(result['analysis'], self.da_steps)
        except DivergenceError as e:
            self._diverged(e)
        return self._finish()


def cycle_da(scheme: str, forecaster: BaseForecaster, nature: Trajectory, obs: ObservationSequence,
             cfg: CycleConfig, sigma_clim: np.ndarray, rng: np.random.Generator,
             start_step: Optional[int] = None) -> CycleDiagnostics:
    """Run `scheme` (direct_insertion, etkf or fourdvar) over the experiment window"""
    if scheme not in SCHEMES:
        raise ValueError(f"Unknown scheme '{scheme}'; expected one of {SCHEMES}")
    cycler = AssimilationCycler(forecaster, nature, obs, cfg, sigma_clim, rng, start_step)
    runners: Dict[str, Callable[[], CycleDiagnostics]] = {
        'direct_insertion': cycler.run_direct_insertion,
        'etkf': cycler.run_etkf,
        'fourdvar': cycler.run_fourdvar,
    }
    return runners[scheme]()
