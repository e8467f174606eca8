import logging
from typing import List

import numpy as np

try:
    from .assimilation.cycling import SCHEMES
    from .experiment_config import ExperimentConfig
    from .exceptions import ConfigError
    from .presets import PresetLoader
except ImportError:
    from assimilation.cycling import SCHEMES
    from experiment_config import ExperimentConfig
    from exceptions import ConfigError
    from presets import PresetLoader

logger = logging.getLogger(__name__)

RUN_SCHEMES = SCHEMES + ('letkf',)
SWEEP_KINDS = RUN_SCHEMES + ('landscape',)


def _is_multiple(interval: float, unit: float) -> bool:
    ratio = interval / unit
    return round(ratio) >= 1 and abs(ratio - round(ratio)) <= 1e-9 * max(1.0, ratio)


class ExperimentValidator:
    """
    Cross-field consistency checks on a configuration.
    Collects errors (run refuses to start) and warnings (run proceeds).
    """

    def __init__(self, preset_loader: PresetLoader = None):
        self.validation_errors: List[str] = []
        self.warnings: List[str] = []
        self.preset_loader = preset_loader or PresetLoader()

    def validate(self, config: ExperimentConfig, stage: str = 'run') -> bool:
        """
        Check everything `stage` (generate, train, run, evaluate, sweep)
        depends on. Returns True when no errors were found.
        """
        self.validation_errors = []
        self.warnings = []

        self._check_system(config)
        self._check_dataset(config)
        if stage != 'generate':
            self._check_model(config)
        if stage in ('run', 'sweep'):
            self._check_assimilation(config)
        if stage == 'evaluate':
            self._check_evaluation(config)
        if stage == 'sweep':
            self._check_sweep(config)

        if self.validation_errors:
            logger.error(f"Configuration has {len(self.validation_errors)} error(s)")
        return not self.validation_errors

    def require_valid(self, config: ExperimentConfig, stage: str = 'run') -> None:
        if not self.validate(config, stage):
            raise ConfigError("Invalid configuration:\n" + self.get_validation_report())

    def _check_system(self, config: ExperimentConfig) -> None:
        s = config.system
        if s.D < 4:
            self.validation_errors.append(f"L96 needs D >= 4, got D={s.D}")
        if not s.dt > 0:
            self.validation_errors.append(f"dt must be positive, got {s.dt}")

    def _check_dataset(self, config: ExperimentConfig) -> None:
        d = config.dataset
        if d.train_length <= d.spinup:
            self.validation_errors.append(
                f"train_length ({d.train_length}) must exceed the nature spinup ({d.spinup})"
            )
        if d.test_length < 1:
            self.validation_errors.append("test_length must be positive")

    def _check_model(self, config: ExperimentConfig) -> None:
        m = config.model
        if m.kind not in ('rnn', 'l96'):
            self.validation_errors.append(f"model.kind must be 'rnn' or 'l96', got '{m.kind}'")
            return
        if m.kind == 'l96':
            return
        if m.preset not in self.preset_loader.get_presets():
            self.validation_errors.append(f"Unknown preset '{m.preset}'")
            return

        preset_dim = self.preset_loader.get_preset(m.preset).get('system_dim')
        if preset_dim is not None and int(preset_dim) != config.system.D:
            self.warnings.append(f"Preset '{m.preset}' was trained for D={preset_dim}, running with D={config.system.D}")

        resolved = config.resolved_model(self.preset_loader)
        if resolved['n_hidden'] < 1:
            self.validation_errors.append("n_hidden must be positive")
        if not 0 < m.density <= 1:
            self.validation_errors.append(f"density must lie in (0, 1], got {m.density}")
        if not 0 < resolved['macro'].leak <= 1:
            self.validation_errors.append(f"leak must lie in (0, 1], got {resolved['macro'].leak}")
        if m.washout >= config.dataset.train_length:
            self.validation_errors.append(
                f"washout ({m.washout}) leaves no training data (train_length {config.dataset.train_length})"
            )
        if m.optimize and m.macro_N * 2 > config.dataset.train_length:
            self.warnings.append(
                f"Macro forecasts of {m.macro_N} steps use a large share of the training data"
            )

        if resolved['patch_size'] is not None:
            patch, halo = resolved['patch_size'], resolved['halo'] or 0
            if m.optimize and resolved['localized']:
                self.validation_errors.append("Macro optimization runs on a single global network")
            if config.system.D % patch != 0:
                self.validation_errors.append(f"D={config.system.D} is not divisible by patch_size={patch}")
            if patch + 2 * halo > config.system.D:
                self.warnings.append(f"Patch inputs ({patch} + 2x{halo}) wrap around the whole ring")
            if m.desk_scale and 'desk_n_hidden' in self.preset_loader.get_preset(m.preset):
                self.warnings.append(f"Desk-scale hidden size {resolved['n_hidden']} per patch")

    def _check_assimilation(self, config: ExperimentConfig) -> None:
        a = config.assimilation
        dt = config.system.dt
        if a.scheme not in RUN_SCHEMES:
            self.validation_errors.append(f"Unknown scheme '{a.scheme}'; expected one of {RUN_SCHEMES}")

        if not _is_multiple(a.tau_obs, dt):
            self.validation_errors.append(f"tau_obs={a.tau_obs} is not an integer multiple of dt={dt}")
        if not _is_multiple(a.tau_da, a.tau_obs):
            self.validation_errors.append(f"tau_da={a.tau_da} is not an integer multiple of tau_obs={a.tau_obs}")
        elif a.scheme in ('etkf', 'letkf') and a.tau_da > a.tau_obs:
            self.warnings.append("Only observations valid at the analysis time are assimilated when tau_da > tau_obs")

        try:
            indices = config.obs_indices()
        except ConfigError as e:
            self.validation_errors.append(str(e))
            indices = np.array([], dtype=np.int64)
        if indices.size == 0:
            self.validation_errors.append("No observed nodes")
        elif indices.min() < 0 or indices.max() >= config.system.D:
            self.validation_errors.append(f"Observed nodes must lie in [0, {config.system.D})")
        elif np.unique(indices).size != indices.size:
            self.validation_errors.append("Observed nodes contain duplicates")

        if a.scheme in ('etkf', 'letkf') and a.ensemble_size < 2:
            self.validation_errors.append(f"{a.scheme} needs ensemble_size >= 2, got {a.ensemble_size}")
        if a.inflation < 1.0:
            self.validation_errors.append(f"inflation must be >= 1, got {a.inflation}")
        if not a.sigma_obs > 0:
            self.validation_errors.append("sigma_obs must be positive")
        if a.sigma_noise < 0:
            self.validation_errors.append("sigma_noise must be non-negative")

        localized = False
        if config.model.kind == 'rnn' and config.model.preset in self.preset_loader.get_presets():
            localized = config.resolved_model(self.preset_loader)['localized']
        if a.scheme == 'letkf' and not localized:
            self.validation_errors.append("letkf needs an RNN model with a patch layout")
        elif a.scheme in SCHEMES and localized:
            self.validation_errors.append(f"{a.scheme} runs on a single global network; use letkf")

        needed = a.sync_spinup + int(round(a.duration / dt)) + 1
        if needed > config.dataset.test_length:
            self.validation_errors.append(
                f"Cycling needs {needed} test steps (spinup {a.sync_spinup} + {a.duration} MTU), "
                f"test_length is {config.dataset.test_length}"
            )
        if a.eval_start >= a.duration:
            self.warnings.append(f"eval_start={a.eval_start} leaves no cycles for time means")

    def _check_evaluation(self, config: ExperimentConfig) -> None:
        e = config.evaluation
        needed = config.assimilation.sync_spinup + e.forecast_steps + 1
        if needed > config.dataset.test_length:
            self.validation_errors.append(
                f"Forecasts need {needed} test steps, test_length is {config.dataset.test_length}"
            )
        if not e.vpt_eps > 0:
            self.validation_errors.append("vpt_eps must be positive")
        if e.histogram_bins < 1:
            self.validation_errors.append("histogram_bins must be positive")
        if any(h <= 0 for h in e.ftle_horizons):
            self.validation_errors.append("FTLE horizons must be positive")
        if e.correlation_members < 2:
            self.validation_errors.append("correlation_members must be at least 2")
        if not _is_multiple(e.correlation_interval, config.system.dt):
            self.validation_errors.append("correlation_interval must be a multiple of dt")

    def _check_sweep(self, config: ExperimentConfig) -> None:
        sw = config.sweep
        if sw.kind not in SWEEP_KINDS:
            self.validation_errors.append(f"Unknown sweep kind '{sw.kind}'; expected one of {SWEEP_KINDS}")
            return
        if sw.kind == 'landscape':
            if not (sw.landscape_sigma and sw.landscape_rho and sw.landscape_M and sw.landscape_seeds):
                self.validation_errors.append("Landscape sweep needs non-empty sigma, rho, M and seed grids")
            return
        for tau in sw.tau_obs_values:
            if not _is_multiple(tau, config.system.dt):
                self.validation_errors.append(f"Sweep tau_obs={tau} is not a multiple of dt")
            elif not sw.match_tau_da and not _is_multiple(config.assimilation.tau_da, tau):
                self.validation_errors.append(f"tau_da={config.assimilation.tau_da} is not a multiple of tau_obs={tau}")
        if any(s < 0 for s in sw.sigma_noise_values):
            self.validation_errors.append("Sweep noise levels must be non-negative")

    def get_validation_report(self) -> str:
        """Validation report with errors and warnings"""
        report = []

        if self.validation_errors:
            report.append("VALIDATION ERRORS:")
            for error in self.validation_errors:
                report.append(f"  - {error}")
            report.append("")

        if self.warnings:
            report.append("WARNINGS:")
            for warning in self.warnings:
                report.append(f"  - {warning}")
            report.append("")

        if not self.validation_errors and not self.warnings:
            report.append("No validation issues found.")

        return "\n".join(report)
