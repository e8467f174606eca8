"""
Stage drivers shared by the CLI and the sweep processor: dataset
generation, model training, cycled assimilation runs and forecast
evaluation. Artifacts live in a fixed layout under one output directory:

    <out>/dataset/{train,test}.rnnda, dataset.json
    <out>/model/model.rnnda  or  <out>/model/layout.json + patch_*.rnnda
    <out>/run_<scheme>/cycles.csv, summary.json, ...   (output.run_name replaces run_<scheme>)
    <out>/evaluation/*.csv, evaluation.json
"""

import copy
import json
import logging
import time
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

try:
    from .assimilation import L96Forecaster, ReservoirForecaster, cycle_da
    from .assimilation.base_forecaster import BaseForecaster
    from .csv_exporter import DiagnosticsExporter, to_jsonable
    from .dataset_io import ArtifactStore
    from .evaluation import ForecastEvaluator, evaluate_forecaster
    from .exceptions import ConfigError
    from .experiment_config import ExperimentConfig
    from .l96_model import generate_dataset, sample_observations
    from .localization import LocalizedReservoirForecaster, build_layout, letkf_cycle, train_local_models
    from .macro_training import optimize_macro
    from .metrics import climatological_std
    from .models import CycleDiagnostics, Trajectory
    from .presets import PresetLoader
    from .random_streams import SeedStreams
    from .reservoir import fit_readout, init_reservoir
except ImportError:
    from assimilation import L96Forecaster, ReservoirForecaster, cycle_da
    from assimilation.base_forecaster import BaseForecaster
    from csv_exporter import DiagnosticsExporter, to_jsonable
    from dataset_io import ArtifactStore
    from evaluation import ForecastEvaluator, evaluate_forecaster
    from exceptions import ConfigError
    from experiment_config import ExperimentConfig
    from l96_model import generate_dataset, sample_observations
    from localization import LocalizedReservoirForecaster, build_layout, letkf_cycle, train_local_models
    from macro_training import optimize_macro
    from metrics import climatological_std
    from models import CycleDiagnostics, Trajectory
    from presets import PresetLoader
    from random_streams import SeedStreams
    from reservoir import fit_readout, init_reservoir

logger = logging.getLogger(__name__)


class ExperimentRunner:
    """
    Executes the stages of one experiment. Every random draw comes from a
    named stream of the configured root seed, so a stage rerun with the
    same configuration reproduces its outputs exactly.
    """

    def __init__(self, config: ExperimentConfig, out_dir: Path, n_jobs: int = 1,
                 preset_loader: Optional[PresetLoader] = None):
        self.config = config
        self.out_dir = Path(out_dir)
        self.n_jobs = n_jobs
        self.streams = SeedStreams(config.seeds.root)
        self.store = ArtifactStore()
        self.exporter = DiagnosticsExporter(config.experiment_id())
        self.preset_loader = preset_loader or PresetLoader()

    @property
    def dataset_dir(self) -> Path:
        return self.out_dir / 'dataset'

    @property
    def model_dir(self) -> Path:
        return self.out_dir / 'model'

    def _provenance(self, **extra) -> Dict[str, Any]:
        return {'experiment_id': self.exporter.experiment_id, 'config': self.config.to_dict(),
                'seeds': self.streams.describe(), **extra}

    def _write_json(self, payload: Dict[str, Any], path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(to_jsonable(payload), f, indent=2)

    # Dataset

    def generate(self, dataset_dir: Optional[Path] = None) -> Dict[str, Path]:
        dataset_dir = Path(dataset_dir or self.dataset_dir)
        s, d = self.config.system, self.config.dataset
        started = time.perf_counter()
        data = generate_dataset(D=s.D, train_length=d.train_length, test_length=d.test_length, dt=s.dt,
                                forcing=s.forcing, spinup=d.spinup, seed=self.streams.generator('nature'))
        paths = {
            'train': self.store.write_dataset(dataset_dir / 'train.rnnda', data['train']),
            'test': self.store.write_dataset(dataset_dir / 'test.rnnda', data['test']),
        }
        artifacts = {k: self.store.describe(p) for k, p in paths.items()}
        if self.config.output.dataset_csv:
            for name in ('train', 'test'):
                csv_path = dataset_dir / f"{name}.csv"
                if not self.store.export_dataset_csv(csv_path, data[name]):
                    raise IOError(f"Could not write {csv_path}")
                paths[f"{name}_csv"] = csv_path
        self._write_json(self._provenance(artifacts=artifacts,
                                          timings={'generate_seconds': time.perf_counter() - started}),
                         dataset_dir / 'dataset.json')
        return paths

    def load_dataset(self, dataset_dir: Optional[Path] = None) -> Dict[str, Trajectory]:
        dataset_dir = Path(dataset_dir or self.dataset_dir)
        data = {name: self.store.read_dataset(dataset_dir / f"{name}.rnnda") for name in ('train', 'test')}
        if data['train'].dim != self.config.system.D:
            raise ConfigError(f"Dataset has D={data['train'].dim}, configuration says D={self.config.system.D}")
        return data

    # Training

    def train(self, dataset_dir: Optional[Path] = None, model_dir: Optional[Path] = None) -> Dict[str, Any]:
        """
        Train the readout(s) at the configured macro parameters, or search
        the macro parameters first when model.optimize is set.
        """
        model_dir = Path(model_dir or self.model_dir)
        m = self.config.model
        if m.kind == 'l96':
            logger.info("Perfect-model baseline selected; nothing to train")
            return {'paths': [], 'macro': None}

        train = self.load_dataset(dataset_dir)['train']
        resolved = self.config.resolved_model(self.preset_loader)
        macro = resolved['macro']
        model_seed = self.streams.integer_seed('model')
        started = time.perf_counter()
        timings: Dict[str, float] = {}

        if m.optimize:
            if resolved['localized']:
                raise ConfigError("Macro optimization runs on a single global network")
            result = optimize_macro(train, self.config.macro_spec(resolved['n_hidden']),
                                    self.config.ego_budget(), n_jobs=self.n_jobs)
            macro = result['macro']
            self.exporter.export_table(result['history'], model_dir / 'macro_history.csv')
            self.preset_loader.add_preset('optimized', macro, resolved['n_hidden'],
                                          system_dim=self.config.system.D, density=m.density)
            self.preset_loader.save_presets(str(model_dir / 'model_presets.json'))
            timings['optimize_seconds'] = time.perf_counter() - started

        if resolved['localized']:
            layout = build_layout(self.config.system.D, resolved['patch_size'], resolved['halo'] or 0)
            models = train_local_models(layout, train, macro, resolved['n_hidden'], m.density, m.washout,
                                        seed=model_seed, n_jobs=self.n_jobs)
            paths = [self.store.write_layout(model_dir, layout, models)]
        else:
            model = init_reservoir(resolved['n_hidden'], train.dim, train.dim, m.density, model_seed, macro)
            model = fit_readout(model, train, m.washout)
            paths = [self.store.write_model(model_dir / 'model.rnnda', model)]

        timings['train_seconds'] = time.perf_counter() - started
        self._write_json(self._provenance(macro=macro.as_dict(), n_hidden=resolved['n_hidden'],
                                          artifacts=[str(p) for p in paths], timings=timings),
                         model_dir / 'model.json')
        return {'paths': paths, 'macro': macro}

    def load_forecaster(self, model_dir: Optional[Path] = None) -> BaseForecaster:
        s = self.config.system
        if self.config.model.kind == 'l96':
            return L96Forecaster(s.D, s.dt, s.forcing)
        model_dir = Path(model_dir or self.model_dir)
        manifest = model_dir / 'layout.json' if model_dir.is_dir() else model_dir
        if manifest.suffix == '.json' and manifest.exists():
            layout, models = self.store.read_layout(manifest)
            return LocalizedReservoirForecaster(layout, models, s.dt)
        model_path = model_dir / 'model.rnnda' if model_dir.is_dir() else model_dir
        return ReservoirForecaster(self.store.read_model(model_path), s.dt)

    # Cycled assimilation

    def assimilate(self, forecaster: BaseForecaster, data: Dict[str, Trajectory]) -> CycleDiagnostics:
        """One cycled run of the configured scheme over the test trajectory"""
        a = self.config.assimilation
        test = data['test']
        sigma_clim = climatological_std(data['train'])
        cfg = self.config.cycle_config()
        obs = sample_observations(test, self.config.obs_indices(), a.tau_obs, a.sigma_noise, a.sigma_obs,
                                  seed=self.streams.generator('observations'), start_step=cfg.spinup)
        rng = self.streams.generator('init')
        logger.info(f"Cycling {a.scheme}: {obs.n_obs} observed nodes, tau_obs={a.tau_obs}, "
                    f"tau_da={a.tau_da}, sigma_noise={a.sigma_noise}")
        if a.scheme == 'letkf':
            if not isinstance(forecaster, LocalizedReservoirForecaster):
                raise ConfigError("letkf needs a localized model")
            return letkf_cycle(forecaster, obs, test, cfg, sigma_clim, rng, n_jobs=self.n_jobs)
        return cycle_da(a.scheme, forecaster, test, obs, cfg, sigma_clim, rng)

    def run(self, dataset_dir: Optional[Path] = None, model_dir: Optional[Path] = None,
            run_dir: Optional[Path] = None, forecaster: Optional[BaseForecaster] = None,
            data: Optional[Dict[str, Trajectory]] = None) -> Dict[str, Any]:
        """Cycle, export, and return the run summary"""
        run_dir = Path(run_dir or self.config.run_directory(self.out_dir))
        data = data or self.load_dataset(dataset_dir)
        forecaster = forecaster or self.load_forecaster(model_dir)
        diagnostics = self.assimilate(forecaster, data)

        artifacts = {'dataset': str(dataset_dir or self.dataset_dir)}
        if self.config.model.kind != 'l96':
            artifacts['model'] = str(model_dir or self.model_dir)
        summary = self.exporter.build_summary(
            self.config.to_dict(), diagnostics, self.config.assimilation.eval_start,
            self.streams.describe(), artifacts,
        )
        summary['experiment_id'] = self.exporter.experiment_id
        self.exporter.export_run(diagnostics, summary, run_dir)
        return summary

    # Forecast evaluation

    def evaluate(self, dataset_dir: Optional[Path] = None, model_dir: Optional[Path] = None,
                 eval_dir: Optional[Path] = None) -> Dict[str, Any]:
        eval_dir = Path(eval_dir or self.out_dir / 'evaluation')
        data = self.load_dataset(dataset_dir)
        forecaster = self.load_forecaster(model_dir)
        s = self.config.system
        started = time.perf_counter()

        evaluator = ForecastEvaluator(forecaster, data['test'], climatological_std(data['train']),
                                      spinup=self.config.assimilation.sync_spinup, n_jobs=self.n_jobs)
        tables = evaluate_forecaster(evaluator, L96Forecaster(s.D, s.dt, s.forcing), data['train'],
                                     self.config.evaluation, self.streams.generator('evaluation'),
                                     seed=self.streams.integer_seed('evaluation', 1))
        for name, frame in tables.items():
            if not self.exporter.export_table(frame, eval_dir / f"{name}.csv"):
                raise IOError(f"Could not write {name}.csv")

        vpt_values = tables['vpt_samples']['vpt'].to_numpy()
        summary = self._provenance(
            vpt={'mean': float(np.mean(vpt_values)), 'median': float(np.median(vpt_values)),
                 'std': float(np.std(vpt_values)), 'n': int(vpt_values.size)},
            ftle_longest_horizon=float(tables['ftle_curve']['ftle_mean'].iloc[-1]),
            timings={'evaluate_seconds': time.perf_counter() - started},
        )
        self._write_json(summary, eval_dir / 'evaluation.json')
        return summary

    def with_config(self, config: ExperimentConfig) -> 'ExperimentRunner':
        """Runner for a modified copy of the configuration sharing the output root"""
        return ExperimentRunner(copy.deepcopy(config), self.out_dir, self.n_jobs, self.preset_loader)
