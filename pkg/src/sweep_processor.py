"""
Parameter sweeps: a grid of independent cycled runs over observation
noise and observation interval, or a macro-loss landscape over the
input scaling and spectral radius. Grid points run in parallel and the
per-point summaries are merged into one CSV per sweep kind.
"""

import copy
import itertools
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

try:
    from .assimilation.base_forecaster import BaseForecaster
    from .experiment_config import ExperimentConfig
    from .experiment_runner import ExperimentRunner
    from .macro_training import landscape_seed_variance, macro_loss_landscape
    from .models import Trajectory
except ImportError:
    from assimilation.base_forecaster import BaseForecaster
    from experiment_config import ExperimentConfig
    from experiment_runner import ExperimentRunner
    from macro_training import landscape_seed_variance, macro_loss_landscape
    from models import Trajectory

logger = logging.getLogger(__name__)


def _run_point(runner: ExperimentRunner, point: Dict[str, float], forecaster: BaseForecaster,
               data: Dict[str, Trajectory], run_dir: Path) -> Dict[str, Any]:
    """One grid point; failures become rows with an error message"""
    try:
        summary = runner.run(forecaster=forecaster, data=data, run_dir=run_dir)
        return {'experiment_id': summary['experiment_id'], **point, **summary['time_mean'],
                'n_cycles': summary['n_cycles'],
                'diverged': summary['diverged'], 'cycling_seconds': summary['timings']['cycling_seconds'],
                'run_dir': str(run_dir), 'error': ''}
    except Exception as e:
        logger.error(f"Sweep point {point} failed: {e}")
        return {'experiment_id': runner.exporter.experiment_id, **point, 'diverged': True,
                'run_dir': str(run_dir), 'error': str(e)}


class SweepProcessor:
    """
    Expands the [sweep] section of a configuration into grid points,
    runs them, and merges the results.
    """

    def __init__(self, runner: ExperimentRunner):
        self.runner = runner
        self.config = runner.config

    def grid_points(self) -> List[Dict[str, float]]:
        """(sigma_noise, tau_obs, tau_da) for every cycled-run grid point"""
        sw = self.config.sweep
        points = []
        for sigma_noise, tau_obs in itertools.product(sw.sigma_noise_values, sw.tau_obs_values):
            tau_da = tau_obs if sw.match_tau_da else self.config.assimilation.tau_da
            points.append({'sigma_noise': float(sigma_noise), 'tau_obs': float(tau_obs), 'tau_da': float(tau_da)})
        return points

    def point_config(self, point: Dict[str, float]) -> ExperimentConfig:
        config = copy.deepcopy(self.config)
        config.assimilation.scheme = self.config.sweep.kind
        config.assimilation.sigma_noise = point['sigma_noise']
        config.assimilation.tau_obs = point['tau_obs']
        config.assimilation.tau_da = point['tau_da']
        return config

    def validate_grid_coverage(self) -> Dict[str, Any]:
        """Grid size and warnings about points that are likely wasted"""
        sw = self.config.sweep
        coverage = {'kind': sw.kind, 'warnings': []}
        if sw.kind == 'landscape':
            coverage['points'] = (len(sw.landscape_sigma) * len(sw.landscape_rho)
                                  * len(sw.landscape_M) * len(sw.landscape_seeds))
            if len(sw.landscape_seeds) < 2:
                coverage['warnings'].append("A single seed gives no inter-seed variance")
            return coverage

        coverage['points'] = len(self.grid_points())
        if len(set(sw.tau_obs_values)) != len(sw.tau_obs_values):
            coverage['warnings'].append("Duplicate tau_obs values in the sweep grid")
        if len(set(sw.sigma_noise_values)) != len(sw.sigma_noise_values):
            coverage['warnings'].append("Duplicate noise levels in the sweep grid")
        if sw.kind in ('etkf', 'letkf') and not sw.match_tau_da:
            coverage['warnings'].append("tau_da is fixed; observations between analyses are not used")
        return coverage

    def generate_sweep_output_paths(self, base_dir: Optional[Path] = None) -> Dict[str, Path]:
        base = Path(base_dir or self.runner.out_dir) / f"sweep_{self.config.sweep.kind}"
        return {
            'main_csv': base / f"sweep_{self.config.sweep.kind}.csv",
            'runs_dir': base / 'runs',
            'variance_csv': base / 'landscape_seed_variance.csv',
        }

    @staticmethod
    def point_label(point: Dict[str, float]) -> str:
        return f"noise{point['sigma_noise']:g}_obs{point['tau_obs']:g}_da{point['tau_da']:g}"

    def run(self, dataset_dir: Optional[Path] = None, model_dir: Optional[Path] = None) -> pd.DataFrame:
        """Execute the sweep and write the merged CSV"""
        paths = self.generate_sweep_output_paths()
        if self.config.sweep.kind == 'landscape':
            return self.run_landscape(dataset_dir, paths)

        data = self.runner.load_dataset(dataset_dir)
        forecaster = self.runner.load_forecaster(model_dir)
        points = self.grid_points()
        logger.info(f"Sweep {self.config.sweep.kind}: {len(points)} grid points, n_jobs={self.runner.n_jobs}")

        # Points run in separate workers; each gets a single-threaded runner.
        rows = Parallel(n_jobs=self.runner.n_jobs)(
            delayed(_run_point)(
                ExperimentRunner(self.point_config(point), self.runner.out_dir, 1, self.runner.preset_loader),
                point, forecaster, data, paths['runs_dir'] / self.point_label(point),
            )
            for point in points
        )
        frame = pd.DataFrame(rows).sort_values(['sigma_noise', 'tau_obs']).reset_index(drop=True)
        if not self.runner.exporter.export_table(frame, paths['main_csv']):
            raise IOError(f"Could not write {paths['main_csv']}")
        return frame

    def run_landscape(self, dataset_dir: Optional[Path], paths: Dict[str, Path]) -> pd.DataFrame:
        """Macro loss over the (sigma_in, rho) grid for each M and start-time seed"""
        sw = self.config.sweep
        train = self.runner.load_dataset(dataset_dir)['train']
        resolved = self.config.resolved_model(self.runner.preset_loader)
        spec = self.config.macro_spec(resolved['n_hidden'])
        frame = macro_loss_landscape(
            train, spec, sw.landscape_sigma, sw.landscape_rho, sw.landscape_M, sw.landscape_seeds,
            leak=resolved['macro'].leak, log_tikhonov=float(np.log(resolved['macro'].tikhonov)),
            n_jobs=self.runner.n_jobs,
        )
        variance = landscape_seed_variance(frame).rename('seed_variance').reset_index()
        for table, path in ((frame, paths['main_csv']), (variance, paths['variance_csv'])):
            if not self.runner.exporter.export_table(table, path):
                raise IOError(f"Could not write {path}")
        logger.info(f"Landscape inter-seed variance by M: {variance.to_dict('records')}")
        return frame
