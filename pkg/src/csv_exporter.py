import json
import logging
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

try:
    from .models import CycleDiagnostics
except ImportError:
    from models import CycleDiagnostics

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def to_jsonable(value: Any) -> Any:
    """numpy scalars and arrays to plain JSON types"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        return to_jsonable(value.item())
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, Path):
        return str(value)
    return value


class DiagnosticsExporter:
    """
    Writes run outputs: per-cycle CSV, summary JSON with full provenance,
    and the figure-data tables (VPT, FTLE, correlation, optimizer trace).
    """

    def __init__(self, experiment_id: str = ''):
        self.experiment_id = experiment_id
        self.cycle_columns = [
            'cycle', 'time', 'analysis_nrmse_obs', 'analysis_nrmse_unobs', 'analysis_nrmse_all',
            'background_nrmse_all', 'spread', 'innovation_mean', 'innovation_var',
        ]

    def format_cycles_for_export(self, diagnostics: CycleDiagnostics) -> pd.DataFrame:
        """One row per analysis cycle"""
        rows = [{column: getattr(record, column) for column in self.cycle_columns}
                for record in diagnostics.records]
        frame = pd.DataFrame(rows, columns=self.cycle_columns)
        frame['cycle'] = frame['cycle'].astype(np.int64)
        logger.debug(f"Formatted {len(frame)} cycle records for export")
        return frame

    def export_table(self, frame: pd.DataFrame, output_path: Path) -> bool:
        """
        Any result table as CSV with a header row and full float precision.
        Rows are keyed by an experiment_id column when the exporter has one.
        """
        try:
            if self.experiment_id and 'experiment_id' not in frame.columns:
                frame = frame.copy()
                frame.insert(0, 'experiment_id', self.experiment_id)
            output_path = Path(output_path)
            output_path.parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(output_path, index=False, encoding='utf-8', float_format=FLOAT_FORMAT)
            logger.info(f"Exported {len(frame)} rows to {output_path}")
            return True
        except Exception as e:
            logger.error(f"Failed to export CSV to {output_path}: {e}")
            return False

    def export_cycles(self, diagnostics: CycleDiagnostics, output_path: Path) -> bool:
        return self.export_table(self.format_cycles_for_export(diagnostics), output_path)

    def export_node_nrse(self, diagnostics: CycleDiagnostics, output_path: Path) -> bool:
        """Per-node normalized root-square error time series, when recorded"""
        records = [r for r in diagnostics.records if r.node_nrse is not None]
        if not records:
            logger.debug("No per-node errors recorded; skipping export")
            return True
        values = np.vstack([r.node_nrse for r in records])
        frame = pd.DataFrame(values, columns=[f"node_{i}" for i in range(values.shape[1])])
        frame.insert(0, 'time', [r.time for r in records])
        return self.export_table(frame, output_path)

    def export_fourdvar_trace(self, diagnostics: CycleDiagnostics, output_path: Path) -> bool:
        """Solver trace of every outer loop of every 4D-Var cycle"""
        rows = [{'cycle': cycle, **entry}
                for cycle, trace in enumerate(diagnostics.fourdvar_traces) for entry in trace]
        if not rows:
            return True
        return self.export_table(pd.DataFrame(rows), output_path)

    def export_analysis_states(self, diagnostics: CycleDiagnostics, output_path: Path) -> bool:
        if diagnostics.analysis_states is None:
            return True
        states = diagnostics.analysis_states
        frame = pd.DataFrame(states.T, columns=[f"x{i}" for i in range(states.shape[0])])
        frame.insert(0, 'time', [r.time for r in diagnostics.records][:states.shape[1]])
        return self.export_table(frame, output_path)

    def build_summary(self, config: Dict[str, Any], diagnostics: CycleDiagnostics, eval_start: float,
                      seeds: Dict[str, int], artifacts: Optional[Dict[str, Any]] = None,
                      timings: Optional[Dict[str, float]] = None) -> Dict[str, Any]:
        """
        Run summary: time-mean errors over the evaluation window plus
        everything needed to re-create the run.
        """
        def mean(field: str) -> float:
            return diagnostics.time_mean(field, eval_start)

        return {
            'scheme': diagnostics.scheme,
            'created': datetime.now(timezone.utc).isoformat(),
            'n_cycles': len(diagnostics.records),
            'eval_start': eval_start,
            'time_mean': {
                'analysis_nrmse_obs': mean('analysis_nrmse_obs'),
                'analysis_nrmse_unobs': mean('analysis_nrmse_unobs'),
                'analysis_nrmse_all': mean('analysis_nrmse_all'),
                'background_nrmse_all': mean('background_nrmse_all'),
                'spread': mean('spread'),
            },
            'diverged': diagnostics.diverged,
            'stopped_early': diagnostics.stopped_early,
            'timings': {'cycling_seconds': diagnostics.wall_seconds, **(timings or {})},
            'seeds': seeds,
            'artifacts': artifacts or {},
            'environment': {'python': platform.python_version(), 'numpy': np.__version__,
                            'pandas': pd.__version__},
            'config': config,
        }

    def write_summary(self, summary: Dict[str, Any], output_path: Path) -> bool:
        try:
            output_path = Path(output_path)
            output_path.parent.mkdir(parents=True, exist_ok=True)
            with open(output_path, 'w', encoding='utf-8') as f:
                json.dump(to_jsonable(summary), f, indent=2)
            logger.info(f"Wrote summary: {output_path}")
            return True
        except Exception as e:
            logger.error(f"Failed to write summary {output_path}: {e}")
            return False

    def export_run(self, diagnostics: CycleDiagnostics, summary: Dict[str, Any], run_dir: Path) -> List[Path]:
        """Every per-run file into `run_dir`; returns the paths written"""
        run_dir = Path(run_dir)
        written = []
        outputs = [
            ('cycles.csv', lambda p: self.export_cycles(diagnostics, p)),
            ('analysis_states.csv', lambda p: self.export_analysis_states(diagnostics, p)),
            ('node_nrse.csv', lambda p: self.export_node_nrse(diagnostics, p)),
            ('fourdvar_trace.csv', lambda p: self.export_fourdvar_trace(diagnostics, p)),
            ('summary.json', lambda p: self.write_summary(summary, p)),
        ]
        for name, writer in outputs:
            path = run_dir / name
            if not writer(path):
                raise IOError(f"Could not write {path}")
            if path.exists():
                written.append(path)
        return written
