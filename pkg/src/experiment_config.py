"""
Experiment configuration: a tree of dataclasses with documented defaults,
loaded from an INI-style file or from a previous run's summary.json.

Example file:

    [system]
    D = 6

    [assimilation]
    scheme = fourdvar
    sigma_noise = 0.1
    tau_obs = 0.02

Command-line overrides use dotted keys: ``assimilation.inflation=1.05``.
"""

import configparser
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union, get_args, get_origin, get_type_hints

import numpy as np

try:
    from .exceptions import ConfigError
    from .l96_model import DEFAULT_FORCING, DEFAULT_SPINUP_STEPS
    from .localization import FORTY_NODE_OBS_LAYOUT
    from .models import CycleConfig, EGOBudget, MacroLossSpec, MacroParams, VarConfig
    from .presets import PresetLoader
except ImportError:
    from exceptions import ConfigError
    from l96_model import DEFAULT_FORCING, DEFAULT_SPINUP_STEPS
    from localization import FORTY_NODE_OBS_LAYOUT
    from models import CycleConfig, EGOBudget, MacroLossSpec, MacroParams, VarConfig
    from presets import PresetLoader

logger = logging.getLogger(__name__)

OUTPUT_ENV_VAR = 'RNNDA_OUT'
NAMED_OBS_LAYOUTS = ('all', 'layout40')


@dataclass
class SystemConfig:
    D: int = 6
    forcing: float = DEFAULT_FORCING
    dt: float = 0.01


@dataclass
class DatasetConfig:
    train_length: int = 100_000
    test_length: int = 20_000
    spinup: int = DEFAULT_SPINUP_STEPS    # nature-run transient discarded before training data


@dataclass
class ModelConfig:
    kind: str = 'rnn'                     # rnn, or l96 for the perfect-model baseline
    preset: str = 'model1'
    n_hidden: Optional[int] = None        # None: take it from the preset
    desk_scale: bool = True
    density: float = 0.01
    rho: Optional[float] = None
    sigma_in: Optional[float] = None
    leak: Optional[float] = None
    log_tikhonov: Optional[float] = None
    optimize: bool = False
    washout: int = 1000
    patch_size: Optional[int] = None
    halo: Optional[int] = None
    macro_M: int = 100
    macro_N: int = 1000
    ego_initial: int = 10
    ego_iterations: int = 15
    ego_batch: int = 4
    ego_starts: int = 100
    ego_polish: int = 10


@dataclass
class AssimilationConfig:
    scheme: str = 'etkf'                  # direct_insertion, etkf, fourdvar, letkf
    obs_nodes: str = '0,1,3'              # comma list, or one of NAMED_OBS_LAYOUTS
    sigma_noise: float = 0.5
    sigma_obs: float = 0.5
    tau_obs: float = 0.02
    tau_da: float = 0.2
    duration: float = 100.0
    ensemble_size: int = 10
    inflation: float = 1.2
    sigma_init: float = 0.5
    sync_spinup: int = 1000
    init_offset_std: float = 0.0
    sigma_b: float = 0.5
    outer_loops: int = 2
    inner_tol: float = 1e-6
    inner_max_iter: int = 500
    divergence_threshold: float = 10.0
    divergence_patience: int = 50
    eval_start: float = 50.0              # MTU after the first cycle where time means begin
    record_node_nrse: bool = False


@dataclass
class EvaluationConfig:
    n_forecasts: int = 1000
    forecast_steps: int = 1000
    vpt_eps: float = 0.2
    histogram_bins: int = 50
    ftle_horizons: Tuple[float, ...] = (0.1, 0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0)
    ftle_initial: int = 100
    correlation_members: int = 100
    correlation_perturbation: float = 0.1
    correlation_lead: float = 1.0
    correlation_interval: float = 0.1
    correlation_starts: int = 10


@dataclass
class SweepConfig:
    kind: str = 'etkf'                    # direct_insertion, etkf, fourdvar, letkf, landscape
    sigma_noise_values: Tuple[float, ...] = (0.1, 0.5, 1.0)
    tau_obs_values: Tuple[float, ...] = (0.02, 0.1, 0.2)
    match_tau_da: bool = True             # analysis cycle follows tau_obs
    landscape_sigma: Tuple[float, ...] = (0.02, 0.05, 0.1, 0.2, 0.5)
    landscape_rho: Tuple[float, ...] = (0.1, 0.3, 0.5, 0.8, 1.2)
    landscape_M: Tuple[int, ...] = (1, 10, 100)
    landscape_seeds: Tuple[int, ...] = (0, 1, 2)


@dataclass
class SeedConfig:
    root: int = 0


def _default_output_dir() -> str:
    return os.environ.get(OUTPUT_ENV_VAR, 'runs')


@dataclass
class OutputConfig:
    directory: str = field(default_factory=_default_output_dir)
    run_name: str = ''
    dataset_csv: bool = False             # also write {train,test}.csv next to the binaries


@dataclass
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    assimilation: AssimilationConfig = field(default_factory=AssimilationConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def sections(cls) -> Dict[str, type]:
        hints = get_type_hints(cls)
        return {f.name: hints[f.name] for f in dataclasses.fields(cls)}

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Dict[str, Any]]) -> 'ExperimentConfig':
        config = cls()
        for section, values in data.items():
            for key, value in (values or {}).items():
                config.set_value(section, key, value)
        return config

    def set_value(self, section: str, key: str, raw: Any) -> None:
        """Assign one field, coercing strings to the declared type"""
        sections = self.sections()
        if section not in sections:
            raise ConfigError(f"Unknown config section [{section}]; expected one of {sorted(sections)}")
        target = getattr(self, section)
        hints = get_type_hints(type(target))
        if key not in hints:
            raise ConfigError(f"Unknown key '{key}' in [{section}]")
        try:
            setattr(target, key, _coerce(raw, hints[key]))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Bad value for {section}.{key}: {raw!r} ({e})") from e

    def apply_overrides(self, overrides: Iterable[str]) -> 'ExperimentConfig':
        """Apply ``section.key=value`` strings in order"""
        for item in overrides:
            if '=' not in item:
                raise ConfigError(f"Override must look like section.key=value, got '{item}'")
            dotted, value = item.split('=', 1)
            if '.' not in dotted:
                raise ConfigError(f"Override key must be section.key, got '{dotted}'")
            section, key = dotted.strip().split('.', 1)
            self.set_value(section, key.strip(), value.strip())
            logger.debug(f"Override {section}.{key} = {value}")
        return self

    # Derived settings

    def obs_indices(self) -> np.ndarray:
        nodes = self.assimilation.obs_nodes.strip()
        D = self.system.D
        if nodes == 'all':
            return np.arange(D)
        if nodes == 'layout40':
            return np.asarray(FORTY_NODE_OBS_LAYOUT, dtype=np.int64)
        try:
            return np.asarray([int(v) for v in nodes.split(',') if v.strip()], dtype=np.int64)
        except ValueError as e:
            raise ConfigError(f"obs_nodes must be a comma list or one of {NAMED_OBS_LAYOUTS}: {nodes!r}") from e

    def var_config(self) -> VarConfig:
        a = self.assimilation
        return VarConfig(sigma_b=a.sigma_b, window_steps=int(round(a.tau_da / self.system.dt)),
                         outer_loops=a.outer_loops, inner_tol=a.inner_tol, inner_max_iter=a.inner_max_iter)

    def cycle_config(self) -> CycleConfig:
        a = self.assimilation
        return CycleConfig(
            tau_da=a.tau_da, duration=a.duration, ensemble_size=a.ensemble_size, inflation=a.inflation,
            sigma_init=a.sigma_init, spinup=a.sync_spinup, init_offset_std=a.init_offset_std,
            divergence_threshold=a.divergence_threshold, divergence_patience=a.divergence_patience,
            record_node_nrse=a.record_node_nrse, var=self.var_config(),
        )

    def ego_budget(self) -> EGOBudget:
        m = self.model
        return EGOBudget(n_initial=m.ego_initial, n_iter=m.ego_iterations, batch_size=m.ego_batch,
                         n_starts=m.ego_starts, n_polish=m.ego_polish)

    def resolved_model(self, loader: Optional[PresetLoader] = None) -> Dict[str, Any]:
        """
        Hidden size, macro parameters and patch geometry after filling
        unset fields from the named preset.
        """
        m = self.model
        loader = loader or PresetLoader()
        preset = loader.get_preset(m.preset)
        n_hidden = m.n_hidden if m.n_hidden is not None else loader.hidden_dim(m.preset, m.desk_scale)

        def pick(name: str) -> float:
            value = getattr(m, name)
            return float(preset[name] if value is None else value)

        macro = MacroParams(rho=pick('rho'), sigma_in=pick('sigma_in'), leak=pick('leak'),
                            tikhonov=float(np.exp(pick('log_tikhonov'))))
        patch_size = m.patch_size if m.patch_size is not None else preset.get('patch_size')
        halo = m.halo if m.halo is not None else preset.get('halo')
        return {
            'n_hidden': int(n_hidden),
            'macro': macro,
            'patch_size': None if patch_size is None else int(patch_size),
            'halo': None if halo is None else int(halo),
            'localized': patch_size is not None and int(patch_size) < self.system.D,
        }

    def macro_spec(self, n_hidden: int) -> MacroLossSpec:
        m = self.model
        return MacroLossSpec(M=m.macro_M, N=m.macro_N, seed=self.seeds.root, n_hidden=n_hidden,
                             density=m.density, washout=m.washout, model_seed=self.seeds.root)

    def run_directory(self, base: Path) -> Path:
        """Where one cycled run writes its outputs under `base`"""
        return Path(base) / (self.output.run_name or f"run_{self.assimilation.scheme}")

    def experiment_id(self) -> str:
        """Run name (or 'cfg') plus a short digest of every setting outside [output]"""
        settings = {k: v for k, v in self.to_dict().items() if k != 'output'}
        encoded = json.dumps(settings, sort_keys=True, default=str).encode('utf-8')
        digest = hashlib.sha1(encoded).hexdigest()[:10]
        return f"{self.output.run_name or 'cfg'}-{digest}"


def _coerce(raw: Any, annotation: Any) -> Any:
    """Convert a raw INI/JSON value to the field's annotated type"""
    origin = get_origin(annotation)
    if origin is Union:
        inner = [a for a in get_args(annotation) if a is not type(None)]
        if raw is None or (isinstance(raw, str) and raw.strip().lower() in ('', 'none', 'null')):
            return None
        return _coerce(raw, inner[0])
    if origin in (tuple, Tuple):
        item_type = get_args(annotation)[0]
        items = raw.split(',') if isinstance(raw, str) else list(raw)
        return tuple(_coerce(item, item_type) for item in items if str(item).strip())
    if annotation is bool:
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ('1', 'true', 'yes', 'on'):
            return True
        if text in ('0', 'false', 'no', 'off'):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if annotation is int:
        if isinstance(raw, float) and not raw.is_integer():
            raise ValueError(f"not an integer: {raw!r}")
        return int(float(raw)) if isinstance(raw, str) and 'e' in raw.lower() else int(raw)
    if annotation is float:
        return float(raw)
    if annotation is str:
        return str(raw).strip()
    return raw


def _read_ini(path: Path) -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser(inline_comment_prefixes=('#', ';'))
    parser.optionxform = str
    try:
        with open(path, 'r', encoding='utf-8') as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError(f"Could not parse {path}: {e}") from e
    return {section: dict(parser.items(section)) for section in parser.sections()}


def load_config(path: Optional[Path] = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """
    Defaults, then the file at `path` (INI, or a summary.json carrying a
    `config` block), then overrides.
    """
    if path is None:
        config = ExperimentConfig()
    else:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        if path.suffix.lower() == '.json':
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
            if 'config' not in data:
                raise ConfigError(f"{path} has no 'config' block")
            config = ExperimentConfig.from_dict(data['config'])
        else:
            config = ExperimentConfig.from_dict(_read_ini(path))
        logger.info(f"Loaded configuration from {path}")
    return config.apply_overrides(overrides)


def write_ini(config: ExperimentConfig, path: Path) -> Path:
    """Write the resolved configuration back out in the INI format"""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for section, values in config.to_dict().items():
        parser[section] = {key: _format_value(value) for key, value in values.items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        parser.write(f)
    return path


def _format_value(value: Any) -> str:
    if value is None:
        return 'none'
    if isinstance(value, (list, tuple)):
        return ', '.join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)
