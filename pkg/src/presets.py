import json
import logging
from pathlib import Path as FilePath
from typing import Any, Dict, Optional

import numpy as np

try:
    from .models import MacroParams
except ImportError:
    from models import MacroParams

logger = logging.getLogger(__name__)

FALLBACK_PRESETS = {
    "model1": {"system_dim": 6, "n_hidden": 1600, "density": 0.01, "rho": 0.10036271,
               "sigma_in": 0.06627321, "leak": 0.70270733, "log_tikhonov": -18.41726026},
    "model2": {"system_dim": 6, "n_hidden": 800, "density": 0.01, "rho": 0.1,
               "sigma_in": 0.05343709, "leak": 0.69460913, "log_tikhonov": -14.33030495},
    "model3": {"system_dim": 40, "n_hidden": 6000, "desk_n_hidden": 2000, "density": 0.01,
               "rho": 0.34378377, "sigma_in": 0.05219330, "leak": 0.40813549,
               "log_tikhonov": -12.53138825, "patch_size": 2, "halo": 4},
}


class PresetLoader:
    """
    Named network configurations (hidden size and trained macro-scale
    parameters) loaded from model_presets.json.
    """

    def __init__(self, presets_file: Optional[str] = None):
        self.presets = self._load_presets(presets_file)

    def _load_presets(self, presets_file: Optional[str] = None) -> Dict[str, Any]:
        """Load presets from JSON, falling back to the built-in table"""
        try:
            if presets_file:
                presets_path = FilePath(presets_file)
            else:
                presets_path = FilePath(__file__).parent / "model_presets.json"

            with open(presets_path, 'r') as f:
                data = json.load(f)
                return data.get('presets', {})
        except (FileNotFoundError, json.JSONDecodeError) as e:
            logger.warning(f"Could not load model_presets.json: {e}. Using fallback presets.")
            return {name: dict(values) for name, values in FALLBACK_PRESETS.items()}

    def get_preset(self, name: str) -> Dict[str, Any]:
        if name not in self.presets:
            raise KeyError(f"Unknown preset '{name}'; available: {sorted(self.presets)}")
        return dict(self.presets[name])

    def macro_params(self, name: str) -> MacroParams:
        preset = self.get_preset(name)
        return MacroParams(
            rho=float(preset['rho']),
            sigma_in=float(preset['sigma_in']),
            leak=float(preset['leak']),
            tikhonov=float(np.exp(preset['log_tikhonov'])),
        )

    def hidden_dim(self, name: str, desk_scale: bool = False) -> int:
        preset = self.get_preset(name)
        if desk_scale and 'desk_n_hidden' in preset:
            return int(preset['desk_n_hidden'])
        return int(preset['n_hidden'])

    def get_presets(self) -> Dict[str, Any]:
        return self.presets.copy()

    def add_preset(self, name: str, macro: MacroParams, n_hidden: int, **extra) -> None:
        """Register trained macro parameters under a new name"""
        self.presets[name] = {
            'n_hidden': int(n_hidden),
            'rho': macro.rho,
            'sigma_in': macro.sigma_in,
            'leak': macro.leak,
            'log_tikhonov': macro.log_tikhonov,
            **extra,
        }

    def save_presets(self, presets_file: str) -> None:
        try:
            with open(FilePath(presets_file), 'w') as f:
                json.dump({"presets": self.presets}, f, indent=2)
            logger.info(f"Presets saved to {presets_file}")
        except Exception as e:
            logger.error(f"Failed to save presets: {e}")
