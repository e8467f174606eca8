import logging
from typing import Dict

import numpy as np

logger = logging.getLogger(__name__)


class SeedStreams:
    """
    Named, independent random streams derived from one root seed.
    Each stream name maps to a fixed spawn key so adding a new stream
    never shifts the numbers drawn by existing ones.
    """

    STREAM_KEYS = {
        'nature': 0,
        'observations': 1,
        'init': 2,
        'model': 3,
        'optimizer': 4,
        'members': 5,
        'patches': 6,
        'evaluation': 7,
    }

    def __init__(self, root_seed: int):
        self.root_seed = int(root_seed)
        self._cache: Dict[tuple, np.random.SeedSequence] = {}

    def sequence(self, name: str, index: int = 0) -> np.random.SeedSequence:
        """SeedSequence for stream `name`, sub-stream `index`"""
        if name not in self.STREAM_KEYS:
            raise KeyError(f"Unknown random stream: {name}")
        key = (self.STREAM_KEYS[name], int(index))
        if key not in self._cache:
            self._cache[key] = np.random.SeedSequence(entropy=self.root_seed, spawn_key=key)
        return self._cache[key]

    def generator(self, name: str, index: int = 0) -> np.random.Generator:
        """Fresh Generator for a stream; two calls return identical sequences"""
        return np.random.default_rng(self.sequence(name, index))

    def integer_seed(self, name: str, index: int = 0) -> int:
        """32-bit integer seed for APIs that only take ints (sklearn, joblib workers)"""
        return int(self.sequence(name, index).generate_state(1)[0])

    def describe(self) -> Dict[str, int]:
        return {'root_seed': self.root_seed, **{f"{name}_key": key for name, key in self.STREAM_KEYS.items()}}
