import json
import logging
import struct
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

try:
    from .exceptions import ConfigError
    from .localization import build_layout
    from .models import MacroParams, PatchLayout, ReservoirModel, Trajectory
except ImportError:
    from exceptions import ConfigError
    from localization import build_layout
    from models import MacroParams, PatchLayout, ReservoirModel, Trajectory

logger = logging.getLogger(__name__)

DATASET_MAGIC = b'RNNDA1'
DATASET_HEADER = struct.Struct('<6sIQdd')            # magic, D, T, dt, t0
MODEL_MAGIC = b'RNNDA-M1'
MODEL_HEADER = struct.Struct('<8sIIIIQddddQ')        # magic, N, D_in, D_out, has_out, nnz, rho, sigma, leak, beta, seed
LAYOUT_FORMAT = 'rnnda-layout-1'


class ArtifactStore:
    """
    Reads and writes the binary dataset and model containers and the
    JSON layout manifest. Files are recognized by their magic bytes.
    """

    def identify_artifact_type(self, path: Path) -> Optional[str]:
        """'dataset', 'model', 'layout', or None when unrecognized"""
        path = Path(path)
        if not path.is_file():
            return None
        with open(path, 'rb') as f:
            head = f.read(len(MODEL_MAGIC))
        if head.startswith(MODEL_MAGIC):
            return 'model'
        if head.startswith(DATASET_MAGIC):
            return 'dataset'
        if path.suffix.lower() == '.json':
            try:
                with open(path, 'r', encoding='utf-8') as f:
                    if json.load(f).get('format') == LAYOUT_FORMAT:
                        return 'layout'
            except (json.JSONDecodeError, UnicodeDecodeError, AttributeError) as e:
                logger.debug(f"{path} is not a layout manifest: {e}")
        return None

    def validate_artifact_format(self, path: Path, expected: str) -> bool:
        """Check that `path` exists and holds the expected artifact type"""
        path = Path(path)
        if not path.exists():
            logger.error(f"File does not exist: {path}")
            return False
        found = self.identify_artifact_type(path)
        if found != expected:
            logger.error(f"{path} is a {found or 'unrecognized'} file, expected {expected}")
            return False
        return True

    # Datasets

    def write_dataset(self, path: Path, trajectory: Trajectory) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = DATASET_HEADER.pack(DATASET_MAGIC, trajectory.dim, trajectory.n_times,
                                     float(trajectory.dt), float(trajectory.t0))
        with open(path, 'wb') as f:
            f.write(header)
            f.write(np.ascontiguousarray(trajectory.states, dtype='<f8').tobytes(order='C'))
        logger.info(f"Wrote dataset {path} (D={trajectory.dim}, T={trajectory.n_times})")
        return path

    def read_dataset(self, path: Path) -> Trajectory:
        if not self.validate_artifact_format(path, 'dataset'):
            raise ConfigError(f"Invalid dataset file: {path}")
        with open(path, 'rb') as f:
            magic, D, T, dt, t0 = DATASET_HEADER.unpack(f.read(DATASET_HEADER.size))
            data = np.frombuffer(f.read(), dtype='<f8')
        if data.size != D * T:
            raise ConfigError(f"Dataset {path} is truncated: {data.size} values for D={D}, T={T}")
        try:
            return Trajectory(data.reshape(D, T).astype(np.float64), dt, t0)
        except ValueError as e:
            raise ConfigError(f"Dataset {path} is corrupt: {e}") from e

    def export_dataset_csv(self, path: Path, trajectory: Trajectory) -> bool:
        """Debug export: one row per time step"""
        try:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            frame = pd.DataFrame(trajectory.states.T, columns=[f"x{i}" for i in range(trajectory.dim)])
            frame.insert(0, 'time', trajectory.times)
            frame.to_csv(path, index=False, float_format='%.17g')
            logger.info(f"Exported dataset CSV: {path}")
            return True
        except Exception as e:
            logger.error(f"Failed to export dataset CSV {path}: {e}")
            return False

    # Models

    def write_model(self, path: Path, model: ReservoirModel) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        W_res = model.W_res.tocsr()
        W_res.sort_indices()
        m = model.macro
        has_out = int(model.W_out is not None)
        header = MODEL_HEADER.pack(MODEL_MAGIC, model.n_hidden, model.d_in, model.d_out, has_out, W_res.nnz,
                                   m.rho, m.sigma_in, m.leak, m.tikhonov, int(model.seed) & 0xFFFFFFFFFFFFFFFF)
        with open(path, 'wb') as f:
            f.write(header)
            f.write(np.asarray(W_res.indptr, dtype='<i8').tobytes())
            f.write(np.asarray(W_res.indices, dtype='<i8').tobytes())
            f.write(np.asarray(W_res.data, dtype='<f8').tobytes())
            f.write(np.ascontiguousarray(model.W_in, dtype='<f8').tobytes(order='C'))
            if has_out:
                f.write(np.ascontiguousarray(model.W_out, dtype='<f8').tobytes(order='C'))
        logger.info(f"Wrote model {path} (N={model.n_hidden}, nnz={W_res.nnz})")
        return path

    def read_model(self, path: Path) -> ReservoirModel:
        if not self.validate_artifact_format(path, 'model'):
            raise ConfigError(f"Invalid model file: {path}")
        with open(path, 'rb') as f:
            fields = MODEL_HEADER.unpack(f.read(MODEL_HEADER.size))
            _, N, d_in, d_out, has_out, nnz, rho, sigma_in, leak, beta, seed = fields
            blob = f.read()

        def take(offset: int, count: int, dtype: str) -> Tuple[np.ndarray, int]:
            size = count * 8
            if offset + size > len(blob):
                raise ConfigError(f"Model file {path} is truncated")
            return np.frombuffer(blob[offset:offset + size], dtype=dtype).copy(), offset + size

        pos = 0
        indptr, pos = take(pos, N + 1, '<i8')
        indices, pos = take(pos, nnz, '<i8')
        data, pos = take(pos, nnz, '<f8')
        W_in, pos = take(pos, N * d_in, '<f8')
        W_out = None
        if has_out:
            W_out, pos = take(pos, d_out * N, '<f8')
            W_out = W_out.reshape(d_out, N)

        return ReservoirModel(
            W_res=sp.csr_matrix((data, indices, indptr), shape=(N, N)),
            W_in=W_in.reshape(N, d_in),
            macro=MacroParams(rho=rho, sigma_in=sigma_in, leak=leak, tikhonov=beta),
            W_out=W_out,
            d_out=d_out,
            seed=int(seed),
        )

    # Localized layouts

    def write_layout(self, directory: Path, layout: PatchLayout, models: Sequence[ReservoirModel]) -> Path:
        """Per-patch model files plus a JSON manifest tying them to the layout"""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for j, (patch, model) in enumerate(zip(layout.patches, models)):
            name = f"patch_{j:03d}.rnnda"
            self.write_model(directory / name, model)
            entries.append({'core': patch.core.tolist(), 'inputs': patch.inputs.tolist(),
                            'model': name, 'seed': int(model.seed)})
        manifest = {'format': LAYOUT_FORMAT, 'D': layout.D, 'patch_size': layout.patch_size,
                    'halo': layout.halo, 'patches': entries}
        manifest_path = directory / 'layout.json'
        with open(manifest_path, 'w', encoding='utf-8') as f:
            json.dump(manifest, f, indent=2)
        logger.info(f"Wrote layout manifest {manifest_path} with {len(entries)} patches")
        return manifest_path

    def read_layout(self, manifest_path: Path) -> Tuple[PatchLayout, List[ReservoirModel]]:
        if not self.validate_artifact_format(manifest_path, 'layout'):
            raise ConfigError(f"Invalid layout manifest: {manifest_path}")
        manifest_path = Path(manifest_path)
        with open(manifest_path, 'r', encoding='utf-8') as f:
            manifest = json.load(f)
        layout = build_layout(manifest['D'], manifest['patch_size'], manifest['halo'])
        if len(manifest['patches']) != layout.n_patches:
            raise ConfigError(f"Manifest lists {len(manifest['patches'])} patches, layout has {layout.n_patches}")
        models = [self.read_model(manifest_path.parent / entry['model']) for entry in manifest['patches']]
        return layout, models

    def describe(self, path: Path) -> Dict[str, object]:
        """Header summary of any artifact, for provenance records"""
        kind = self.identify_artifact_type(path)
        info: Dict[str, object] = {'path': str(path), 'type': kind}
        if kind == 'dataset':
            with open(path, 'rb') as f:
                _, D, T, dt, t0 = DATASET_HEADER.unpack(f.read(DATASET_HEADER.size))
            info.update({'D': D, 'T': T, 'dt': dt, 't0': t0})
        elif kind == 'model':
            with open(path, 'rb') as f:
                fields = MODEL_HEADER.unpack(f.read(MODEL_HEADER.size))
            info.update(dict(zip(['N', 'D_in', 'D_out', 'trained', 'nnz', 'rho', 'sigma_in', 'leak',
                                  'tikhonov', 'seed'], fields[1:])))
        return info
