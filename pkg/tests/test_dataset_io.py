#!/usr/bin/env python3
"""
Tests for the artifact store: binary datasets and models, localized
layout manifests and magic-byte detection.
"""

import dataclasses
import json
import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

# Add parent directory to Python path
parent_path = Path(__file__).parent.parent
sys.path.insert(0, str(parent_path))

from src.dataset_io import DATASET_HEADER, ArtifactStore
from src.exceptions import ConfigError
from src.experiment_config import ExperimentConfig
from src.experiment_runner import ExperimentRunner
from src.localization import build_layout
from src.models import MacroParams, Trajectory
from src.reservoir import init_reservoir


def sample_trajectory():
    rng = np.random.default_rng(0)
    return Trajectory(rng.normal(size=(6, 25)), 0.01, 3.5)


def sample_model(trained=True, seed=11):
    macro = MacroParams(rho=0.1, sigma_in=0.07, leak=0.7, tikhonov=1e-8)
    model = init_reservoir(40, 6, 6, density=0.1, seed=seed, macro=macro)
    if trained:
        model = dataclasses.replace(model, W_out=np.random.default_rng(seed).normal(size=(6, 40)))
    return model


def test_dataset_write_read():
    print("Testing dataset files...")
    store = ArtifactStore()
    traj = sample_trajectory()
    with tempfile.TemporaryDirectory() as tmp:
        path = store.write_dataset(Path(tmp) / 'nested' / 'train.rnnda', traj)
        assert path.stat().st_size == DATASET_HEADER.size + 6 * 25 * 8
        loaded = store.read_dataset(path)
        assert np.array_equal(loaded.states, traj.states)
        assert loaded.dt == traj.dt and loaded.t0 == traj.t0
        assert store.identify_artifact_type(path) == 'dataset'

        info = store.describe(path)
        assert info['type'] == 'dataset' and info['D'] == 6 and info['T'] == 25
    print("✓ Dataset file tests passed")


def test_truncated_dataset_rejected():
    store = ArtifactStore()
    with tempfile.TemporaryDirectory() as tmp:
        path = store.write_dataset(Path(tmp) / 'train.rnnda', sample_trajectory())
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(ConfigError):
            store.read_dataset(path)


def test_non_finite_dataset_rejected():
    states = sample_trajectory().states.copy()
    states[2, 7] = np.nan
    with pytest.raises(ValueError):
        Trajectory(states, 0.01)
    states[2, 7] = np.inf
    with pytest.raises(ValueError):
        Trajectory(states, 0.01)

    store = ArtifactStore()
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / 'train.rnnda'
        with open(path, 'wb') as f:
            f.write(DATASET_HEADER.pack(b'RNNDA1', 6, 25, 0.01, 0.0))
            f.write(np.ascontiguousarray(states, dtype='<f8').tobytes(order='C'))
        with pytest.raises(ConfigError):
            store.read_dataset(path)


def test_dataset_csv_export():
    store = ArtifactStore()
    traj = sample_trajectory()
    with tempfile.TemporaryDirectory() as tmp:
        csv_path = Path(tmp) / 'train.csv'
        assert store.export_dataset_csv(csv_path, traj)
        frame = pd.read_csv(csv_path)
        assert list(frame.columns) == ['time'] + [f"x{i}" for i in range(6)]
        assert len(frame) == 25
        assert np.allclose(frame['time'], traj.times)
        assert np.allclose(frame['x3'].to_numpy(), traj.states[3], rtol=1e-14, atol=0)


def test_model_write_read():
    print("Testing model files...")
    store = ArtifactStore()
    model = sample_model()
    with tempfile.TemporaryDirectory() as tmp:
        path = store.write_model(Path(tmp) / 'model.rnnda', model)
        loaded = store.read_model(path)
        assert (loaded.W_res != model.W_res).nnz == 0
        assert np.array_equal(loaded.W_in, model.W_in)
        assert np.array_equal(loaded.W_out, model.W_out)
        assert loaded.macro == model.macro
        assert loaded.seed == model.seed and loaded.d_out == 6
        assert store.identify_artifact_type(path) == 'model'

        info = store.describe(path)
        assert info['N'] == 40 and info['trained'] == 1 and info['nnz'] == model.W_res.nnz

        untrained = store.read_model(store.write_model(Path(tmp) / 'untrained.rnnda', sample_model(False)))
        assert untrained.W_out is None and not untrained.is_trained
    print("✓ Model file tests passed")


def test_truncated_model_rejected():
    store = ArtifactStore()
    with tempfile.TemporaryDirectory() as tmp:
        path = store.write_model(Path(tmp) / 'model.rnnda', sample_model())
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(ConfigError):
            store.read_model(path)


def test_wrong_artifact_type_rejected():
    store = ArtifactStore()
    with tempfile.TemporaryDirectory() as tmp:
        dataset = store.write_dataset(Path(tmp) / 'train.rnnda', sample_trajectory())
        with pytest.raises(ConfigError):
            store.read_model(dataset)
        model = store.write_model(Path(tmp) / 'model.rnnda', sample_model())
        with pytest.raises(ConfigError):
            store.read_dataset(model)

        junk = Path(tmp) / 'junk.bin'
        junk.write_bytes(b'not an artifact')
        assert store.identify_artifact_type(junk) is None
        assert not store.validate_artifact_format(junk, 'dataset')
        assert not store.validate_artifact_format(Path(tmp) / 'missing.rnnda', 'dataset')
        assert store.identify_artifact_type(Path(tmp)) is None


def test_layout_write_read():
    print("Testing layout manifests...")
    store = ArtifactStore()
    layout = build_layout(6, 2, 1)
    models = []
    for j in range(layout.n_patches):
        model = init_reservoir(12, layout.input_dim, 2, density=0.3, seed=j)
        models.append(dataclasses.replace(model, W_out=np.full((2, 12), float(j))))

    with tempfile.TemporaryDirectory() as tmp:
        manifest = store.write_layout(Path(tmp) / 'local', layout, models)
        assert manifest.name == 'layout.json'
        assert store.identify_artifact_type(manifest) == 'layout'
        with open(manifest, 'r', encoding='utf-8') as f:
            content = json.load(f)
        assert content['patches'][1]['inputs'] == [1, 2, 3, 4]

        loaded_layout, loaded_models = store.read_layout(manifest)
        assert loaded_layout.n_patches == 3 and loaded_layout.halo == 1
        for j, model in enumerate(loaded_models):
            assert np.array_equal(model.W_out, models[j].W_out)
            assert np.array_equal(model.W_in, models[j].W_in)

        content['patches'] = content['patches'][:2]
        with open(manifest, 'w', encoding='utf-8') as f:
            json.dump(content, f)
        with pytest.raises(ConfigError):
            store.read_layout(manifest)

        other = Path(tmp) / 'other.json'
        other.write_text(json.dumps({'format': 'something-else'}))
        assert store.identify_artifact_type(other) is None
    print("✓ Layout manifest tests passed")


def test_generate_writes_dataset_csv_when_enabled():
    print("Testing dataset CSV export from the generate stage...")
    settings = {'system': {'D': 6}, 'dataset': {'train_length': 300, 'test_length': 120, 'spinup': 50}}
    with tempfile.TemporaryDirectory() as tmp:
        plain = ExperimentRunner(ExperimentConfig.from_dict(settings), Path(tmp) / 'plain')
        assert set(plain.generate()) == {'train', 'test'}
        assert not (plain.dataset_dir / 'train.csv').exists()

        config = ExperimentConfig.from_dict(settings).apply_overrides(['output.dataset_csv=true'])
        runner = ExperimentRunner(config, Path(tmp) / 'csv')
        paths = runner.generate()
        assert paths['train_csv'] == runner.dataset_dir / 'train.csv'
        data = runner.load_dataset()
        for name in ('train', 'test'):
            frame = pd.read_csv(paths[f"{name}_csv"])
            assert list(frame.columns) == ['time'] + [f"x{i}" for i in range(6)]
            assert len(frame) == data[name].n_times
            assert np.allclose(frame['x0'].to_numpy(), data[name].states[0], rtol=1e-14, atol=0)
    print("✓ Generate-stage CSV export tests passed")


def main():
    """Run all artifact store tests"""
    print("Running artifact store tests\n")

    try:
        test_dataset_write_read()
        test_truncated_dataset_rejected()
        test_non_finite_dataset_rejected()
        test_dataset_csv_export()
        test_generate_writes_dataset_csv_when_enabled()
        test_model_write_read()
        test_truncated_model_rejected()
        test_wrong_artifact_type_rejected()
        test_layout_write_read()

        print("\n✅ All artifact store tests passed!")

    except AssertionError as e:
        print(f"\n❌ Test failed: {e}")
        sys.exit(1)
    except Exception as e:
        print(f"\n❌ Unexpected error: {e}")
        sys.exit(1)


if __name__ == '__main__':
    main()
