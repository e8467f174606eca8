#!/usr/bin/env python3
"""
Basic functionality test for the RNN data-assimilation lab.
Runs a small end-to-end pipeline in memory (nature run, readout training,
free forecast, one cycled ETKF run) and round-trips a preset file.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

# Add parent directory to Python path
parent_path = Path(__file__).parent.parent
sys.path.insert(0, str(parent_path))

from src.assimilation import ReservoirForecaster, cycle_da
from src.csv_exporter import DiagnosticsExporter
from src.l96_model import generate_dataset, sample_observations
from src.metrics import climatological_std, nrmse
from src.models import CycleConfig, MacroParams
from src.presets import PresetLoader
from src.random_streams import SeedStreams
from src.reservoir import fit_readout, free_forecast, init_reservoir, synchronize_final


def small_pipeline():
    streams = SeedStreams(0)
    data = generate_dataset(D=6, train_length=3000, test_length=1500, spinup=500,
                            seed=streams.generator('nature'))
    macro = PresetLoader().macro_params('model1')
    model = init_reservoir(200, 6, 6, density=0.05, seed=streams.integer_seed('model'), macro=macro)
    return data, fit_readout(model, data['train'], washout=200)


def test_models_and_presets():
    """Presets and seed streams"""
    print("Testing presets and seed streams...")
    loader = PresetLoader()
    assert {'model1', 'model2', 'model3'} <= set(loader.get_presets())
    macro = loader.macro_params('model1')
    assert isinstance(macro, MacroParams)
    assert macro.tikhonov == np.exp(-18.41726026)
    assert loader.hidden_dim('model3', desk_scale=True) == 2000
    assert loader.hidden_dim('model3') == 6000

    streams = SeedStreams(42)
    a = streams.generator('observations').normal(size=3)
    b = streams.generator('observations').normal(size=3)
    c = streams.generator('init').normal(size=3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    print("✓ Preset and seed stream tests passed")


def test_preset_save_and_reload():
    """Optimized parameters written by add_preset/save_presets load back unchanged"""
    print("Testing preset save and reload...")
    loader = PresetLoader()
    macro = MacroParams(rho=0.3, sigma_in=0.05, leak=0.6, tikhonov=1e-7)
    loader.add_preset('optimized', macro, 400, system_dim=6, density=0.02)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / 'model_presets.json'
        loader.save_presets(str(path))
        reloaded = PresetLoader(str(path))
    assert reloaded.hidden_dim('optimized') == 400
    got = reloaded.macro_params('optimized')
    assert got.rho == macro.rho and got.leak == macro.leak
    assert np.isclose(got.tikhonov, macro.tikhonov, rtol=1e-12)
    assert 'model1' in reloaded.get_presets()
    print("✓ Preset save and reload tests passed")


def test_train_and_forecast():
    """A trained network tracks the truth for the first steps of a forecast"""
    print("Testing training and short forecast...")
    data, model = small_pipeline()
    test = data['test']
    sigma = climatological_std(data['train'])
    s0 = synchronize_final(model, test.states[:, :500])
    run = free_forecast(model, s0, test.states[:, 500], 5)
    errors = nrmse(run['states'].states, test.states[:, 500:506], sigma)
    assert errors.shape == (6,)
    assert np.all(np.isfinite(errors))
    assert errors[1] < 0.5, f"one-step error {errors[1]:.3f}"
    print("✓ Training and forecast tests passed")


def test_cycled_etkf_smoke():
    """RNN-ETKF over a short window produces finite diagnostics and exports"""
    print("Testing cycled RNN-ETKF...")
    data, model = small_pipeline()
    test = data['test']
    cfg = CycleConfig(tau_da=0.1, duration=3.0, spinup=300, ensemble_size=8, inflation=1.2)
    obs = sample_observations(test, [0, 1, 3], 0.1, 0.1, 0.1, seed=1, start_step=300)
    diagnostics = cycle_da('etkf', ReservoirForecaster(model), test, obs, cfg,
                           climatological_std(data['train']), np.random.default_rng(2))
    assert len(diagnostics.records) == 30
    assert all(np.isfinite(r.analysis_nrmse_obs) for r in diagnostics.records)

    frame = DiagnosticsExporter().format_cycles_for_export(diagnostics)
    assert len(frame) == 30
    assert frame['time'].is_monotonic_increasing
    print("✓ Cycled RNN-ETKF tests passed")


def main():
    """Run all basic tests"""
    print("Running basic functionality tests for the RNN data-assimilation lab\n")

    try:
        test_models_and_presets()
        test_preset_save_and_reload()
        test_train_and_forecast()
        test_cycled_etkf_smoke()

        print("\n✅ All basic tests passed!")

    except AssertionError as e:
        print(f"\n❌ Test failed: {e}")
        sys.exit(1)
    except Exception as e:
        print(f"\n❌ Unexpected error: {e}")
        sys.exit(1)


if __name__ == '__main__':
    main()
