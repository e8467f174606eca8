#!/usr/bin/env python3

import click
import logging
import os
from pathlib import Path
import sys

try:
    from .exceptions import ConfigError
    from .experiment_config import OUTPUT_ENV_VAR, load_config, write_ini
    from .experiment_runner import ExperimentRunner
    from .experiment_validator import ExperimentValidator
    from .sweep_processor import SweepProcessor
except ImportError:
    from exceptions import ConfigError
    from experiment_config import OUTPUT_ENV_VAR, load_config, write_ini
    from experiment_runner import ExperimentRunner
    from experiment_validator import ExperimentValidator
    from sweep_processor import SweepProcessor

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

EXIT_ERROR = 1
EXIT_DIVERGED = 2


def _prepare(ctx: click.Context, stage: str, extra_overrides: tuple = ()) -> ExperimentRunner:
    """Load, override and validate the configuration for one stage"""
    opts = ctx.obj
    overrides = list(opts['override']) + list(extra_overrides)
    if opts['seed'] is not None:
        overrides.append(f"seeds.root={opts['seed']}")
    try:
        config = load_config(opts['config'], overrides)
    except ConfigError as e:
        logger.error(f"Configuration failed: {e}")
        click.echo(f"Error: {e}", err=True)
        sys.exit(EXIT_ERROR)

    out_dir = Path(opts['out'] or os.environ.get(OUTPUT_ENV_VAR) or config.output.directory)
    if opts['out']:
        config.output.directory = str(out_dir)

    validator = ExperimentValidator()
    is_valid = validator.validate(config, stage)
    report = validator.get_validation_report()
    if report.strip() != "No validation issues found.":
        click.echo("\nValidation Report:", err=not is_valid)
        click.echo(report, err=not is_valid)
    if not is_valid:
        click.echo("Error: configuration is invalid; nothing was run", err=True)
        sys.exit(EXIT_ERROR)

    out_dir.mkdir(parents=True, exist_ok=True)
    write_ini(config, out_dir / f"{stage}_config.ini")
    return ExperimentRunner(config, out_dir, n_jobs=opts['jobs'])


@click.group()
@click.option('--config', '-c', 'config_path', type=click.Path(exists=True, path_type=Path),
              help='Experiment configuration (INI file, or a summary.json from an earlier run)')
@click.option('--seed', type=int, help='Root seed for every random stream (overrides seeds.root)')
@click.option('--out', '-o', type=click.Path(path_type=Path),
              help=f'Output directory (default: ${OUTPUT_ENV_VAR} or output.directory)')
@click.option('--override', multiple=True, metavar='SECTION.KEY=VALUE',
              help='Override one configuration value; repeatable')
@click.option('--jobs', '-j', type=int, default=1, show_default=True,
              help='Parallel workers for sweeps, patch training and evaluation')
@click.option('--verbose', '-v', is_flag=True, help='Enable verbose logging')
@click.pass_context
def cli(ctx, config_path, seed, out, override, jobs, verbose):
    """
    RNN data-assimilation lab - train reservoir networks on Lorenz-96 data
    and cycle ETKF, 4D-Var, LETKF and direct insertion with them.

    Examples:
        # Generate the 6D dataset, train model 1, run RNN-ETKF
        rnnda --out runs/exp1 generate
        rnnda --out runs/exp1 train
        rnnda --out runs/exp1 run

        # 4D-Var with frequent, low-noise observations
        rnnda --out runs/exp1 --override assimilation.scheme=fourdvar \\
              --override assimilation.sigma_noise=0.1 run

        # Perfect-model ETKF baseline with all nodes observed
        rnnda --out runs/base --override model.kind=l96 \\
              --override assimilation.obs_nodes=all --override assimilation.inflation=1.05 run

        # VPT histogram, FTLE curve and error-correlation tables
        rnnda --out runs/exp1 evaluate

        # Noise / observation-interval sweep on 4 workers
        rnnda --config sweep.ini --out runs/exp1 --jobs 4 sweep

        # Re-create a run from its summary
        rnnda --config runs/exp1/run_etkf/summary.json --out runs/rerun run
    """
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    ctx.obj = {'config': config_path, 'seed': seed, 'out': out, 'override': override, 'jobs': jobs}


@cli.command()
@click.option('--csv', 'csv_export', is_flag=True, help='Also write the datasets as CSV for debugging')
@click.pass_context
def generate(ctx, csv_export):
    """Integrate the nature run and write train/test datasets"""
    runner = _prepare(ctx, 'generate', ('output.dataset_csv=true',) if csv_export else ())
    try:
        paths = runner.generate()
        for name, path in paths.items():
            click.echo(f"Wrote {name} dataset: {path}")
    except Exception as e:
        logger.error(f"Dataset generation failed: {e}")
        click.echo(f"Error: {e}", err=True)
        sys.exit(EXIT_ERROR)


@cli.command()
@click.option('--dataset', type=click.Path(exists=True, file_okay=False, path_type=Path),
              help='Dataset directory (default: <out>/dataset)')
@click.pass_context
def train(ctx, dataset):
    """Train the readout(s), optionally searching macro-scale parameters first"""
    runner = _prepare(ctx, 'train')
    try:
        result = runner.train(dataset)
        for path in result['paths']:
            click.echo(f"Wrote model: {path}")
        if result['macro'] is not None:
            click.echo(f"Macro parameters: {result['macro'].as_dict()}")
    except Exception as e:
        logger.error(f"Training failed: {e}")
        click.echo(f"Error: {e}", err=True)
        sys.exit(EXIT_ERROR)


@cli.command()
@click.option('--dataset', type=click.Path(exists=True, file_okay=False, path_type=Path),
              help='Dataset directory (default: <out>/dataset)')
@click.option('--model', type=click.Path(exists=True, path_type=Path),
              help='Model file, layout manifest, or model directory (default: <out>/model)')
@click.pass_context
def run(ctx, dataset, model):
    """Cycle the configured assimilation scheme over the test trajectory"""
    runner = _prepare(ctx, 'run')
    try:
        summary = runner.run(dataset, model)
    except Exception as e:
        logger.error(f"Run failed: {e}")
        click.echo(f"Error: {e}", err=True)
        sys.exit(EXIT_ERROR)

    means = summary['time_mean']
    click.echo(f"\n{summary['scheme']}: {summary['n_cycles']} cycles")
    click.echo(f"  time-mean NRMSE observed:   {means['analysis_nrmse_obs']:.4f}")
    click.echo(f"  time-mean NRMSE unobserved: {means['analysis_nrmse_unobs']:.4f}")
    click.echo(f"  time-mean NRMSE all:        {means['analysis_nrmse_all']:.4f}")
    if summary['diverged']:
        click.echo("Run diverged; diagnostics were written up to the stopping point", err=True)
        sys.exit(EXIT_DIVERGED)
    click.echo("\nRun completed successfully!")


@cli.command()
@click.option('--dataset', type=click.Path(exists=True, file_okay=False, path_type=Path),
              help='Dataset directory (default: <out>/dataset)')
@click.option('--model', type=click.Path(exists=True, path_type=Path),
              help='Model file, layout manifest, or model directory (default: <out>/model)')
@click.pass_context
def evaluate(ctx, dataset, model):
    """VPT histogram, FTLE-vs-horizon and error-correlation tables"""
    runner = _prepare(ctx, 'evaluate')
    try:
        summary = runner.evaluate(dataset, model)
    except Exception as e:
        logger.error(f"Evaluation failed: {e}")
        click.echo(f"Error: {e}", err=True)
        sys.exit(EXIT_ERROR)
    click.echo(f"Median VPT: {summary['vpt']['median']:.3f} MTU over {summary['vpt']['n']} forecasts")
    click.echo(f"Leading FTLE at longest horizon: {summary['ftle_longest_horizon']:.4f}")


@cli.command()
@click.option('--dataset', type=click.Path(exists=True, file_okay=False, path_type=Path),
              help='Dataset directory (default: <out>/dataset)')
@click.option('--model', type=click.Path(exists=True, path_type=Path),
              help='Model file, layout manifest, or model directory (default: <out>/model)')
@click.pass_context
def sweep(ctx, dataset, model):
    """Run the [sweep] grid and merge the results into one CSV"""
    runner = _prepare(ctx, 'sweep')
    processor = SweepProcessor(runner)
    coverage = processor.validate_grid_coverage()
    if coverage['warnings']:
        click.echo("Sweep Grid Warnings:", err=True)
        for warning in coverage['warnings']:
            click.echo(f"  - {warning}", err=True)
        click.echo()
    click.echo(f"Running {coverage['points']} {coverage['kind']} grid points")

    try:
        frame = processor.run(dataset, model)
    except Exception as e:
        logger.error(f"Sweep failed: {e}")
        click.echo(f"Error: {e}", err=True)
        sys.exit(EXIT_ERROR)

    click.echo(f"Merged results: {processor.generate_sweep_output_paths()['main_csv']}")
    if 'diverged' in frame and frame['diverged'].any():
        click.echo(f"{int(frame['diverged'].sum())} grid point(s) diverged or failed", err=True)
        sys.exit(EXIT_DIVERGED)


def main():
    cli(obj={})


if __name__ == '__main__':
    main()
