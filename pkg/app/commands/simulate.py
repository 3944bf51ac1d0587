"""
Simulation commands.

This module provides the command that runs the sortation line end to end
and writes the report and operations log of the run.
"""

import logging

import click
from flask import current_app
from flask.cli import with_appcontext
from sqlalchemy.exc import SQLAlchemyError

from app.commands import cli_errors, load_cli_config
from app.extensions import db

# Configure logging
logger = logging.getLogger(__name__)


def record_run(report, output_dir):
    """
    Store the run in the run history.

    A database problem never fails the run; it is logged instead.

    Returns:
        SimulationRun: The stored row, or None
    """
    from app.models.run import SimulationRun

    try:
        db.create_all()
        run = SimulationRun.from_report(report, output_dir)
        db.session.add(run)
        db.session.commit()
        return run
    except SQLAlchemyError as e:
        db.session.rollback()
        logger.warning(f"Run not recorded in the database: {e}")
        return None


@click.command('simulate')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help='Run configuration file (TOML)')
@click.option('--preset', default=None, help='Preset of the configuration file to use')
@click.option('--seed', type=int, default=None, help='Random seed')
@click.option('--target', default=None, help='Material collected in the positive bin')
@click.option('--detector', type=click.Choice(['oracle', 'stochastic']), default=None,
              help='Detector model')
@click.option('--particles', type=int, default=None, help='Number of fragments to feed')
@click.option('--duration-ms', type=float, default=None, help='Feed for this long instead')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None,
              help='Output directory (defaults to the configured log directory)')
@click.option('--set', 'settings', multiple=True, metavar='KEY=VALUE',
              help='Override a configuration key, e.g. sim.noise.timing_std_ms=8')
@click.option('--record/--no-record', default=True, help='Store the run in the run history')
@click.option('--json', 'as_json', is_flag=True, help='Print the run summary as JSON')
@with_appcontext
def simulate_command(config_path, preset, seed, target, detector, particles, duration_ms,
                     out_dir, settings, record, as_json):
    """Run the sortation line simulation and write its report."""
    from app.services.report_service import format_summary, report_json, write_run_outputs
    from app.services.simulation_service import run

    with cli_errors():
        config = load_cli_config(
            config_path, preset, settings,
            sim__seed=seed, sim__target=target, detector__kind=detector,
            sim__particle_count=particles, sim__duration_ms=duration_ms
        )
        report, simulation = run(config)
        paths = write_run_outputs(report, simulation, config.logs, out_dir)

    if as_json:
        click.echo(report_json(report))
    else:
        click.echo(format_summary(report), nl=False)
        click.echo('')
        for name, path in paths.items():
            click.echo(f"  {name:<12}{path}")

    if record and current_app.config.get('RECORD_RUNS', True):
        stored = record_run(report, paths['report'].parent)
        if stored is not None:
            click.echo(f"\nRecorded as run {stored.id}", err=as_json)


def register_simulate_commands(app):
    """Register simulation CLI commands with the Flask application."""
    app.cli.add_command(simulate_command)
