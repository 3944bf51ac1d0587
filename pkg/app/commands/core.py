"""
Core application commands.

This module provides essential commands for database management and application setup.
"""

import os
from pathlib import Path

import click
from flask import current_app
from flask.cli import with_appcontext

from app.extensions import db


@click.command('init-db')
@with_appcontext
def init_db_command():
    """Initialize the database - create all tables."""
    db.create_all()
    click.echo('Initialized the database.')


@click.command('verify-setup')
@with_appcontext
def verify_setup_command():
    """Verify that the application setup is working correctly."""
    ok = True

    # Check the run configuration
    try:
        from app.services.config_service import load_run_config
        config = load_run_config(current_app.config.get('ARIS_RUN_CONFIG'))
        click.echo(f'✅ Run configuration loaded (preset {config.preset})')
    except Exception as e:
        config = None
        ok = False
        click.echo(f'❌ Run configuration failed: {str(e)}')

    # Check that the fall trajectory reaches the paddle line
    if config is not None:
        from app.services.control_service import horizontal_travel_mm
        travel = horizontal_travel_mm(config.layout, config.calibration.belt_speed_mps)
        standoff = config.layout.standoff_from_belt_edge_mm
        mark = '✅' if abs(travel - standoff) <= 0.1 * standoff else '⚠️'
        click.echo(f'{mark} Paddle standoff {standoff:.1f} mm, fall travel {travel:.1f} mm')

    # Check database connection
    try:
        from sqlalchemy import text
        db.session.execute(text('SELECT 1'))
        click.echo('✅ Database connection successful')
    except Exception as e:
        ok = False
        click.echo(f'❌ Database connection failed: {str(e)}')

    # Check the log directory
    log_dir = current_app.config.get('ARIS_LOG_DIR') or (config.logs.directory if config else 'logs')
    try:
        Path(log_dir).mkdir(parents=True, exist_ok=True)
        if not os.access(log_dir, os.W_OK):
            raise PermissionError(f'{log_dir} is not writable')
        click.echo(f'✅ Log directory {log_dir} is writable')
    except Exception as e:
        ok = False
        click.echo(f'❌ Log directory check failed: {str(e)}')

    # Check if models are accessible
    try:
        from app.models import SimulationRun  # noqa: F401
        click.echo('✅ Models can be imported')
    except Exception as e:
        ok = False
        click.echo(f'❌ Model import failed: {str(e)}')

    click.echo('\nSetup verification complete.')
    if not ok:
        raise SystemExit(1)


def register_core_commands(app):
    """Register core CLI commands with the Flask application."""
    app.cli.add_command(init_db_command)
    app.cli.add_command(verify_setup_command)
