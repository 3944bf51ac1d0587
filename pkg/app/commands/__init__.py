"""
Commands package initialization.

This file makes the directory a Python package and provides the function
for registering all commands with the Flask CLI, plus the glue the
commands share: loading the run configuration and turning domain errors
into command-line errors.
"""

import contextlib
import logging

import click
from flask import current_app

from app.api.error_handling import ArisError, ConfigError

# Configure logging
logger = logging.getLogger(__name__)


def register_commands(app):
    """Register all CLI commands with the Flask application."""
    # Import and register basic commands
    from app.commands.core import register_core_commands
    register_core_commands(app)

    # Import and register the simulation command
    from app.commands.simulate import register_simulate_commands
    register_simulate_commands(app)

    # Import and register the evaluation command
    from app.commands.evaluate import register_evaluate_commands
    register_evaluate_commands(app)

    # Import and register the operations log replay command
    from app.commands.replay import register_replay_commands
    register_replay_commands(app)

    # Import and register the PLC emulator command
    from app.commands.plc import register_plc_commands
    register_plc_commands(app)


@contextlib.contextmanager
def cli_errors():
    """Report domain errors as click errors (exit code 1)."""
    try:
        yield
    except ConfigError as e:
        raise click.ClickException(f"Invalid configuration: {e}")
    except ArisError as e:
        raise click.ClickException(str(e))


def load_cli_config(config_path=None, preset=None, settings=(), **overrides):
    """
    Load the run configuration for a command.

    Args:
        config_path (str, optional): Config file; defaults to the app's ARIS_RUN_CONFIG
        preset (str, optional): Preset to use
        settings (tuple): ``key=value`` strings from --set
        **overrides: Dotted keys (with ``__`` for dots) whose value is not None

    Returns:
        RunConfig: Validated configuration
    """
    from app.services.config_service import load_run_config, parse_override

    merged = dict(parse_override(text) for text in settings)
    for key, value in overrides.items():
        if value is not None:
            merged[key.replace('__', '.')] = value
    path = config_path or current_app.config.get('ARIS_RUN_CONFIG')
    return load_run_config(path, preset, merged)
