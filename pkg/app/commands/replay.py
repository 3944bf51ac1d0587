"""
Replay commands.

This module provides the command that recomputes the operational counters
of a run from its operations log.
"""

import json

import click
from flask.cli import with_appcontext

from app.commands import cli_errors


@click.command('replay')
@click.argument('oplog', type=click.Path(exists=True, dir_okay=False))
@click.option('--json', 'as_json', is_flag=True, help='Print the counters as JSON')
@with_appcontext
def replay_command(oplog, as_json):
    """Recompute flick, breach and latency counters from an operations log."""
    from app.services.report_service import format_operations, replay

    with cli_errors():
        summary = replay(oplog)

    if as_json:
        click.echo(json.dumps(summary.to_dict(), sort_keys=True))
    else:
        click.echo(format_operations(summary), nl=False)
    if summary.corrupt_rows:
        click.echo(f"Warning: {summary.corrupt_rows} corrupt rows skipped", err=True)


def register_replay_commands(app):
    """Register replay CLI commands with the Flask application."""
    app.cli.add_command(replay_command)
