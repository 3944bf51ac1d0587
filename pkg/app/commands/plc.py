"""
PLC emulator commands.

This module provides the command that serves the wire protocol and drives
the virtual paddle array until it is interrupted.
"""

import logging
import signal

import click
from flask import current_app
from flask.cli import with_appcontext

from app.commands import cli_errors, load_cli_config

# Configure logging
logger = logging.getLogger(__name__)


@click.command('serve-plc')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help='Run configuration file (TOML) supplying the paddle layout')
@click.option('--preset', default=None, help='Preset of the configuration file to use')
@click.option('--host', default=None, help='Address to bind (defaults to PLC_HOST)')
@click.option('--port', type=int, default=None, help='Port to bind (defaults to PLC_PORT)')
@click.option('--tick-ms', type=float, default=None, help='Scheduler tick period')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None,
              help='Directory for the operations log')
@click.option('--set', 'settings', multiple=True, metavar='KEY=VALUE',
              help='Override a configuration key')
@with_appcontext
def serve_plc_command(config_path, preset, host, port, tick_ms, out_dir, settings):
    """Serve the PLC wire protocol against a virtual paddle array."""
    from app.api.plc_server import PlcServer
    from app.services.report_service import OpLogWriter

    with cli_errors():
        config = load_cli_config(config_path, preset, settings)
        host = host or current_app.config.get('PLC_HOST') or config.wire.host
        port = port if port is not None else current_app.config.get('PLC_PORT', config.wire.port)
        oplog = OpLogWriter(config.logs.path('operations', out_dir))
        server = PlcServer(host, port, config.layout, tick_ms or config.sim.tick_ms, sink=oplog.append)

        def _shutdown(signum, frame):
            logger.info(f"Received signal {signum}, shutting down")
            server.request_stop()

        previous = {sig: signal.signal(sig, _shutdown) for sig in (signal.SIGINT, signal.SIGTERM)}
        try:
            server.start()
            click.echo(f"PLC emulator listening on {server.address[0]}:{server.address[1]}")
            click.echo(f"Operations log: {oplog.path}")
            server.serve_forever()
        finally:
            server.stop()
            oplog.close()
            for sig, handler in previous.items():
                signal.signal(sig, handler)

    counters = server.session.counters()
    click.echo('PLC emulator stopped')
    for key, value in counters.items():
        click.echo(f"  {key:<20}{value}")


def register_plc_commands(app):
    """Register PLC emulator CLI commands with the Flask application."""
    app.cli.add_command(serve_plc_command)
