"""
Application factory module for the A.R.I.S. sortation simulator.

This module contains the application factory function that creates and
configures the Flask application instance hosting the command line, the
run history and the JSON API.
"""

import logging
import os

from dotenv import load_dotenv
from flask import Flask, jsonify

from app.config import config_by_name
from app.extensions import db

load_dotenv(verbose=True)  # Load environment variables from .env file


def create_app(config_name='development'):
    """
    Create and configure a Flask application instance.

    Args:
        config_name (str): The configuration to use - 'development', 'testing', or 'production'
                           Defaults to 'development'

    Returns:
        Flask: A configured Flask application instance
    """
    # Get configuration from environment if not explicitly provided
    if not config_name:
        config_name = os.environ.get('FLASK_CONFIG', 'development')

    # Create the Flask app instance
    app = Flask(__name__)

    # Load configuration based on the specified environment
    app.config.from_object(config_by_name[config_name])

    configure_logging(app)

    # Initialize extensions with the app
    register_extensions(app)

    # Register blueprints (routes)
    register_blueprints(app)

    # Register error handlers
    register_error_handlers(app)

    # Register CLI commands
    from app.commands import register_commands
    register_commands(app)

    return app


def configure_logging(app):
    """
    Configure the root logger at the configured LOG_LEVEL.

    Args:
        app (Flask): The Flask application instance
    """
    level = getattr(logging, str(app.config.get('LOG_LEVEL', 'INFO')).upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    logging.getLogger().setLevel(level)
    app.logger.setLevel(level)


def register_extensions(app):
    """
    Register Flask extensions with the application.

    Args:
        app (Flask): The Flask application instance
    """
    # Initialize SQLAlchemy with the app
    # This sets up the run history database
    db.init_app(app)

    # Import models so their tables are known to create_all
    from app import models  # noqa: F401


def register_blueprints(app):
    """
    Register blueprints (route modules) with the application.

    Args:
        app (Flask): The Flask application instance
    """
    # API blueprint for health and run history
    from app.routes.api import api_bp
    app.register_blueprint(api_bp, url_prefix='/api')


def register_error_handlers(app):
    """
    Register error handlers with the application.

    Args:
        app (Flask): The Flask application instance
    """
    from app.api.error_handling import ErrorResponse

    @app.errorhandler(404)
    def page_not_found(e):
        return jsonify(ErrorResponse(message='Not found', error_code='NOT_FOUND').to_dict()), 404

    @app.errorhandler(500)
    def internal_server_error(e):
        return jsonify(ErrorResponse(message='Internal server error', error_code='INTERNAL').to_dict()), 500
