"""
Application configuration settings.

This module defines different configuration classes for various environments
(development, testing, production). Line parameters are not set here: they
come from the run configuration file named by ARIS_RUN_CONFIG.
"""

import os

# Load environment variables from .env file if python-dotenv is installed
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass


class Config:
    """Base configuration class with settings common to all environments."""

    # Run configuration file (None selects the bundled default)
    ARIS_RUN_CONFIG = os.environ.get('ARIS_RUN_CONFIG')

    # Overrides the log directory of the run configuration
    ARIS_LOG_DIR = os.environ.get('ARIS_LOG_DIR')

    # Run history database
    SQLALCHEMY_DATABASE_URI = os.environ.get('DATABASE_URI', 'sqlite:///aris.db')

    # Disable SQLAlchemy modification tracking to save resources
    SQLALCHEMY_TRACK_MODIFICATIONS = False

    # Endpoint of serve-plc
    PLC_HOST = os.environ.get('PLC_HOST', '127.0.0.1')
    PLC_PORT = int(os.environ.get('PLC_PORT', 5020))

    # Record simulation runs in the database
    RECORD_RUNS = True

    # Error logging
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO')


class DevelopmentConfig(Config):
    """Development environment configuration."""

    # Debug mode enables features helpful during development
    DEBUG = True

    # More verbose logging for development
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'DEBUG')

    # Use SQLite for development - it's simple and doesn't require a server
    SQLALCHEMY_DATABASE_URI = os.environ.get('DATABASE_URI', 'sqlite:///dev.db')


class TestingConfig(Config):
    """Testing environment configuration."""

    # Testing mode
    TESTING = True

    # Use in-memory SQLite for tests to avoid file dependencies
    SQLALCHEMY_DATABASE_URI = 'sqlite:///:memory:'

    # Tests pick their own files
    ARIS_RUN_CONFIG = None
    ARIS_LOG_DIR = None

    LOG_LEVEL = 'WARNING'


class ProductionConfig(Config):
    """Production environment configuration."""

    # No debug mode in production
    DEBUG = False

    # Ensure the database URI is set from environment variables
    SQLALCHEMY_DATABASE_URI = os.environ.get('DATABASE_URI', 'sqlite:///aris.db')


# Mapping from string names to configuration classes
# This allows us to select the configuration by name
config_by_name = {
    'development': DevelopmentConfig,
    'testing': TestingConfig,
    'production': ProductionConfig
}
