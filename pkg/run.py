"""
Application entry point.

This module is the entry point for running the application.
It creates a Flask application instance using the factory function; the
command-line tools are reached through ``flask --app run <command>``.
"""

import os
from app import create_app

# Determine which configuration to use
config_name = os.environ.get('FLASK_CONFIG', 'development')

# Create an application instance with the specified configuration
app = create_app(config_name)

if __name__ == '__main__':
    # Serve the JSON API (health check and run history)
    port = int(os.environ.get('PORT', 5000))

    app.run(
        host='127.0.0.1',
        port=port,
        debug=(config_name == 'development')
    )
