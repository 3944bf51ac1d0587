"""
API routes blueprint.

This module defines the JSON API of the application: a health check and the
history of recorded simulation runs.
"""

import logging

from flask import Blueprint, jsonify, request

from app.api.error_handling import ErrorResponse
from app.extensions import db
from app.models.run import SimulationRun

# Configure logging
logger = logging.getLogger(__name__)

# Create the blueprint
api_bp = Blueprint('api', __name__)


@api_bp.route('/health', methods=['GET'])
def health_route():
    """Liveness check."""
    return jsonify({
        "success": True,
        "status": "ok"
    })


@api_bp.route('/runs', methods=['GET'])
def list_runs_route():
    """List recorded simulation runs, newest first."""
    limit = request.args.get('limit', 50, type=int)
    query = SimulationRun.query.order_by(SimulationRun.created_at.desc(), SimulationRun.id.desc())

    preset = request.args.get('preset')
    if preset:
        query = query.filter_by(preset=preset)

    runs = query.limit(max(1, min(limit, 500))).all()
    return jsonify({
        "success": True,
        "runs": [run.to_dict() for run in runs]
    })


@api_bp.route('/runs/<int:run_id>', methods=['GET'])
def get_run_route(run_id):
    """One recorded run, including its configuration snapshot."""
    run = db.session.get(SimulationRun, run_id)
    if run is None:
        logger.debug(f"Run {run_id} requested but not recorded")
        error = ErrorResponse(message=f"Run {run_id} not found", error_code='NOT_FOUND')
        return jsonify(error.to_dict()), 404

    return jsonify({
        "success": True,
        "run": run.to_dict(include_config=True)
    })
