"""
Models package initialization.

This module imports the database models to make them available when importing from the models package.
The value types of the pipeline (geometry, detections, control, reports) live in their own modules.
"""

from app.models.run import SimulationRun

__all__ = [
    'SimulationRun'
]
