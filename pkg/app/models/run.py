"""
Simulation run models.

This module defines the database model recording the outcome of every
simulation run, so that runs can be listed and compared later.
"""

import json
from datetime import datetime

from app.extensions import db


class SimulationRun(db.Model):
    """
    Model for one recorded simulation run.

    Holds the identifying inputs (seed, preset, target, detector), the
    headline results and the configuration snapshot the run was built from.
    """
    __tablename__ = 'simulation_runs'

    id = db.Column(db.Integer, primary_key=True)

    # Inputs
    seed = db.Column(db.Integer, nullable=False)
    preset = db.Column(db.String(100), nullable=False)
    target = db.Column(db.String(50), nullable=False)
    detector = db.Column(db.String(50), nullable=False)

    # Results
    particles_in = db.Column(db.Integer, nullable=False, default=0)
    mass_in_kg = db.Column(db.Float, nullable=False, default=0.0)
    purity = db.Column(db.Float, nullable=False, default=0.0)
    mass_purity = db.Column(db.Float, nullable=False, default=0.0)
    recovery = db.Column(db.Float, nullable=False, default=0.0)
    throughput_kg_s = db.Column(db.Float, nullable=False, default=0.0)
    frames_processed = db.Column(db.Integer, nullable=False, default=0)
    commands_sent = db.Column(db.Integer, nullable=False, default=0)
    flicks_executed = db.Column(db.Integer, nullable=False, default=0)
    breaches = db.Column(db.Integer, nullable=False, default=0)

    # Where the run wrote its files
    output_dir = db.Column(db.String(500), nullable=True)

    config_snapshot = db.Column(db.Text, nullable=True)

    created_at = db.Column(db.DateTime, default=datetime.utcnow)

    @classmethod
    def from_report(cls, report, output_dir=None):
        """Build a row from a SimReport."""
        return cls(
            seed=report.seed,
            preset=report.preset,
            target=report.target.value,
            detector=report.detector,
            particles_in=report.particles_in,
            mass_in_kg=report.mass_in_g / 1000.0,
            purity=report.purity,
            mass_purity=report.mass_purity,
            recovery=report.recovery,
            throughput_kg_s=report.throughput_kg_s,
            frames_processed=report.frames_processed,
            commands_sent=report.commands_sent,
            flicks_executed=report.flicks_executed,
            breaches=report.breaches,
            output_dir=str(output_dir) if output_dir else None,
            config_snapshot=report.config_snapshot
        )

    def to_dict(self, include_config=False):
        data = {
            'id': self.id,
            'seed': self.seed,
            'preset': self.preset,
            'target': self.target,
            'detector': self.detector,
            'particles_in': self.particles_in,
            'mass_in_kg': self.mass_in_kg,
            'purity': self.purity,
            'mass_purity': self.mass_purity,
            'recovery': self.recovery,
            'throughput_kg_s': self.throughput_kg_s,
            'frames_processed': self.frames_processed,
            'commands_sent': self.commands_sent,
            'flicks_executed': self.flicks_executed,
            'breaches': self.breaches,
            'output_dir': self.output_dir,
            'created_at': self.created_at.isoformat() if self.created_at else None
        }
        if include_config:
            data['config'] = json.loads(self.config_snapshot) if self.config_snapshot else None
        return data

    def __repr__(self):
        return f'<SimulationRun {self.id} {self.preset} seed={self.seed} purity={self.purity:.4f}>'
