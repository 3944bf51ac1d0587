"""
Particle models.

This module defines the ground-truth fragments carried by the belt and the
footprints the cameras see of them.
"""

from dataclasses import dataclass, field
from typing import Optional

from app.models.geometry import BBox
from app.models.material import BinOutcome, MaterialClass, ParticleState


@dataclass
class Particle:
    """
    A shredded fragment on the belt.

    Positions are in millimetres: ``x_mm`` is the centroid across the belt,
    the position along the belt is measured from the feeder drop line and
    grows as ``v * (t - spawn_ts)``. ``w_mm`` is the extent across the belt
    and ``h_mm`` the extent along it.
    """
    id: int
    true_class: MaterialClass
    w_mm: float
    h_mm: float
    mass_g: float
    spawn_ts: float
    x_mm: float
    speed_mps: float
    state: ParticleState = ParticleState.ON_BELT
    outcome: Optional[BinOutcome] = None
    frame_id: Optional[int] = field(default=None, compare=False)

    def position_at(self, t_ms):
        """Distance of the centroid from the feeder drop line at ``t_ms``."""
        # 1 m/s is exactly 1 mm/ms
        return self.speed_mps * (t_ms - self.spawn_ts)

    @property
    def belt_offset_mm(self):
        """Position along the belt in the belt's own frame (time independent)."""
        return -self.speed_mps * self.spawn_ts


@dataclass(frozen=True)
class Sighting:
    """The footprint of one particle as seen by a camera frame."""
    particle_id: int
    true_class: MaterialClass
    bbox: BBox
