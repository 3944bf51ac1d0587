"""
Geometry models.

This module defines the belt calibration and the bounding box value type
used throughout the detection pipeline. A box always knows which of the
three coordinate spaces it lives in, so that normalized, per-camera and
full-belt coordinates can never be mixed by accident.
"""

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

from app.api.error_handling import ConfigError, DegenerateBoxError, GeometryError
from app.models.material import MaterialClass

MM_PER_INCH = 25.4


class CoordinateSpace(enum.Enum):
    """Enumeration of the coordinate spaces a box can live in."""
    NORMALIZED = 'normalized'  # Fractions of the frame extents
    SEGMENT_PX = 'segment_px'  # Pixels of one camera segment
    GLOBAL_PX = 'global_px'    # Pixels of the stitched full-belt frame


@dataclass(frozen=True)
class BeltCalibration:
    """
    Geometry of the stitched camera frame and the belt.

    ``px_per_mm`` is derived from the belt width unless given explicitly.
    """
    belt_width_px: int = 5760
    belt_width_in: float = 64.0
    segment_count: int = 3
    segment_width_px: int = 1920
    segment_height_px: int = 1200
    net_input_px: int = 640
    belt_speed_mps: float = 1.2
    # Belt length between the downstream edge of the FOV and the discharge edge
    fov_to_edge_mm: float = 300.0
    px_per_mm_override: Optional[float] = None

    @property
    def belt_width_mm(self):
        return self.belt_width_in * MM_PER_INCH

    @property
    def px_per_mm(self):
        if self.px_per_mm_override is not None:
            return self.px_per_mm_override
        return self.belt_width_px / self.belt_width_mm

    @property
    def fov_length_mm(self):
        """Length of belt covered by one frame."""
        return self.segment_height_px / self.px_per_mm

    @property
    def global_frame(self):
        """Extents (width, height) of the stitched frame in pixels."""
        return (float(self.belt_width_px), float(self.segment_height_px))

    def validate(self, prefix='calibration'):
        """
        Check the calibration invariants.

        Raises:
            ConfigError: Naming the first offending field
        """
        for name in ('belt_width_px', 'segment_count', 'segment_width_px',
                     'segment_height_px', 'net_input_px'):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{prefix}.{name}", "must be positive")
        if self.belt_width_in <= 0:
            raise ConfigError(f"{prefix}.belt_width_in", "must be positive")
        if self.segment_count * self.segment_width_px != self.belt_width_px:
            raise ConfigError(
                f"{prefix}.segment_width_px",
                f"{self.segment_count} x {self.segment_width_px} px does not tile "
                f"the {self.belt_width_px} px belt"
            )
        if self.px_per_mm <= 0:
            raise ConfigError(f"{prefix}.px_per_mm", "must be positive")
        derived = self.belt_width_px / self.belt_width_mm
        if abs(self.px_per_mm - derived) > 0.02 * derived:
            raise ConfigError(
                f"{prefix}.px_per_mm",
                f"{self.px_per_mm:.3f} px/mm disagrees with the belt width ({derived:.3f} px/mm)"
            )
        if not 0.0 <= self.belt_speed_mps <= 1.3:
            raise ConfigError(f"{prefix}.belt_speed_mps", "must lie in [0, 1.3] m/s")
        if self.fov_to_edge_mm < 0:
            raise ConfigError(f"{prefix}.fov_to_edge_mm", "must not be negative")
        return self


@dataclass(frozen=True)
class BBox:
    """
    An axis-aligned box given by its center and extents.

    Pixel-space boxes carry the extents of the frame they belong to so they
    can be clamped and rescaled; segment boxes also carry the camera index.
    """
    class_id: MaterialClass
    x_c: float
    y_c: float
    w: float
    h: float
    confidence: float = 1.0
    space: CoordinateSpace = CoordinateSpace.NORMALIZED
    segment_index: Optional[int] = None
    frame_w: Optional[float] = field(default=None, compare=False)
    frame_h: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise GeometryError(f"Confidence {self.confidence} outside [0, 1]")
        if self.w < 0 or self.h < 0:
            raise GeometryError(f"Negative box extents ({self.w}, {self.h})")
        values = (self.x_c, self.y_c, self.w, self.h)
        if not all(math.isfinite(v) for v in values):
            raise GeometryError(f"Non-finite box coordinates {values}")

        if self.space is CoordinateSpace.NORMALIZED:
            if not all(0.0 <= v <= 1.0 for v in values):
                raise GeometryError(f"Normalized coordinates outside [0, 1]: {values}")
            if self.w * self.h <= 0:
                raise DegenerateBoxError(f"Zero-area normalized box: {values}")
        else:
            if not self.frame_w or not self.frame_h:
                raise GeometryError(f"{self.space.value} box needs its frame extents")
            if self.space is CoordinateSpace.SEGMENT_PX and self.segment_index is None:
                raise GeometryError("Segment box needs its segment index")

    @classmethod
    def normalized(cls, class_id, x_c, y_c, w, h, confidence=1.0):
        return cls(class_id, x_c, y_c, w, h, confidence)

    @classmethod
    def in_segment(cls, segment_index, class_id, x_c, y_c, w, h, frame_w, frame_h,
                   confidence=1.0):
        return cls(class_id, x_c, y_c, w, h, confidence, CoordinateSpace.SEGMENT_PX,
                   segment_index, float(frame_w), float(frame_h))

    @classmethod
    def in_global(cls, class_id, x_c, y_c, w, h, cal, confidence=1.0):
        frame_w, frame_h = cal.global_frame
        return cls(class_id, x_c, y_c, w, h, confidence, CoordinateSpace.GLOBAL_PX,
                   None, frame_w, frame_h)

    @property
    def x_min(self):
        return self.x_c - self.w / 2

    @property
    def x_max(self):
        return self.x_c + self.w / 2

    @property
    def y_min(self):
        return self.y_c - self.h / 2

    @property
    def y_max(self):
        return self.y_c + self.h / 2

    @property
    def area(self):
        return self.w * self.h

    @property
    def extents(self):
        """Frame extents (width, height) in this box's units."""
        if self.space is CoordinateSpace.NORMALIZED:
            return (1.0, 1.0)
        return (self.frame_w, self.frame_h)

    def same_space(self, other):
        """Whether two boxes share a coordinate space (and segment)."""
        return self.space is other.space and self.segment_index == other.segment_index

    def with_changes(self, **changes):
        return replace(self, **changes)
