"""
Run configuration models.

This module defines the composite configuration of a simulation run: belt
calibration, paddle layout, detector model, feeder, actuation noise, wire
endpoint and log paths. Every part validates its own invariants and names
the offending field in a ConfigError.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

from app.api.error_handling import ConfigError
from app.models.control import PaddleLayout
from app.models.detection import ConfusionModel
from app.models.geometry import MM_PER_INCH, BeltCalibration
from app.models.material import MATERIAL_CLASSES, MaterialClass


def _default_mix():
    return {MaterialClass.METAL: 0.285, MaterialClass.CIRCUIT_BOARD: 0.390, MaterialClass.PLASTIC: 0.325}


def _default_masses():
    return {MaterialClass.METAL: 60.0, MaterialClass.CIRCUIT_BOARD: 35.0, MaterialClass.PLASTIC: 20.0}


def _default_sizes():
    return {
        MaterialClass.METAL: (MM_PER_INCH, 60.0),
        MaterialClass.CIRCUIT_BOARD: (30.0, 80.0),
        MaterialClass.PLASTIC: (MM_PER_INCH, 70.0)
    }


@dataclass(frozen=True)
class FeederConfig:
    """
    Vibratory feeder delivering a monolayer onto the belt.

    Sizes are (min, max) extents in mm, drawn uniformly for both the across
    and the along-belt extent. Masses are per fragment.
    """
    mass_rate_kg_s: float = 5.0
    class_mix: Dict[MaterialClass, float] = field(default_factory=_default_mix)
    mass_g: Dict[MaterialClass, float] = field(default_factory=_default_masses)
    size_mm: Dict[MaterialClass, Tuple[float, float]] = field(default_factory=_default_sizes)
    min_gap_mm: float = 25.0
    max_attempts: int = 50

    @property
    def mean_mass_g(self):
        return sum(self.class_mix[cls] * self.mass_g[cls] for cls in MATERIAL_CLASSES)

    @property
    def particle_rate_per_s(self):
        if self.mass_rate_kg_s <= 0:
            return 0.0
        return self.mass_rate_kg_s * 1000.0 / self.mean_mass_g

    @property
    def max_extent_mm(self):
        return max(high for _, high in self.size_mm.values())

    def validate(self, belt_width_mm=None, prefix='feeder'):
        if self.mass_rate_kg_s < 0:
            raise ConfigError(f"{prefix}.mass_rate_kg_s", "must not be negative")
        for cls in MATERIAL_CLASSES:
            share = self.class_mix.get(cls)
            if share is None or share < 0:
                raise ConfigError(f"{prefix}.class_mix.{cls.value}", "must be a non-negative share")
            if self.mass_g.get(cls, 0) <= 0:
                raise ConfigError(f"{prefix}.mass_g.{cls.value}", "must be positive")
            low, high = self.size_mm.get(cls, (0, 0))
            if not 0 < low <= high:
                raise ConfigError(f"{prefix}.size_mm.{cls.value}", "needs 0 < min <= max")
            if belt_width_mm is not None and high >= belt_width_mm:
                raise ConfigError(f"{prefix}.size_mm.{cls.value}", "fragment wider than the belt")
        total = sum(self.class_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"{prefix}.class_mix", f"shares sum to {total}, expected 1")
        if self.min_gap_mm < 0:
            raise ConfigError(f"{prefix}.min_gap_mm", "must not be negative")
        if self.max_attempts <= 0:
            raise ConfigError(f"{prefix}.max_attempts", "must be positive")
        return self


@dataclass(frozen=True)
class ActuationNoise:
    """
    Physical imperfection of the strikes.

    ``timing_std_ms`` perturbs the instant a fragment crosses the paddle
    line; ``stray_prob`` is the chance that a fragment nobody struck still
    ends up in the positive bin.
    """
    timing_std_ms: float = 0.0
    stray_prob: float = 0.0

    def validate(self, prefix='sim.noise'):
        if self.timing_std_ms < 0:
            raise ConfigError(f"{prefix}.timing_std_ms", "must not be negative")
        if not 0.0 <= self.stray_prob <= 1.0:
            raise ConfigError(f"{prefix}.stray_prob", "must lie in [0, 1]")
        return self


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one simulation run."""
    seed: int = 0
    particle_count: Optional[int] = None
    duration_ms: Optional[float] = None
    target: MaterialClass = MaterialClass.METAL
    detector: str = 'stochastic'
    conf_thresh: float = 0.5
    nms_iou: float = 0.5
    ton_ms: float = 20.0
    t_offset_ms: float = 0.0
    # Belt length between the feeder drop line and the upstream edge of the FOV
    fov_start_mm: float = 200.0
    inference_latency_ms: float = 60.0
    wire_transit_ms: float = 2.0
    tick_ms: float = 5.0
    feeder: FeederConfig = field(default_factory=FeederConfig)
    noise: ActuationNoise = field(default_factory=ActuationNoise)

    def validate(self, belt_width_mm=None, prefix='sim'):
        if self.particle_count is None and self.duration_ms is None:
            raise ConfigError(f"{prefix}.particle_count", "set particle_count or duration_ms")
        if self.particle_count is not None and self.particle_count < 0:
            raise ConfigError(f"{prefix}.particle_count", "must not be negative")
        if self.duration_ms is not None and not (self.duration_ms >= 0 and math.isfinite(self.duration_ms)):
            raise ConfigError(f"{prefix}.duration_ms", "must be a finite, non-negative time")
        if self.detector not in ('oracle', 'stochastic'):
            raise ConfigError(f"{prefix}.detector", f"unknown detector {self.detector!r}")
        for name in ('conf_thresh', 'nms_iou'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{prefix}.{name}", "must lie in [0, 1]")
        for name in ('ton_ms', 'inference_latency_ms', 'wire_transit_ms'):
            if getattr(self, name) < 0:
                raise ConfigError(f"{prefix}.{name}", "must not be negative")
        if self.fov_start_mm <= 0:
            raise ConfigError(f"{prefix}.fov_start_mm", "fragments must settle before the camera")
        if self.tick_ms <= 0:
            raise ConfigError(f"{prefix}.tick_ms", "must be positive")
        self.feeder.validate(belt_width_mm, f"{prefix}.feeder")
        self.noise.validate(f"{prefix}.noise")
        return self


@dataclass(frozen=True)
class WireEndpoint:
    """Address of the PLC emulator."""
    host: str = '127.0.0.1'
    port: int = 5020

    def validate(self, prefix='wire'):
        if not 0 <= self.port <= 65535:
            raise ConfigError(f"{prefix}.port", "must lie in 0..65535")
        return self


@dataclass(frozen=True)
class LogPaths:
    """Output files of a run, relative to ``directory``."""
    directory: str = 'logs'
    operations: str = 'operations.csv'
    report: str = 'report.csv'
    summary: str = 'summary.txt'
    particles: str = 'particles.csv'

    def path(self, name, directory=None):
        return Path(directory or self.directory) / getattr(self, name)


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs, plus the merged tree it was built from."""
    preset: str
    calibration: BeltCalibration
    layout: PaddleLayout
    confusion: ConfusionModel
    sim: SimConfig
    wire: WireEndpoint = field(default_factory=WireEndpoint)
    logs: LogPaths = field(default_factory=LogPaths)
    confusion_file: Optional[str] = None
    source_path: Optional[str] = None
    snapshot: str = field(default='', compare=False)

    def validate(self):
        self.calibration.validate()
        self.layout.validate(self.calibration.belt_width_mm)
        self.confusion.validate()
        self.sim.validate(self.calibration.belt_width_mm)
        self.wire.validate()
        return self
