"""
Detection models.

This module defines detections, ground-truth boxes and the confusion model
that parameterises the stochastic stand-in for the trained detector.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from app.api.error_handling import ConfigError
from app.models.geometry import BBox
from app.models.material import MATERIAL_CLASSES, MaterialClass

# Column index of the miss probability in a confusion row
MISS = len(MATERIAL_CLASSES)


@dataclass(frozen=True)
class Detection:
    """
    A detected box in one frame.

    ``particle_id`` records which simulated fragment produced the box. It is
    used for scoring and tie-breaking only and never reaches the controller.
    """
    bbox: BBox
    frame_id: int = 0
    particle_id: Optional[int] = None

    @property
    def class_id(self):
        return self.bbox.class_id

    @property
    def confidence(self):
        return self.bbox.confidence


@dataclass(frozen=True)
class GroundTruth:
    """An annotated box in one frame."""
    bbox: BBox
    frame_id: int = 0
    gt_id: int = 0

    @property
    def class_id(self):
        return self.bbox.class_id


@dataclass(frozen=True)
class ConfidenceStats:
    """Mean and standard deviation of a sampled confidence score."""
    mean: float
    std: float


@dataclass
class ConfusionModel:
    """
    Per-class outcome distribution of the stochastic detector.

    ``rows`` is a 3x4 matrix: row i holds P(pred = j | true = i) for the
    three classes followed by the miss probability.
    """
    rows: np.ndarray
    center_jitter_px: float = 2.0
    size_jitter_frac: float = 0.02
    confidence_correct: ConfidenceStats = ConfidenceStats(0.88, 0.06)
    confidence_confused: ConfidenceStats = ConfidenceStats(0.75, 0.07)
    confidence_overrides: Dict[Tuple[MaterialClass, MaterialClass], ConfidenceStats] = field(
        default_factory=dict
    )
    false_positive_rate: float = 0.0
    confidence_false_positive: ConfidenceStats = ConfidenceStats(0.6, 0.1)
    name: str = 'custom'

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)

    def row(self, true_class):
        """Outcome probabilities (3 classes + miss) for a true class."""
        return self.rows[true_class.index]

    def probability(self, true_class, predicted):
        """P(pred = predicted | true = true_class); ``None`` means a miss."""
        column = MISS if predicted is None else predicted.index
        return float(self.rows[true_class.index, column])

    def confidence_stats(self, true_class, predicted):
        """Confidence distribution of one (true, predicted) cell."""
        key = (true_class, predicted)
        if key in self.confidence_overrides:
            return self.confidence_overrides[key]
        if true_class is predicted:
            return self.confidence_correct
        return self.confidence_confused

    def validate(self, prefix='detector.confusion'):
        """
        Check row-stochasticity and parameter ranges.

        Raises:
            ConfigError: Naming the first offending field
        """
        if self.rows.shape != (len(MATERIAL_CLASSES), MISS + 1):
            raise ConfigError(f"{prefix}.rows", f"expected a 3x4 matrix, got {self.rows.shape}")
        for cls in MATERIAL_CLASSES:
            row = self.row(cls)
            if np.any(row < 0.0) or np.any(row > 1.0):
                raise ConfigError(f"{prefix}.rows.{cls.value}", "probabilities must lie in [0, 1]")
            if abs(row.sum() - 1.0) > 1e-9:
                raise ConfigError(
                    f"{prefix}.rows.{cls.value}",
                    f"row sums to {row.sum():.12f}, expected 1 (including the miss mass)"
                )
        if self.center_jitter_px < 0:
            raise ConfigError(f"{prefix}.center_jitter_px", "must not be negative")
        if self.size_jitter_frac < 0:
            raise ConfigError(f"{prefix}.size_jitter_frac", "must not be negative")
        if self.false_positive_rate < 0:
            raise ConfigError(f"{prefix}.false_positive_rate", "must not be negative")
        stats = [self.confidence_correct, self.confidence_confused, self.confidence_false_positive]
        stats.extend(self.confidence_overrides.values())
        for item in stats:
            if item.std < 0:
                raise ConfigError(f"{prefix}.confidence", "standard deviations must not be negative")
        return self

    @classmethod
    def identity(cls, center_jitter_px=0.0, size_jitter_frac=0.0):
        """A detector that never confuses or misses, with full confidence."""
        perfect = ConfidenceStats(1.0, 0.0)
        rows = np.hstack([np.eye(len(MATERIAL_CLASSES)), np.zeros((len(MATERIAL_CLASSES), 1))])
        return cls(
            rows=rows,
            center_jitter_px=center_jitter_px,
            size_jitter_frac=size_jitter_frac,
            confidence_correct=perfect,
            confidence_confused=perfect,
            name='identity'
        )
