"""
Evaluation models.

This module defines the result of matching detections against ground truth
and the metrics report assembled from it.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.models.material import MATERIAL_CLASSES, MaterialClass


@dataclass(frozen=True)
class DetectionMatch:
    """Matching verdict for one detection."""
    index: int
    class_id: MaterialClass
    confidence: float
    tp: bool
    gt_index: Optional[int] = None


@dataclass(frozen=True)
class MatchResult:
    """
    One-to-one assignment of detections to ground truths at one IoU threshold.

    ``detections`` is ordered by descending confidence. ``gt_matched`` and
    ``gt_classes`` are indexed like the ground-truth input.
    """
    iou_thresh: float
    detections: Tuple[DetectionMatch, ...]
    gt_matched: Tuple[bool, ...]
    gt_classes: Tuple[MaterialClass, ...]

    @property
    def tp(self):
        return sum(1 for d in self.detections if d.tp)

    @property
    def fp(self):
        return sum(1 for d in self.detections if not d.tp)

    @property
    def fn(self):
        return sum(1 for matched in self.gt_matched if not matched)

    @property
    def gt_count(self):
        return len(self.gt_matched)

    def for_class(self, class_id):
        """The part of the result concerning one class."""
        keep = [i for i, cls in enumerate(self.gt_classes) if cls is class_id]
        return MatchResult(
            self.iou_thresh,
            tuple(d for d in self.detections if d.class_id is class_id),
            tuple(self.gt_matched[i] for i in keep),
            tuple(self.gt_classes[i] for i in keep)
        )


@dataclass(frozen=True)
class ClassMetrics:
    """Precision, recall and AP of one class."""
    class_id: MaterialClass
    precision: float
    recall: float
    ap: float
    tp: int
    fp: int
    fn: int
    baseline_ap: float = 0.0

    @property
    def f1(self):
        if self.precision + self.recall == 0:
            return 0.0
        return 2 * self.precision * self.recall / (self.precision + self.recall)

    @property
    def gt_count(self):
        return self.tp + self.fn


@dataclass
class MetricsReport:
    """
    Detection metrics of one evaluation.

    ``confusion_counts`` is 3x4 (true class by predicted class plus miss);
    ``background_fp`` counts detections matching no ground truth at all, per
    predicted class. ``pr_curves`` holds the (recall, precision) sweep of
    every class with ground truth.
    """
    per_class: Dict[MaterialClass, ClassMetrics]
    map_50: float
    map_50_95: float
    confusion_counts: np.ndarray
    background_fp: Tuple[int, ...] = (0, 0, 0)
    map_by_threshold: Dict[float, float] = field(default_factory=dict)
    pr_curves: Dict[MaterialClass, List[Tuple[float, float]]] = field(default_factory=dict)

    @property
    def confusion(self):
        """Row-normalized confusion matrix; rows without samples stay zero."""
        counts = np.asarray(self.confusion_counts, dtype=float)
        totals = counts.sum(axis=1, keepdims=True)
        return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)

    def misclassifications(self):
        """Off-diagonal counts as (true, predicted, count) triples."""
        rows = []
        for i, true_cls in enumerate(MATERIAL_CLASSES):
            for j, pred_cls in enumerate(MATERIAL_CLASSES):
                if i != j and self.confusion_counts[i, j]:
                    rows.append((true_cls, pred_cls, int(self.confusion_counts[i, j])))
        return rows
