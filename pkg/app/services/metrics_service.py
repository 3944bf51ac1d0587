"""
Metrics service module.

This module provides the detection-evaluation arithmetic: one-to-one
matching, precision-recall curves, 101-point interpolated average
precision, mAP at one or several IoU thresholds, confusion matrices, random
baselines, sortation purity and detection rate as a function of IoU.
"""

import logging
from collections import Counter, defaultdict

import numpy as np

from app.api.error_handling import CoordinateSpaceError, EmptyGroundTruthError, EvaluationError
from app.models.detection import MISS
from app.models.evaluation import ClassMetrics, DetectionMatch, MatchResult, MetricsReport
from app.models.material import MATERIAL_CLASSES

# Configure logging
logger = logging.getLogger(__name__)

RECALL_POINTS = np.arange(101) / 100.0
COCO_THRESHOLDS = tuple((50 + 5 * i) / 100.0 for i in range(10))
DEFAULT_IOU_SWEEP = tuple((5 * i) / 100.0 for i in range(1, 20))


def _corners(boxes):
    return np.array([[b.x_min, b.y_min, b.x_max, b.y_max] for b in boxes], dtype=float).reshape(-1, 4)


def iou_matrix(boxes_a, boxes_b):
    """
    Pairwise IoU of two box lists.

    Returns:
        numpy.ndarray: len(a) x len(b) matrix
    """
    a, b = _corners(boxes_a), _corners(boxes_b)
    inter_w = np.maximum(0.0, np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]))
    inter_h = np.maximum(0.0, np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]))
    inter = inter_w * inter_h
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def _check_space(dets, gts):
    boxes = [d.bbox for d in dets] + [g.bbox for g in gts]
    if boxes and any(not box.same_space(boxes[0]) for box in boxes):
        raise CoordinateSpaceError("Detections and ground truths must share one coordinate space")


def _by_confidence(dets):
    """Indices of detections by descending confidence (stable)."""
    return sorted(range(len(dets)), key=lambda i: -dets[i].confidence)


def _greedy_assign(dets, gts, order, iou_thresh, class_aware):
    """
    Greedy assignment in visiting ``order``.

    Returns:
        list: gt index (or None) per detection
    """
    assigned = [None] * len(dets)
    gt_groups = defaultdict(list)
    for j, gt in enumerate(gts):
        key = (gt.frame_id, gt.class_id) if class_aware else gt.frame_id
        gt_groups[key].append(j)

    det_groups = defaultdict(list)
    for i in order:
        key = (dets[i].frame_id, dets[i].class_id) if class_aware else dets[i].frame_id
        det_groups[key].append(i)

    for key, det_indices in det_groups.items():
        gt_indices = gt_groups.get(key)
        if not gt_indices:
            continue
        ious = iou_matrix([dets[i].bbox for i in det_indices], [gts[j].bbox for j in gt_indices])
        free = np.ones(len(gt_indices), dtype=bool)
        for row, i in enumerate(det_indices):
            candidates = np.where(free, ious[row], -1.0)
            best = int(np.argmax(candidates))
            if candidates[best] >= iou_thresh:
                free[best] = False
                assigned[i] = gt_indices[best]
    return assigned


def match(dets, gts, iou_thresh=0.5):
    """
    Match detections to ground truths one-to-one, class by class.

    Detections are visited by descending confidence; each takes the unmatched
    same-class ground truth of its frame with the highest IoU, and is a true
    positive iff that IoU is at least ``iou_thresh``.

    Args:
        dets (list): Detections
        gts (list): Ground truths in the same coordinate space
        iou_thresh (float): Matching threshold

    Returns:
        MatchResult: Verdicts ordered by descending confidence
    """
    _check_space(dets, gts)
    order = _by_confidence(dets)
    assigned = _greedy_assign(dets, gts, order, iou_thresh, class_aware=True)

    gt_matched = [False] * len(gts)
    verdicts = []
    for i in order:
        j = assigned[i]
        if j is not None:
            gt_matched[j] = True
        verdicts.append(DetectionMatch(i, dets[i].class_id, dets[i].confidence, j is not None, j))
    return MatchResult(iou_thresh, tuple(verdicts), tuple(gt_matched), tuple(g.class_id for g in gts))


def pr_curve(match_result):
    """
    Cumulative precision-recall sweep over confidence thresholds.

    Detections with equal confidence enter the sweep together, so the curve
    does not depend on their order.

    Args:
        match_result (MatchResult): Matching of one class (or of all classes)

    Returns:
        list: (recall, precision) points, recall non-decreasing

    Raises:
        EmptyGroundTruthError: If there is no ground truth to recall
    """
    npos = match_result.gt_count
    if npos == 0:
        raise EmptyGroundTruthError("Recall is undefined without ground truth")
    detections = match_result.detections
    if not detections:
        return []

    conf = np.array([d.confidence for d in detections])
    tp_cum = np.cumsum([1 if d.tp else 0 for d in detections])
    fp_cum = np.cumsum([0 if d.tp else 1 for d in detections])
    # last index of every block of equal confidence
    block_ends = np.flatnonzero(np.append(conf[1:] != conf[:-1], True))
    recall = tp_cum[block_ends] / npos
    precision = tp_cum[block_ends] / (tp_cum[block_ends] + fp_cum[block_ends])
    return [(float(r), float(p)) for r, p in zip(recall, precision)]


def average_precision(curve):
    """
    101-point interpolated average precision.

    The precision envelope (best precision at recall >= r) is sampled at
    r = 0.00, 0.01, ..., 1.00 and averaged.

    Args:
        curve (list): (recall, precision) points

    Returns:
        float: AP in [0, 1]
    """
    if not curve:
        return 0.0
    recall = np.array([r for r, _ in curve])
    precision = np.array([p for _, p in curve])
    samples = [
        np.max(precision[recall >= r]) if np.any(recall >= r) else 0.0
        for r in RECALL_POINTS
    ]
    return float(np.mean(samples))


def mean_ap(aps):
    """Arithmetic mean of per-class APs."""
    values = list(aps.values()) if isinstance(aps, dict) else list(aps)
    if not values:
        raise EvaluationError("No class APs to average")
    return float(sum(values) / len(values))


def class_aps(dets, gts, iou_thresh=0.5):
    """
    AP of every class that has ground truth.

    Returns:
        dict: MaterialClass -> AP
    """
    result = match(dets, gts, iou_thresh)
    aps = {}
    for cls in MATERIAL_CLASSES:
        per_class = result.for_class(cls)
        if per_class.gt_count == 0:
            continue
        aps[cls] = average_precision(pr_curve(per_class))
    return aps


def map_at(dets, gts, iou_thresh=0.5):
    """
    mAP at one IoU threshold; classes without ground truth are excluded.

    Raises:
        EmptyGroundTruthError: If no class has ground truth
    """
    aps = class_aps(dets, gts, iou_thresh)
    if not aps:
        raise EmptyGroundTruthError("No class has ground truth")
    return mean_ap(aps)


def map_range(dets, gts, thresholds=COCO_THRESHOLDS):
    """Mean of mAP over the IoU thresholds (0.50:0.95 step 0.05 by default)."""
    return float(np.mean([map_at(dets, gts, t) for t in thresholds]))


def confusion_counts(dets, gts, iou_thresh=0.5):
    """
    Count true-versus-predicted outcomes with class-agnostic matching.

    A well-localized detection with the wrong label counts as a confusion;
    unmatched ground truths fall in the miss column and unmatched detections
    are background false positives.

    Returns:
        tuple: (3x4 count matrix, background false positives per predicted class)
    """
    _check_space(dets, gts)
    assigned = _greedy_assign(dets, gts, _by_confidence(dets), iou_thresh, class_aware=False)

    counts = np.zeros((len(MATERIAL_CLASSES), MISS + 1), dtype=int)
    background = [0] * len(MATERIAL_CLASSES)
    matched = set()
    for i, j in enumerate(assigned):
        if j is None:
            background[dets[i].class_id.index] += 1
        else:
            matched.add(j)
            counts[gts[j].class_id.index, dets[i].class_id.index] += 1
    for j, gt in enumerate(gts):
        if j not in matched:
            counts[gt.class_id.index, MISS] += 1
    return counts, tuple(background)


def normalize_rows(counts):
    """Row-normalize a count matrix; empty rows stay zero."""
    counts = np.asarray(counts, dtype=float)
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


def confusion_matrix(dets, gts, iou_thresh=0.5):
    """
    Normalized confusion matrix: row i is the distribution of predicted
    labels (plus miss) for true class i.
    """
    counts, _ = confusion_counts(dets, gts, iou_thresh)
    return normalize_rows(counts)


def random_baseline(class_counts):
    """
    AP of a detector guessing at random: the class prior.

    Args:
        class_counts (dict): MaterialClass -> number of instances

    Returns:
        dict: MaterialClass -> baseline AP
    """
    total = sum(class_counts.get(cls, 0) for cls in MATERIAL_CLASSES)
    if total <= 0:
        raise EvaluationError("Class counts must not all be zero")
    return {cls: class_counts.get(cls, 0) / total for cls in MATERIAL_CLASSES}


def purity(bin_contents, target_class):
    """
    Share of a bin whose true class is the target class.

    Args:
        bin_contents (list): Particles (or their MaterialClass values)
        target_class (MaterialClass): Class the bin should collect

    Returns:
        float: Purity in [0, 1]; 0 for an empty bin
    """
    classes = [getattr(item, 'true_class', item) for item in bin_contents]
    if not classes:
        logger.warning(f"Purity of an empty bin for {target_class.value} is reported as 0")
        return 0.0
    return sum(1 for cls in classes if cls is target_class) / len(classes)


def detection_rate_vs_iou(dets, gts, sweep=DEFAULT_IOU_SWEEP):
    """
    Fraction of ground truths detected at each IoU threshold.

    A ground truth counts as detected at threshold t when its best same-class
    IoU with any detection of its frame reaches t, so the curve is
    non-increasing in t.

    Returns:
        list: (threshold, rate) pairs

    Raises:
        EmptyGroundTruthError: If there is no ground truth
    """
    if not gts:
        raise EmptyGroundTruthError("Detection rate is undefined without ground truth")
    _check_space(dets, gts)

    det_groups = defaultdict(list)
    for det in dets:
        det_groups[(det.frame_id, det.class_id)].append(det.bbox)
    best = np.zeros(len(gts))
    for j, gt in enumerate(gts):
        candidates = det_groups.get((gt.frame_id, gt.class_id))
        if candidates:
            best[j] = iou_matrix([gt.bbox], candidates).max()
    return [(float(t), float(np.mean(best >= t))) for t in sweep]


def _ratio(numerator, denominator):
    return numerator / denominator if denominator else 0.0


def evaluate(dets, gts, iou_thresh=0.5, class_counts=None):
    """
    Assemble the metrics report of one detection set.

    Args:
        dets (list): Detections
        gts (list): Ground truths
        iou_thresh (float): Threshold for precision, recall, per-class AP and
            confusion; mAP@0.50 is always taken at 0.50
        class_counts (dict, optional): Counts for the random baselines;
            defaults to the ground-truth class counts

    Returns:
        MetricsReport: The report
    """
    if not gts:
        raise EmptyGroundTruthError("Nothing to evaluate: no ground truth")
    if class_counts is None:
        class_counts = Counter(gt.class_id for gt in gts)
    baselines = random_baseline(class_counts)

    result = match(dets, gts, iou_thresh)
    per_class = {}
    curves = {}
    for cls in MATERIAL_CLASSES:
        part = result.for_class(cls)
        ap = 0.0
        if part.gt_count:
            curves[cls] = pr_curve(part)
            ap = average_precision(curves[cls])
        per_class[cls] = ClassMetrics(
            class_id=cls,
            precision=_ratio(part.tp, part.tp + part.fp),
            recall=_ratio(part.tp, part.gt_count),
            ap=ap,
            tp=part.tp,
            fp=part.fp,
            fn=part.fn,
            baseline_ap=baselines[cls]
        )

    by_threshold = {t: map_at(dets, gts, t) for t in COCO_THRESHOLDS}
    counts, background = confusion_counts(dets, gts, iou_thresh)
    report = MetricsReport(
        per_class=per_class,
        map_50=by_threshold[COCO_THRESHOLDS[0]],
        map_50_95=float(np.mean(list(by_threshold.values()))),
        confusion_counts=counts,
        background_fp=background,
        map_by_threshold=by_threshold,
        pr_curves=curves
    )
    logger.info(
        f"Evaluated {len(dets)} detections against {len(gts)} ground truths: "
        f"mAP@0.50 = {report.map_50:.3f}, mAP@0.50:0.95 = {report.map_50_95:.3f}"
    )
    return report
