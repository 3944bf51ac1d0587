"""
Detector service module.

This module provides the pluggable stand-ins for the trained detector (a
ground-truth oracle and a stochastic model driven by a confusion model),
class-wise non-maximum suppression, and the per-frame inference pipeline
that partitions the stitched frame, detects per segment, suppresses and
remaps detections onto the full belt.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.api.error_handling import CoordinateSpaceError, DegenerateBoxError
from app.models.detection import MISS, Detection
from app.models.geometry import BBox, CoordinateSpace
from app.models.material import MATERIAL_CLASSES
from app.services.geometry_service import clamp_to_frame, global_to_segment, segment_to_global

# Configure logging
logger = logging.getLogger(__name__)

# False-positive box extents in native pixels (about 25 to 60 mm at 3.54 px/mm)
FALSE_POSITIVE_SIZE_PX = (90.0, 210.0)


@dataclass(frozen=True)
class Viewport:
    """The frame a detector looks at."""
    space: CoordinateSpace
    frame_w: float
    frame_h: float
    segment_index: Optional[int] = None


def detect_oracle(visible, frame_id=0):
    """
    Perfect detector: one exact, fully confident detection per particle.

    Args:
        visible (list): Sightings inside the frame
        frame_id (int): Frame the sightings belong to

    Returns:
        list: Detections, in sighting order
    """
    return [
        Detection(
            sighting.bbox.with_changes(class_id=sighting.true_class, confidence=1.0),
            frame_id,
            sighting.particle_id
        )
        for sighting in visible
    ]


def detect_stochastic(visible, model, rng, frame_id=0, viewport=None, px_scale=(1.0, 1.0)):
    """
    Sample detections from a confusion model.

    For every sighting an outcome (a predicted class or a miss) is drawn from
    the true class's row; detected boxes get center and size jitter and a
    sampled confidence. Spurious detections are appended afterwards. The
    number of random draws per sighting is fixed, so a given seed always
    yields the same stream.

    Args:
        visible (list): Sightings inside the frame
        model (ConfusionModel): Outcome and noise parameters
        rng (numpy.random.Generator): Random stream owned by the caller
        frame_id (int): Frame the sightings belong to
        viewport (Viewport, optional): Frame used for false positives
        px_scale (tuple): Box pixels per native sensor pixel (x, y)

    Returns:
        list: Detections
    """
    cumulative = np.cumsum(model.rows, axis=1)
    scale_x, scale_y = px_scale
    detections = []

    for sighting in visible:
        row = cumulative[sighting.true_class.index]
        outcome = min(int(np.searchsorted(row, rng.random(), side='right')), MISS)
        noise = rng.normal(0.0, 1.0, size=5)
        if outcome == MISS:
            continue

        predicted = MATERIAL_CLASSES[outcome]
        stats = model.confidence_stats(sighting.true_class, predicted)
        box = sighting.bbox
        try:
            jittered = clamp_to_frame(box.with_changes(
                class_id=predicted,
                x_c=box.x_c + noise[0] * model.center_jitter_px * scale_x,
                y_c=box.y_c + noise[1] * model.center_jitter_px * scale_y,
                w=max(box.w * (1.0 + noise[2] * model.size_jitter_frac), 0.0),
                h=max(box.h * (1.0 + noise[3] * model.size_jitter_frac), 0.0),
                confidence=float(np.clip(stats.mean + noise[4] * stats.std, 0.0, 1.0))
            ))
        except DegenerateBoxError:
            logger.debug(f"Dropping degenerate jittered box for particle {sighting.particle_id}")
            continue
        if jittered.area <= 0:
            continue
        detections.append(Detection(jittered, frame_id, sighting.particle_id))

    if viewport is None and visible:
        first = visible[0].bbox
        viewport = Viewport(first.space, *first.extents, first.segment_index)
    if viewport is not None and model.false_positive_rate > 0:
        detections.extend(
            _sample_false_positives(model, rng, frame_id, viewport, px_scale)
        )

    return detections


def _sample_false_positives(model, rng, frame_id, viewport, px_scale):
    """Spurious detections drawn uniformly over the viewport."""
    spurious = []
    low, high = FALSE_POSITIVE_SIZE_PX
    stats = model.confidence_false_positive
    for cls in MATERIAL_CLASSES:
        for _ in range(int(rng.poisson(model.false_positive_rate))):
            w = min(rng.uniform(low, high) * px_scale[0], viewport.frame_w)
            h = min(rng.uniform(low, high) * px_scale[1], viewport.frame_h)
            box = BBox(
                cls,
                rng.uniform(w / 2, viewport.frame_w - w / 2),
                rng.uniform(h / 2, viewport.frame_h - h / 2),
                w, h,
                float(np.clip(rng.normal(stats.mean, stats.std), 0.0, 1.0)),
                viewport.space,
                viewport.segment_index,
                viewport.frame_w,
                viewport.frame_h
            )
            spurious.append(Detection(box, frame_id, None))
    return spurious


def _nms_key(det):
    """Descending confidence, then smaller particle id, then smaller x."""
    pid = det.particle_id if det.particle_id is not None else math.inf
    return (-det.confidence, pid, det.bbox.x_c)


def nms_classwise(dets, conf_thresh=0.5, iou_thresh=0.5):
    """
    Class-wise greedy non-maximum suppression.

    Detections below ``conf_thresh`` are dropped. Within each (frame, class)
    group, boxes are visited by descending confidence and every later box
    overlapping a kept one at IoU >= ``iou_thresh`` is suppressed. Boxes of
    different classes never suppress each other.

    Args:
        dets (list): Detections sharing one coordinate space
        conf_thresh (float): Minimum confidence kept
        iou_thresh (float): Suppression threshold

    Returns:
        list: Kept detections by descending confidence
    """
    if not dets:
        return []
    reference = dets[0].bbox
    for det in dets:
        if not det.bbox.same_space(reference):
            raise CoordinateSpaceError("NMS needs all detections in one coordinate space")

    candidates = sorted((d for d in dets if d.confidence >= conf_thresh), key=_nms_key)
    groups = {}
    for det in candidates:
        groups.setdefault((det.frame_id, det.class_id), []).append(det)

    kept = []
    for group in groups.values():
        kept.extend(_greedy_suppress(group, iou_thresh))
    kept.sort(key=_nms_key)
    return kept


def _greedy_suppress(ordered, iou_thresh):
    """Greedy suppression over detections already in visiting order."""
    x1 = np.array([d.bbox.x_min for d in ordered])
    y1 = np.array([d.bbox.y_min for d in ordered])
    x2 = np.array([d.bbox.x_max for d in ordered])
    y2 = np.array([d.bbox.y_max for d in ordered])
    area = (x2 - x1) * (y2 - y1)
    suppressed = np.zeros(len(ordered), dtype=bool)

    kept = []
    for i in range(len(ordered)):
        if suppressed[i]:
            continue
        kept.append(ordered[i])
        rest = slice(i + 1, None)
        inter = (np.maximum(0.0, np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest]))
                 * np.maximum(0.0, np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest])))
        union = area[i] + area[rest] - inter
        overlap = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
        suppressed[rest] |= overlap >= iou_thresh
    return kept


class OracleDetector:
    """Ground-truth reference detector."""

    name = 'oracle'

    def detect(self, visible, frame_id=0, viewport=None, px_scale=(1.0, 1.0)):
        return detect_oracle(visible, frame_id)


class StochasticDetector:
    """
    Detector reproducing published error statistics.

    Instances own their random stream and must not be shared between
    threads; use ``clone`` to give each worker its own.
    """

    name = 'stochastic'

    def __init__(self, model, rng=None, seed=None):
        self.model = model.validate()
        self.rng = rng if rng is not None else np.random.default_rng(seed)

    def detect(self, visible, frame_id=0, viewport=None, px_scale=(1.0, 1.0)):
        return detect_stochastic(visible, self.model, self.rng, frame_id, viewport, px_scale)

    def clone(self, seed):
        return StochasticDetector(self.model, seed=seed)


def build_detector(kind, model=None, rng=None):
    """
    Create a detector by name.

    Args:
        kind (str): 'oracle' or 'stochastic'
        model (ConfusionModel, optional): Required for the stochastic detector
        rng (numpy.random.Generator, optional): Random stream for the detector

    Returns:
        OracleDetector | StochasticDetector
    """
    if kind == 'oracle':
        return OracleDetector()
    if kind == 'stochastic':
        if model is None:
            raise ValueError("The stochastic detector needs a confusion model")
        return StochasticDetector(model, rng=rng)
    raise ValueError(f"Unknown detector: {kind!r}")


def infer_frame(sightings, detector, cal, frame_id, conf_thresh=0.5, iou_thresh=0.5):
    """
    Run the inference pipeline on one stitched frame.

    The frame is partitioned into camera segments, each segment is resized
    to the network input, detections are suppressed class-wise per segment
    and remapped to global belt pixels.

    Args:
        sightings (list): Sightings with GLOBAL_PX footprints
        detector: Detector instance
        cal (BeltCalibration): Belt calibration
        frame_id (int): Frame being processed

    Returns:
        list: Global detections by descending confidence
    """
    net = float(cal.net_input_px)
    px_scale = (net / cal.segment_width_px, net / cal.segment_height_px)

    per_segment = [[] for _ in range(cal.segment_count)]
    for sighting in sightings:
        seg_box = global_to_segment(sighting.bbox, cal)
        per_segment[seg_box.segment_index].append(
            type(sighting)(sighting.particle_id, sighting.true_class, seg_box)
        )

    detections = []
    for index, seg_sightings in enumerate(per_segment):
        viewport = Viewport(CoordinateSpace.SEGMENT_PX, net, net, index)
        raw = detector.detect(seg_sightings, frame_id, viewport, px_scale)
        for det in nms_classwise(raw, conf_thresh, iou_thresh):
            detections.append(
                Detection(segment_to_global(det.bbox, cal), det.frame_id, det.particle_id)
            )

    detections.sort(key=_nms_key)
    logger.debug(f"Frame {frame_id}: {len(sightings)} sightings, {len(detections)} detections")
    return detections
