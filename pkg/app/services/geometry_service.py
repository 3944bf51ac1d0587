"""
Geometry service module.

This module provides IoU, unit conversion and the remapping between the
three coordinate spaces of the inference pipeline: the stitched frame is
partitioned into camera segments, each segment is resized to the network
input, and detections are mapped back onto the full belt.
"""

import logging
import math

from app.api.error_handling import CoordinateSpaceError, DegenerateBoxError, GeometryError
from app.models.geometry import BBox, CoordinateSpace

# Configure logging
logger = logging.getLogger(__name__)


def iou(a, b):
    """
    Intersection over union of two boxes in the same coordinate space.

    Args:
        a (BBox): First box
        b (BBox): Second box

    Returns:
        float: IoU in [0, 1]

    Raises:
        CoordinateSpaceError: If the boxes live in different spaces
    """
    if not a.same_space(b):
        raise CoordinateSpaceError(
            f"Cannot compare a {a.space.value} box with a {b.space.value} box"
        )
    return box_iou(a.x_min, a.y_min, a.x_max, a.y_max, b.x_min, b.y_min, b.x_max, b.y_max)


def box_iou(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2):
    """IoU of two corner-form rectangles."""
    inter_w = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    inter_h = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = inter_w * inter_h
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0:
        return 0.0
    return inter / union


def px_to_mm(x_px, cal):
    """Convert a pixel distance to millimetres."""
    if cal.px_per_mm <= 0:
        raise GeometryError("Calibration has no positive pixel density")
    return x_px / cal.px_per_mm


def mm_to_px(x_mm, cal):
    """Convert a distance in millimetres to pixels."""
    return x_mm * cal.px_per_mm


def clamp_to_frame(box):
    """
    Clamp a pixel-space box to its frame.

    Boxes that already lie inside the frame are returned unchanged.

    Raises:
        DegenerateBoxError: If nothing of the box is left inside the frame
    """
    frame_w, frame_h = box.extents
    x1, x2 = box.x_min, box.x_max
    y1, y2 = box.y_min, box.y_max
    if x1 >= 0 and y1 >= 0 and x2 <= frame_w and y2 <= frame_h:
        return box

    x1, x2 = max(0.0, x1), min(frame_w, x2)
    y1, y2 = max(0.0, y1), min(frame_h, y2)
    if x2 <= x1 or y2 <= y1:
        raise DegenerateBoxError(f"Box {box} lies outside its {frame_w}x{frame_h} frame")
    return box.with_changes(x_c=(x1 + x2) / 2, y_c=(y1 + y2) / 2, w=x2 - x1, h=y2 - y1)


def denormalize(box, frame_w, frame_h, segment_index=0):
    """
    Convert a normalized box to pixels of a segment frame.

    Args:
        box (BBox): Normalized box
        frame_w (float): Frame width in pixels
        frame_h (float): Frame height in pixels
        segment_index (int): Camera segment the frame belongs to

    Returns:
        BBox: Box in SEGMENT_PX space, clamped to the frame

    Raises:
        CoordinateSpaceError: If the box is not normalized
        DegenerateBoxError: If the clamped box has zero area
    """
    if box.space is not CoordinateSpace.NORMALIZED:
        raise CoordinateSpaceError(f"Expected a normalized box, got {box.space.value}")
    pixel_box = BBox.in_segment(
        segment_index, box.class_id,
        box.x_c * frame_w, box.y_c * frame_h, box.w * frame_w, box.h * frame_h,
        frame_w, frame_h, box.confidence
    )
    pixel_box = clamp_to_frame(pixel_box)
    if pixel_box.area <= 0:
        raise DegenerateBoxError(f"Zero-area box after denormalizing {box}")
    return pixel_box


def normalize(box):
    """
    Convert a pixel-space box to normalized coordinates of its frame.

    Returns:
        BBox: Normalized box
    """
    if box.space is CoordinateSpace.NORMALIZED:
        return box
    frame_w, frame_h = box.extents
    return BBox.normalized(
        box.class_id,
        box.x_c / frame_w, box.y_c / frame_h, box.w / frame_w, box.h / frame_h,
        box.confidence
    )


def segment_viewports(cal):
    """
    Horizontal viewports of the camera segments.

    Returns:
        list: (x_start, x_end) pixel intervals, half-open, in global pixels
    """
    return [
        (i * cal.segment_width_px, (i + 1) * cal.segment_width_px)
        for i in range(cal.segment_count)
    ]


def segment_of(x_global, cal):
    """Index of the camera segment that sees a global x coordinate."""
    index = int(math.floor(x_global / cal.segment_width_px))
    return min(max(index, 0), cal.segment_count - 1)


def segment_to_global(box, cal):
    """
    Remap a segment box to the stitched full-belt frame.

    The segment coordinates are first scaled back to native segment pixels
    (undoing the resize to the network input), then shifted by the segment
    offset. The result is clamped to the global frame, never split.

    Args:
        box (BBox): Box in SEGMENT_PX space
        cal (BeltCalibration): Belt calibration

    Returns:
        BBox: Box in GLOBAL_PX space
    """
    if box.space is not CoordinateSpace.SEGMENT_PX:
        raise CoordinateSpaceError(f"Expected a segment box, got {box.space.value}")
    if not 0 <= box.segment_index < cal.segment_count:
        raise GeometryError(f"Segment index {box.segment_index} out of range")

    scale_x = cal.segment_width_px / box.frame_w
    scale_y = cal.segment_height_px / box.frame_h
    global_box = BBox.in_global(
        box.class_id,
        box.x_c * scale_x + box.segment_index * cal.segment_width_px,
        box.y_c * scale_y,
        box.w * scale_x,
        box.h * scale_y,
        cal,
        box.confidence
    )
    return clamp_to_frame(global_box)


def global_to_segment(box, cal, frame=None):
    """
    Map a global box into the frame of the camera segment that sees its center.

    The box is clamped to the segment viewport before being rescaled to the
    requested frame (the network input by default).

    Args:
        box (BBox): Box in GLOBAL_PX space
        cal (BeltCalibration): Belt calibration
        frame (tuple, optional): Target frame (width, height) in pixels

    Returns:
        BBox: Box in SEGMENT_PX space
    """
    if box.space is not CoordinateSpace.GLOBAL_PX:
        raise CoordinateSpaceError(f"Expected a global box, got {box.space.value}")
    if frame is None:
        frame = (cal.net_input_px, cal.net_input_px)
    frame_w, frame_h = float(frame[0]), float(frame[1])

    index = segment_of(box.x_c, cal)
    offset = index * cal.segment_width_px
    native = clamp_to_frame(BBox.in_segment(
        index, box.class_id, box.x_c - offset, box.y_c, box.w, box.h,
        cal.segment_width_px, cal.segment_height_px, box.confidence
    ))
    if (frame_w, frame_h) == (native.frame_w, native.frame_h):
        return native

    scale_x = frame_w / cal.segment_width_px
    scale_y = frame_h / cal.segment_height_px
    return BBox.in_segment(
        index, box.class_id,
        native.x_c * scale_x, native.y_c * scale_y, native.w * scale_x, native.h * scale_y,
        frame_w, frame_h, box.confidence
    )
