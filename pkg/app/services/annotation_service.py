"""
Annotation service module.

This module reads ground truth in YOLO text format (one file per image,
lines ``class x_c y_c w h`` in normalized coordinates) and detection dumps
(CSV ``frame_id,class,x_c,y_c,w,h,confidence``), and writes metrics reports
as CSV files plus a human-readable table.
"""

import csv
import logging
import math
from pathlib import Path

from app.api.error_handling import AnnotationFormatError, DegenerateBoxError, GeometryError
from app.models.detection import Detection, GroundTruth
from app.models.geometry import BBox
from app.models.material import MATERIAL_CLASSES, MaterialClass

# Configure logging
logger = logging.getLogger(__name__)

DETECTION_COLUMNS = ('frame_id', 'class', 'x_c', 'y_c', 'w', 'h', 'confidence')


def _class_index(token, path, line_no):
    try:
        index = int(token)
    except ValueError:
        raise AnnotationFormatError(path, line_no, f"class {token!r} is not an integer")
    try:
        return MaterialClass.from_index(index)
    except ValueError as e:
        raise AnnotationFormatError(path, line_no, str(e))


def _floats(tokens, path, line_no):
    values = []
    for token in tokens:
        try:
            value = float(token)
        except ValueError:
            raise AnnotationFormatError(path, line_no, f"{token!r} is not a number")
        if not math.isfinite(value):
            raise AnnotationFormatError(path, line_no, f"{token!r} is not finite")
        values.append(value)
    return values


def _box(class_id, values, path, line_no, confidence=1.0):
    """Normalized box, or None for a zero-area box."""
    try:
        return BBox.normalized(class_id, *values, confidence=confidence)
    except DegenerateBoxError:
        logger.warning(f"{path}:{line_no}: skipping zero-area box {values}")
        return None
    except GeometryError as e:
        raise AnnotationFormatError(path, line_no, str(e))


def read_label_file(path, frame_id=0):
    """
    Read one YOLO label file.

    Args:
        path (Path): Label file
        frame_id (int): Frame the boxes belong to

    Returns:
        list: GroundTruth boxes in file order

    Raises:
        AnnotationFormatError: For an ill-formed line, naming file and line
    """
    boxes = []
    with open(path, encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 5:
                raise AnnotationFormatError(path, line_no, f"expected 5 fields, got {len(tokens)}")
            class_id = _class_index(tokens[0], path, line_no)
            box = _box(class_id, _floats(tokens[1:], path, line_no), path, line_no)
            if box is not None:
                boxes.append(GroundTruth(box, frame_id))
    return boxes


def read_yolo_labels(directory):
    """
    Read a directory of YOLO label files.

    Files are taken in name order and frame ``i`` is the i-th file, so a
    detection dump can refer to frames by index or by file stem.

    Args:
        directory (str|Path): Directory holding ``*.txt`` label files

    Returns:
        tuple: (list of GroundTruth with sequential gt ids, list of frame names)

    Raises:
        AnnotationFormatError: If the directory is unreadable or a line is ill-formed
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise AnnotationFormatError(directory, 0, "annotation directory not found")
    files = sorted(p for p in directory.glob('*.txt') if p.is_file())
    if not files:
        logger.warning(f"No label files in {directory}")

    gts = []
    for frame_id, path in enumerate(files):
        for gt in read_label_file(path, frame_id):
            gts.append(GroundTruth(gt.bbox, frame_id, len(gts)))
    logger.info(f"Read {len(gts)} ground truths from {len(files)} label files in {directory}")
    return gts, [p.stem for p in files]


def read_detections_csv(path, frame_names=None):
    """
    Read a detection dump.

    A header row is optional. ``frame_id`` is a frame index or, when
    ``frame_names`` is given, the stem of a label file.

    Args:
        path (str|Path): CSV file
        frame_names (list, optional): Frame names from read_yolo_labels

    Returns:
        list: Detections in file order

    Raises:
        AnnotationFormatError: For an ill-formed row, naming file and line
    """
    path = Path(path)
    if not path.is_file():
        raise AnnotationFormatError(path, 0, "detection file not found")
    lookup = {name: i for i, name in enumerate(frame_names or [])}

    dets = []
    with open(path, newline='', encoding='utf-8') as f:
        for line_no, row in enumerate(csv.reader(f), start=1):
            row = [cell.strip() for cell in row]
            if not row or not any(row) or row[0].startswith('#'):
                continue
            if line_no == 1 and tuple(cell.lower() for cell in row) == DETECTION_COLUMNS:
                continue
            if len(row) != len(DETECTION_COLUMNS):
                raise AnnotationFormatError(
                    path, line_no, f"expected {len(DETECTION_COLUMNS)} fields, got {len(row)}"
                )
            frame_token = row[0]
            if frame_token in lookup:
                frame_id = lookup[frame_token]
            else:
                try:
                    frame_id = int(frame_token)
                except ValueError:
                    raise AnnotationFormatError(path, line_no, f"unknown frame {frame_token!r}")
            class_id = _class_index(row[1], path, line_no)
            values = _floats(row[2:], path, line_no)
            confidence = values.pop()
            if not 0.0 <= confidence <= 1.0:
                raise AnnotationFormatError(path, line_no, f"confidence {confidence} outside [0, 1]")
            box = _box(class_id, values, path, line_no, confidence)
            if box is not None:
                dets.append(Detection(box, frame_id))
    logger.info(f"Read {len(dets)} detections from {path}")
    return dets


def write_yolo_labels(gts, directory, frame_names=None, frame_count=None):
    """
    Write ground truths as YOLO label files, one per frame.

    Frames without boxes still get an (empty) file so frame indices survive
    a round trip.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    count = frame_count or (max((gt.frame_id for gt in gts), default=-1) + 1)
    names = frame_names or [f"frame_{i:06d}" for i in range(count)]
    lines = {i: [] for i in range(len(names))}
    for gt in gts:
        b = gt.bbox
        lines[gt.frame_id].append(f"{b.class_id.index} {b.x_c:.6f} {b.y_c:.6f} {b.w:.6f} {b.h:.6f}")
    for i, name in enumerate(names):
        text = '\n'.join(lines[i])
        (directory / f"{name}.txt").write_text(text + ('\n' if text else ''), encoding='utf-8')
    return directory


def write_detections_csv(dets, path):
    """Write a detection dump with a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(DETECTION_COLUMNS)
        for det in dets:
            b = det.bbox
            writer.writerow([det.frame_id, b.class_id.index, f"{b.x_c:.6f}", f"{b.y_c:.6f}",
                             f"{b.w:.6f}", f"{b.h:.6f}", f"{b.confidence:.6f}"])
    return path


def _pct(value):
    return f"{100.0 * value:.1f}"


def metrics_rows(report):
    """CSV rows of a metrics report: one per class plus the mAP rows."""
    rows = [('class', 'precision', 'recall', 'ap', 'f1', 'tp', 'fp', 'fn', 'baseline_ap')]
    for cls in MATERIAL_CLASSES:
        m = report.per_class[cls]
        rows.append((cls.value, f"{m.precision:.6f}", f"{m.recall:.6f}", f"{m.ap:.6f}",
                     f"{m.f1:.6f}", m.tp, m.fp, m.fn, f"{m.baseline_ap:.6f}"))
    rows.append(('map@0.50', '', '', f"{report.map_50:.6f}", '', '', '', '', ''))
    rows.append(('map@0.50:0.95', '', '', f"{report.map_50_95:.6f}", '', '', '', '', ''))
    return rows


def pr_curve_rows(report):
    """CSV rows of the per-class precision-recall curves, in sweep order."""
    rows = [('class', 'recall', 'precision')]
    for cls in MATERIAL_CLASSES:
        for recall, precision in report.pr_curves.get(cls, ()):
            rows.append((cls.value, f"{recall:.6f}", f"{precision:.6f}"))
    return rows


def confusion_rows(report):
    """CSV rows of the row-normalized confusion matrix with counts."""
    header = ['true_class'] + [cls.value for cls in MATERIAL_CLASSES] + ['miss']
    rows = [header + [f"{h}_count" for h in header[1:]]]
    rates = report.confusion
    for i, cls in enumerate(MATERIAL_CLASSES):
        rows.append([cls.value] + [f"{v:.6f}" for v in rates[i]]
                    + [int(v) for v in report.confusion_counts[i]])
    rows.append(['background'] + [int(v) for v in report.background_fp] + [''] * (len(header)))
    return rows


def format_metrics_table(report, rate_series=None):
    """
    Human-readable metrics table in percent.

    Args:
        report (MetricsReport): The report
        rate_series (list, optional): (threshold, rate) pairs of the
            detection-rate curve

    Returns:
        str: The table
    """
    lines = [
        f"{'Class':<16}{'Precision':>10}{'Recall':>10}{'AP':>10}{'F1':>10}{'Random':>10}",
    ]
    for cls in MATERIAL_CLASSES:
        m = report.per_class[cls]
        lines.append(
            f"{cls.label:<16}{_pct(m.precision):>10}{_pct(m.recall):>10}{_pct(m.ap):>10}"
            f"{_pct(m.f1):>10}{_pct(m.baseline_ap):>10}"
        )
    lines += [
        '',
        f"{'mAP@0.50':<16}{_pct(report.map_50):>10}",
        f"{'mAP@0.50:0.95':<16}{_pct(report.map_50_95):>10}",
        '',
        'Confusion (rows: true class, %)',
        f"{'':<16}" + ''.join(f"{cls.label:>16}" for cls in MATERIAL_CLASSES) + f"{'Miss':>16}",
    ]
    rates = report.confusion
    for i, cls in enumerate(MATERIAL_CLASSES):
        lines.append(f"{cls.label:<16}" + ''.join(f"{_pct(v):>16}" for v in rates[i]))
    mistakes = report.misclassifications()
    if mistakes:
        lines += ['', 'Misclassifications']
        for true_cls, pred_cls, count in mistakes:
            lines.append(f"  {true_cls.label} as {pred_cls.label}: {count}")
    if rate_series:
        lines += ['', 'Detection rate vs IoU threshold']
        for threshold, rate in rate_series:
            lines.append(f"  {threshold:.2f}  {_pct(rate):>6}")
    return '\n'.join(lines) + '\n'


def _write_rows(path, rows):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        csv.writer(f).writerows(rows)
    return path


def write_metrics(report, directory, rate_series=None):
    """
    Write every file of a metrics report.

    Returns:
        dict: Output name -> path
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        'metrics': _write_rows(directory / 'metrics.csv', metrics_rows(report)),
        'confusion': _write_rows(directory / 'confusion.csv', confusion_rows(report)),
        'pr_curve': _write_rows(directory / 'pr_curve.csv', pr_curve_rows(report)),
        'map_by_threshold': _write_rows(
            directory / 'map_by_threshold.csv',
            [('iou_thresh', 'map')] + [(f"{t:.2f}", f"{v:.6f}")
                                        for t, v in sorted(report.map_by_threshold.items())]
        ),
    }
    if rate_series:
        paths['detection_rate'] = _write_rows(
            directory / 'detection_rate.csv',
            [('iou_thresh', 'rate')] + [(f"{t:.2f}", f"{r:.6f}") for t, r in rate_series]
        )
    table = directory / 'metrics.txt'
    table.write_text(format_metrics_table(report, rate_series), encoding='utf-8')
    paths['table'] = table
    return paths
