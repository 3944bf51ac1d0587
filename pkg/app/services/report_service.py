"""
Report service module.

This module writes and reads the operations log, recomputes operational
counters from it (the same summariser serves the simulator and replay), and
writes simulation reports as CSV plus a human-readable summary.
"""

import csv
import json
import logging
import math
from pathlib import Path

from app.models.control import CommandOutcome
from app.models.material import MATERIAL_CLASSES, BinOutcome
from app.models.report import (
    LATENCY_BUCKET_MS, OPLOG_COLUMNS, OPLOG_MAGIC, OperationsSummary, OpRecord
)

# Configure logging
logger = logging.getLogger(__name__)


def summarize_operations(records, corrupt_rows=0):
    """
    Recompute operational counters from operations records.

    Args:
        records (iterable): OpRecords
        corrupt_rows (int): Rows that could not be parsed

    Returns:
        OperationsSummary: The counters
    """
    summary = OperationsSummary(corrupt_rows=corrupt_rows)
    for record in records:
        outcome = record.outcome
        if outcome is CommandOutcome.MALFORMED:
            summary.malformed += 1
        else:
            summary.commands += 1
            if outcome is CommandOutcome.EXECUTED:
                summary.executed += 1
            elif outcome is CommandOutcome.MERGED:
                summary.merged += 1
            elif outcome is CommandOutcome.REJECTED:
                summary.rejected += 1
            elif outcome is CommandOutcome.PENDING:
                summary.pending += 1
        if record.breach:
            summary.breaches += 1
        latency = record.latency_ms
        if latency is not None:
            bucket = int(math.floor(latency / LATENCY_BUCKET_MS)) * LATENCY_BUCKET_MS
            summary.latency_histogram[bucket] = summary.latency_histogram.get(bucket, 0) + 1
    return summary


def _cell(value):
    if value is None:
        return ''
    if isinstance(value, bool):
        return '1' if value else '0'
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def record_row(record):
    """CSV cells of one operations record."""
    return [
        _cell(record.fragment_id), record.material or '', _cell(record.frame_id),
        _cell(record.packet_ts), _cell(record.scheduled_ts), _cell(record.actuated_ts),
        _cell(record.paddle), record.outcome.value, _cell(record.breach), record.reason,
        record.raw_line
    ]


class OpLogWriter:
    """
    Append-only operations log.

    Every row is flushed as it is written, so a log cut short by a crash
    still parses row by row.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        self._file = open(self.path, 'a', newline='', encoding='ascii', errors='backslashreplace')
        self._writer = csv.writer(self._file, lineterminator='\n')
        if fresh:
            self._file.write(OPLOG_MAGIC + '\n')
            self._writer.writerow(OPLOG_COLUMNS)
            self._file.flush()

    def append(self, record):
        self._writer.writerow(record_row(record))
        self._file.flush()

    def close(self):
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


def write_operations_log(path, records):
    """Write a fresh operations log holding ``records``."""
    path = Path(path)
    if path.exists():
        path.unlink()
    with OpLogWriter(path) as writer:
        for record in records:
            writer.append(record)
    return path


def _opt_int(text):
    return int(text) if text != '' else None


def _opt_num(text):
    if text == '':
        return None
    value = float(text)
    return int(value) if value.is_integer() else value


def parse_record(row):
    """
    Parse one CSV row of the operations log.

    Raises:
        ValueError: If the row is not a valid record
    """
    if len(row) != len(OPLOG_COLUMNS):
        raise ValueError(f"expected {len(OPLOG_COLUMNS)} columns, got {len(row)}")
    (fragment_id, material, frame_id, packet_ts, scheduled_ts, actuated_ts,
     paddle, outcome, breach, reason, raw_line) = row
    if breach not in ('0', '1'):
        raise ValueError(f"breach flag {breach!r}")
    return OpRecord(
        outcome=CommandOutcome(outcome),
        fragment_id=_opt_int(fragment_id),
        material=material or None,
        frame_id=_opt_int(frame_id),
        packet_ts=_opt_int(packet_ts),
        scheduled_ts=_opt_int(scheduled_ts),
        actuated_ts=_opt_num(actuated_ts),
        paddle=_opt_int(paddle),
        breach=breach == '1',
        reason=reason,
        raw_line=raw_line
    )


def read_operations_log(path):
    """
    Read an operations log, skipping rows that do not parse.

    Every row is parsed on its own, so a damaged row (or a file cut off in
    the middle of a row) costs that row only.

    Returns:
        tuple: (list of OpRecords, number of corrupt rows)
    """
    records = []
    corrupt = 0
    with open(path, newline='', encoding='ascii', errors='replace') as f:
        for line_no, line in enumerate(f, start=1):
            text = line.rstrip('\r\n')
            if line_no == 1 and text == OPLOG_MAGIC:
                continue
            if not text.strip():
                continue
            try:
                row = next(csv.reader([text]))
                if tuple(row) == OPLOG_COLUMNS:
                    continue
                records.append(parse_record(row))
            except (csv.Error, ValueError, TypeError) as e:
                corrupt += 1
                logger.warning(f"{path}: corrupt row {line_no}: {e}")
    return records, corrupt


def replay(path):
    """
    Recompute the counters of a run from its operations log.

    Returns:
        OperationsSummary: Counters, including the number of corrupt rows
    """
    records, corrupt = read_operations_log(path)
    summary = summarize_operations(records, corrupt)
    logger.info(
        f"Replayed {len(records)} rows from {path}: {summary.flicks_executed} flicks, "
        f"{summary.breaches} breaches, {corrupt} corrupt rows"
    )
    return summary


def _report_rows(report):
    rows = [('metric', 'value')]
    for key, value in report.to_dict().items():
        rows.append((key, _format_value(value)))
    for outcome in BinOutcome:
        for cls in MATERIAL_CLASSES:
            rows.append((f"bin.{outcome.value}.{cls.value}.count", str(report.bin_counts[outcome][cls])))
            rows.append((f"bin.{outcome.value}.{cls.value}.mass_kg",
                         _format_value(report.bin_mass_g[outcome][cls] / 1000.0)))
    for bucket, count in sorted(report.operations.latency_histogram.items()):
        rows.append((f"latency_ms.{bucket}-{bucket + LATENCY_BUCKET_MS}", str(count)))
    return rows


def _format_value(value):
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_report_csv(report, path):
    """Write the report as a metric,value CSV with the config snapshot in its header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        f.write(f"# config: {report.config_snapshot}\n")
        writer = csv.writer(f)
        writer.writerows(_report_rows(report))
    return path


def format_summary(report):
    """Human-readable summary of a run."""
    target = report.target.label
    lines = [
        f"Simulation report (preset {report.preset}, seed {report.seed}, detector {report.detector})",
        '',
        f"  Fragments fed       {report.particles_in:>10}   ({report.mass_in_g / 1000.0:.2f} kg)",
        f"  Throughput          {report.throughput_kg_s:>10.3f}   kg/s",
        f"  Frames processed    {report.frames_processed:>10}",
        '',
        f"  {target} vs Other",
        f"    Purity (count)    {report.purity:>10.4f}",
        f"    Purity (mass)     {report.mass_purity:>10.4f}",
        f"    Recovery (count)  {report.recovery:>10.4f}",
        f"    Recovery (mass)   {report.mass_recovery:>10.4f}",
        '',
        '  Bins (count)        ' + ''.join(f"{cls.label:>15}" for cls in MATERIAL_CLASSES),
    ]
    for outcome in BinOutcome:
        counts = ''.join(f"{report.bin_counts[outcome][cls]:>15}" for cls in MATERIAL_CLASSES)
        lines.append(f"    {outcome.value:<18}{counts}")
    ops = report.operations
    lines += [
        '',
        f"  Commands sent       {report.commands_sent:>10}",
        f"  Flicks executed     {ops.flicks_executed:>10}",
        f"  Merged commands     {ops.merged:>10}",
        f"  Rejected commands   {ops.rejected:>10}",
        f"  Pending at end      {ops.pending:>10}",
        f"  Breaches            {ops.breaches:>10}",
        f"  Mass conserved      {'yes' if report.mass_conserved() else 'NO':>10}",
    ]
    return '\n'.join(lines) + '\n'


def format_operations(summary):
    """Human-readable counters of a replayed log."""
    data = summary.to_dict()
    lines = ['Operations summary', '']
    for key in ('commands', 'executed', 'merged', 'rejected', 'pending', 'malformed',
                'breaches', 'flicks_executed', 'corrupt_rows'):
        lines.append(f"  {key.replace('_', ' ').capitalize():<18}{data[key]:>10}")
    if data['latency_histogram']:
        lines += ['', '  Command latency (ms)']
        for bucket, count in data['latency_histogram'].items():
            lines.append(f"    {bucket:<14}{count:>10}")
    return '\n'.join(lines) + '\n'


def write_particles_csv(simulation, path):
    """Per-fragment outcomes of a run."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    commanded = simulation.commanded_particles()
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['particle_id', 'class', 'mass_g', 'spawn_ts', 'x_mm', 'w_mm', 'h_mm',
                         'frame_id', 'commanded', 'bin'])
        for p in simulation.particles:
            writer.writerow([
                p.id, p.true_class.value, _format_value(p.mass_g), _format_value(p.spawn_ts),
                _format_value(p.x_mm), _format_value(p.w_mm), _format_value(p.h_mm),
                p.frame_id, int(p.id in commanded), p.outcome.value if p.outcome else ''
            ])
    return path


def write_run_outputs(report, simulation, logs, directory=None):
    """
    Write every output file of a run.

    Returns:
        dict: Output name -> path
    """
    paths = {
        'operations': write_operations_log(logs.path('operations', directory), simulation.records),
        'report': write_report_csv(report, logs.path('report', directory)),
        'particles': write_particles_csv(simulation, logs.path('particles', directory)),
    }
    summary_path = logs.path('summary', directory)
    summary_path.parent.mkdir(parents=True, exist_ok=True)
    summary_path.write_text(format_summary(report), encoding='utf-8')
    paths['summary'] = summary_path
    return paths


def report_json(report):
    """Compact JSON of the report summary values."""
    return json.dumps(report.to_dict(), sort_keys=True)
