"""
Tests for run reports and the operations log.

This module tests that replaying an operations log reproduces the counters
of the run that wrote it, that damaged rows are skipped and counted, and
that the report files of a seeded run are reproducible.
"""

import csv
import shutil
import tempfile
import unittest
from pathlib import Path

from app.models.control import CommandOutcome
from app.models.report import OPLOG_COLUMNS, OPLOG_MAGIC, OpRecord
from app.services.config_service import load_run_config
from app.services.report_service import (
    OpLogWriter, format_summary, read_operations_log, record_row, replay, summarize_operations,
    write_operations_log, write_run_outputs
)
from app.services.simulation_service import run

OUTPUT_FILES = ('operations', 'report', 'particles', 'summary')


def breach_record(raw_line='XX'):
    return OpRecord(CommandOutcome.MALFORMED, breach=True, reason='bad_magic', raw_line=raw_line)


class TestReplay(unittest.TestCase):
    """Test cases for replaying the operations log of a run."""

    @classmethod
    def setUpClass(cls):
        """Run one small simulation shared by the tests."""
        cls.config = load_run_config(overrides={'sim.particle_count': 300, 'sim.seed': 5})
        cls.report, cls.simulation = run(cls.config)

    def setUp(self):
        """Set up test environment."""
        self.tmpdir = tempfile.mkdtemp()
        self.paths = write_run_outputs(self.report, self.simulation, self.config.logs, self.tmpdir)
        self.oplog = self.paths['operations']

    def tearDown(self):
        """Clean up after tests."""
        shutil.rmtree(self.tmpdir)

    def test_replay_reproduces_counters(self):
        """Counters recomputed from the file equal those of the run."""
        self.assertEqual(set(self.paths), set(OUTPUT_FILES))
        summary = replay(self.oplog)
        self.assertEqual(summary, self.report.operations)
        self.assertEqual(summary.corrupt_rows, 0)
        self.assertGreater(summary.flicks_executed, 0)

    def test_file_header(self):
        with open(self.oplog) as f:
            self.assertEqual(f.readline().rstrip('\n'), OPLOG_MAGIC)
            self.assertEqual(f.readline().rstrip('\n'), ','.join(OPLOG_COLUMNS))

    def test_appended_breach_rows(self):
        """Rows appended to an existing log are counted without a second header."""
        before = replay(self.oplog)
        with OpLogWriter(self.oplog) as writer:
            for _ in range(3):
                writer.append(breach_record())
        after = replay(self.oplog)
        self.assertEqual(after.breaches, before.breaches + 3)
        self.assertEqual(after.malformed, before.malformed + 3)
        self.assertEqual(after.commands, before.commands)
        self.assertEqual(Path(self.oplog).read_text().count(OPLOG_MAGIC), 1)

    def test_truncated_last_row(self):
        """A log cut off mid-row yields a partial summary and one corrupt row."""
        lines = Path(self.oplog).read_text().splitlines(keepends=True)
        lines[-1] = lines[-1][:5]
        Path(self.oplog).write_text(''.join(lines))

        summary = replay(self.oplog)
        self.assertEqual(summary.corrupt_rows, 1)
        self.assertEqual(summary.commands + summary.malformed, len(self.simulation.records) - 1)

    def test_damaged_rows_are_skipped(self):
        """Garbage rows and invalid breach flags count as corrupt, the rest survive."""
        row = record_row(self.simulation.records[0])
        row[8] = '2'
        with open(self.oplog, 'a', newline='') as f:
            f.write('not,a,record\n')
            csv.writer(f, lineterminator='\n').writerow(row)
        records, corrupt = read_operations_log(self.oplog)
        self.assertEqual(corrupt, 2)
        self.assertEqual(len(records), len(self.simulation.records))


class TestOperationsLog(unittest.TestCase):
    """Test cases for operations records and their counters."""

    def setUp(self):
        """Set up test environment."""
        self.tmpdir = Path(tempfile.mkdtemp())

    def tearDown(self):
        """Clean up after tests."""
        shutil.rmtree(self.tmpdir)

    def test_raw_line_with_separators(self):
        """Commas and quotes inside a raw line survive the CSV."""
        record = breach_record('ARIS1 F=1 T=0;"a",b\\x00')
        command = OpRecord(CommandOutcome.EXECUTED, fragment_id=4, material='metal', frame_id=2,
                           packet_ts=100, scheduled_ts=290, actuated_ts=290, paddle=7)
        path = write_operations_log(self.tmpdir / 'ops.csv', [record, command])
        records, corrupt = read_operations_log(path)
        self.assertEqual(corrupt, 0)
        self.assertEqual(records, [record, command])

    def test_latency_buckets(self):
        """Latencies fall in 25 ms buckets; unactuated commands have none."""
        records = [
            OpRecord(CommandOutcome.EXECUTED, packet_ts=0, actuated_ts=0),
            OpRecord(CommandOutcome.EXECUTED, packet_ts=100, actuated_ts=124.9),
            OpRecord(CommandOutcome.MERGED, packet_ts=0, actuated_ts=30),
            OpRecord(CommandOutcome.REJECTED, packet_ts=0, breach=True, reason='late'),
        ]
        summary = summarize_operations(records)
        self.assertEqual(summary.latency_histogram, {0: 2, 25: 1})
        self.assertEqual((summary.executed, summary.merged, summary.rejected), (2, 1, 1))
        self.assertEqual(summary.flicks_executed, 2)
        self.assertEqual(summary.breaches, 1)
        self.assertEqual(summary.to_dict()['latency_histogram'], {'0-25': 2, '25-50': 1})


class TestReportFiles(unittest.TestCase):
    """Test cases for the report files of a run."""

    def setUp(self):
        """Set up test environment."""
        self.tmpdir = Path(tempfile.mkdtemp())
        self.config = load_run_config(overrides={'sim.particle_count': 200, 'sim.seed': 3})

    def tearDown(self):
        """Clean up after tests."""
        shutil.rmtree(self.tmpdir)

    def test_report_contents(self):
        report, simulation = run(self.config)
        paths = write_run_outputs(report, simulation, self.config.logs, self.tmpdir)
        text = paths['report'].read_text()
        self.assertTrue(text.startswith('# config: {'))
        self.assertIn('\npurity,', text)
        self.assertIn('Metal vs Other', format_summary(report))
        self.assertEqual(paths['summary'].read_text(), format_summary(report))

        with open(paths['particles'], newline='') as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(len(rows), 200)
        self.assertTrue(all(row['bin'] in ('positive', 'negative') for row in rows))

    def test_same_seed_identical_files(self):
        """Two runs with one seed write byte-identical files."""
        written = []
        for name in ('first', 'second'):
            report, simulation = run(self.config)
            written.append(write_run_outputs(report, simulation, self.config.logs, self.tmpdir / name))
        for key in OUTPUT_FILES:
            with self.subTest(file=key):
                self.assertEqual(written[0][key].read_bytes(), written[1][key].read_bytes())


if __name__ == '__main__':
    unittest.main()
