"""
Report models.

This module defines the operations log record, the counters recomputed
from an operations log, and the report of one simulation run.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

from app.models.control import CommandOutcome
from app.models.material import MATERIAL_CLASSES, BinOutcome

OPLOG_MAGIC = '# aris-oplog v1'
OPLOG_COLUMNS = (
    'fragment_id', 'class', 'frame_id', 'packet_ts', 'scheduled_ts', 'actuated_ts',
    'paddle', 'outcome', 'breach', 'reason', 'raw_line'
)

# Width of the command latency histogram buckets
LATENCY_BUCKET_MS = 25


@dataclass
class OpRecord:
    """
    One row of the operations log.

    Command rows describe what became of one fragment's command; breach rows
    (outcome ``malformed``) carry the offending raw line instead.
    """
    outcome: CommandOutcome
    fragment_id: Optional[int] = None
    material: Optional[str] = None
    frame_id: Optional[int] = None
    packet_ts: Optional[int] = None
    scheduled_ts: Optional[int] = None
    actuated_ts: Optional[float] = None
    paddle: Optional[int] = None
    breach: bool = False
    reason: str = ''
    raw_line: str = ''

    @property
    def latency_ms(self):
        """Capture-to-actuation latency of an actuated command."""
        if self.actuated_ts is None or self.packet_ts is None:
            return None
        return self.actuated_ts - self.packet_ts


@dataclass
class OperationsSummary:
    """Counters derived from an operations log."""
    commands: int = 0
    executed: int = 0
    merged: int = 0
    rejected: int = 0
    pending: int = 0
    malformed: int = 0
    breaches: int = 0
    corrupt_rows: int = 0
    latency_histogram: Dict[int, int] = field(default_factory=dict)

    @property
    def flicks_executed(self):
        """Each executed row opens one actuation; merged rows ride along."""
        return self.executed

    def to_dict(self):
        return {
            'commands': self.commands,
            'executed': self.executed,
            'merged': self.merged,
            'rejected': self.rejected,
            'pending': self.pending,
            'malformed': self.malformed,
            'breaches': self.breaches,
            'flicks_executed': self.flicks_executed,
            'corrupt_rows': self.corrupt_rows,
            'latency_histogram': {
                f"{start}-{start + LATENCY_BUCKET_MS}": count
                for start, count in sorted(self.latency_histogram.items())
            }
        }


def _empty_bins():
    return {outcome: {cls: 0 for cls in MATERIAL_CLASSES} for outcome in BinOutcome}


def _empty_masses():
    return {outcome: {cls: 0.0 for cls in MATERIAL_CLASSES} for outcome in BinOutcome}


@dataclass
class SimReport:
    """
    Outcome of one simulation run.

    Purity and recovery are given by count and by mass; the operational
    counters are those recomputed from the run's operations log.
    """
    seed: int
    preset: str
    target: object
    detector: str
    duration_ms: float = 0.0
    particles_in: int = 0
    mass_in_g: float = 0.0
    bin_counts: Dict = field(default_factory=_empty_bins)
    bin_mass_g: Dict = field(default_factory=_empty_masses)
    frames_processed: int = 0
    commands_sent: int = 0
    operations: OperationsSummary = field(default_factory=OperationsSummary)
    config_snapshot: str = ''

    @property
    def positive_count(self):
        return sum(self.bin_counts[BinOutcome.POSITIVE].values())

    @property
    def positive_mass_g(self):
        return sum(self.bin_mass_g[BinOutcome.POSITIVE].values())

    @property
    def mass_out_g(self):
        return sum(sum(masses.values()) for masses in self.bin_mass_g.values())

    @property
    def purity(self):
        """Share of the positive bin (by count) that is the target class."""
        total = self.positive_count
        if total == 0:
            return 0.0
        return self.bin_counts[BinOutcome.POSITIVE][self.target] / total

    @property
    def mass_purity(self):
        total = self.positive_mass_g
        if total == 0:
            return 0.0
        return self.bin_mass_g[BinOutcome.POSITIVE][self.target] / total

    @property
    def recovery(self):
        """Share of the target-class feed (by count) that reached the positive bin."""
        fed = sum(self.bin_counts[outcome][self.target] for outcome in BinOutcome)
        if fed == 0:
            return 0.0
        return self.bin_counts[BinOutcome.POSITIVE][self.target] / fed

    @property
    def mass_recovery(self):
        fed = sum(self.bin_mass_g[outcome][self.target] for outcome in BinOutcome)
        if fed == 0:
            return 0.0
        return self.bin_mass_g[BinOutcome.POSITIVE][self.target] / fed

    @property
    def throughput_kg_s(self):
        if self.duration_ms <= 0:
            return 0.0
        return (self.mass_out_g / 1000.0) / (self.duration_ms / 1000.0)

    @property
    def flicks_executed(self):
        return self.operations.flicks_executed

    @property
    def breaches(self):
        return self.operations.breaches

    def mass_conserved(self, tolerance_g=1e-6):
        """Total mass fed equals the total across both bins."""
        return abs(self.mass_in_g - self.mass_out_g) <= tolerance_g

    def to_dict(self):
        """Summary values of the run (no config snapshot)."""
        return {
            'seed': self.seed,
            'preset': self.preset,
            'target': self.target.value,
            'detector': self.detector,
            'duration_ms': self.duration_ms,
            'particles_in': self.particles_in,
            'mass_in_kg': self.mass_in_g / 1000.0,
            'purity': self.purity,
            'mass_purity': self.mass_purity,
            'recovery': self.recovery,
            'mass_recovery': self.mass_recovery,
            'throughput_kg_s': self.throughput_kg_s,
            'frames_processed': self.frames_processed,
            'commands_sent': self.commands_sent,
            'commands_accepted': self.operations.executed + self.operations.merged
            + self.operations.pending,
            'commands_rejected': self.operations.rejected,
            'merged_actuations': self.operations.merged,
            'flicks_executed': self.flicks_executed,
            'breaches': self.breaches
        }
