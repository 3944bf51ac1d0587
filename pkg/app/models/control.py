"""
Control models.

This module defines the paddle array geometry, the commands sent to the
PLC, the actuation events it emits and the scheduler's state.
"""

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Tuple

from app.api.error_handling import ConfigError
from app.models.geometry import MM_PER_INCH

GRAVITY_MPS2 = 9.81


class FsmState(enum.Enum):
    """Enumeration of the PLC's packet-handling states."""
    IDLE = 'idle'              # Waiting for traffic
    RECEIVING = 'receiving'    # Reading a line
    PARSING = 'parsing'        # Decoding the line
    SCHEDULING = 'scheduling'  # Enqueuing its commands
    FAULT = 'fault'            # Last line was malformed


class CommandOutcome(enum.Enum):
    """What became of a command after it reached the PLC."""
    EXECUTED = 'executed'    # Actuated on its own window
    MERGED = 'merged'        # Folded into the queue tail's window
    REJECTED = 'rejected'    # Refused by the scheduler
    PENDING = 'pending'      # Still queued when the run ended
    MALFORMED = 'malformed'  # Line could not be decoded


class RejectReason(enum.Enum):
    """Reasons the scheduler refuses a command."""
    LATE = 'late'                    # flick_at not in the future
    OUT_OF_ORDER = 'out_of_order'    # Earlier than the paddle's queue tail
    PADDLE_BUSY = 'paddle_busy'      # Overlaps an actuation already started
    TON_TOO_SHORT = 'ton_too_short'  # Hold shorter than the actuation latency
    FAULT = 'fault'                  # Arrived while the FSM was faulted

    @property
    def is_breach(self):
        return self in (RejectReason.LATE, RejectReason.FAULT)


@dataclass(frozen=True)
class PaddleLayout:
    """
    Geometry and timing of the paddle array.

    Paddles are numbered 1..paddle_count from the left edge of the stitched
    frame. A paddle needs ``actuate_ms`` to strike and ``return_ms`` to
    retract, so it can flick at most once per cycle.
    """
    paddle_count: int = 64
    pitch_mm: float = MM_PER_INCH
    actuate_ms: float = 20.0
    return_ms: float = 20.0
    standoff_from_belt_edge_mm: float = 203.2
    drop_below_belt_mm: float = 152.4
    t_to_hit_ms: Optional[float] = None

    @property
    def cycle_ms(self):
        return self.actuate_ms + self.return_ms

    @property
    def max_flick_rate_hz(self):
        return 1000.0 / self.cycle_ms

    @property
    def fall_time_ms(self):
        """Time for a fragment leaving the belt to drop to the paddle line."""
        return math.sqrt(2.0 * (self.drop_below_belt_mm / 1000.0) / GRAVITY_MPS2) * 1000.0

    @property
    def effective_t_to_hit_ms(self):
        """Configured T_to_hit, or the projectile-derived fall time."""
        if self.t_to_hit_ms is not None:
            return self.t_to_hit_ms
        return self.fall_time_ms

    def validate(self, belt_width_mm=None, prefix='layout'):
        """
        Check the layout invariants.

        Raises:
            ConfigError: Naming the first offending field
        """
        if self.paddle_count <= 0:
            raise ConfigError(f"{prefix}.paddle_count", "must be positive")
        if self.pitch_mm <= 0:
            raise ConfigError(f"{prefix}.pitch_mm", "must be positive")
        if self.actuate_ms <= 0 or self.return_ms < 0:
            raise ConfigError(f"{prefix}.actuate_ms", "actuation latencies must be positive")
        if self.drop_below_belt_mm < 0:
            raise ConfigError(f"{prefix}.drop_below_belt_mm", "must not be negative")
        if self.t_to_hit_ms is not None and self.t_to_hit_ms < 0:
            raise ConfigError(f"{prefix}.t_to_hit_ms", "must not be negative")
        if belt_width_mm is not None:
            span = self.paddle_count * self.pitch_mm
            if abs(span - belt_width_mm) > 0.01 * belt_width_mm:
                raise ConfigError(
                    f"{prefix}.pitch_mm",
                    f"{self.paddle_count} paddles x {self.pitch_mm} mm = {span:.1f} mm "
                    f"does not cover the {belt_width_mm:.1f} mm belt"
                )
        return self


@dataclass(frozen=True)
class PaddleCommand:
    """One paddle actuation requested for one fragment."""
    paddle_index: int
    flick_at: int
    ton_ms: int
    fragment_id: int

    @property
    def start(self):
        return self.flick_at

    def window_end(self, return_ms):
        """End of the half-open window the paddle is occupied for."""
        return self.flick_at + self.ton_ms + return_ms


@dataclass(frozen=True)
class ActuationEvent:
    """A paddle actuation: held from ``start`` to ``end``."""
    paddle: int
    start: float
    end: float
    fragment_ids: Tuple[int, ...] = ()


@dataclass(frozen=True)
class EnqueueResult:
    """Outcome of offering one command to the scheduler."""
    accepted: bool
    merged: bool = False
    reason: Optional[RejectReason] = None

    @property
    def breach(self):
        return self.reason is not None and self.reason.is_breach


@dataclass
class QueuedActuation:
    """A queue entry; merged commands extend one entry's hold time."""
    paddle_index: int
    flick_at: float
    ton_ms: float
    fragment_ids: List[int] = field(default_factory=list)

    @property
    def end(self):
        return self.flick_at + self.ton_ms


@dataclass
class SchedulerState:
    """Mutable state of the PLC scheduler."""
    paddle_count: int
    fsm: FsmState = FsmState.IDLE
    queues: Dict[int, Deque[QueuedActuation]] = field(default_factory=dict)
    busy_until: Dict[int, float] = field(default_factory=dict)
    flicks_executed: int = 0
    breaches: int = 0
    commands_accepted: int = 0
    commands_merged: int = 0
    commands_rejected: int = 0
    last_tick: float = float('-inf')

    def __post_init__(self):
        for paddle in range(1, self.paddle_count + 1):
            self.queues.setdefault(paddle, deque())
            self.busy_until.setdefault(paddle, float('-inf'))

    @property
    def pending(self):
        return sum(len(queue) for queue in self.queues.values())
