"""
Control service module.

This module turns detections into paddle commands (paddle mapping and
flick-time computation) and implements the PLC-side scheduler: a FIFO queue
per paddle with a variable hold time (TON), driven by a small finite state
machine that receives, parses and schedules each packet.
"""

import logging
import math

from app.api.error_handling import ControlError, OutOfBeltError
from app.models.control import (
    ActuationEvent, EnqueueResult, FsmState, PaddleCommand, QueuedActuation,
    RejectReason, SchedulerState
)
from app.services.geometry_service import px_to_mm

# Configure logging
logger = logging.getLogger(__name__)


def paddle_for_x(x_global, cal, layout):
    """
    Map a global x pixel coordinate to a paddle number.

    Paddle k covers the half-open pixel interval [(k-1)·p, k·p) where
    p = belt_width_px / paddle_count.

    Args:
        x_global (float): Centroid x in stitched-frame pixels
        cal (BeltCalibration): Belt calibration
        layout (PaddleLayout): Paddle array

    Returns:
        int: Paddle number in 1..paddle_count

    Raises:
        OutOfBeltError: If x lies outside the belt viewport
    """
    if not 0 <= x_global < cal.belt_width_px:
        raise OutOfBeltError(f"x = {x_global} px is outside the {cal.belt_width_px} px belt")
    px_per_paddle = cal.belt_width_px / layout.paddle_count
    index = int(math.floor(x_global / px_per_paddle)) + 1
    return min(max(index, 1), layout.paddle_count)


def distance_to_belt_edge(y_global, cal):
    """
    Belt length a fragment still travels before leaving the belt.

    Image row 0 is the downstream edge of the field of view, so the distance
    grows with y.
    """
    if not 0 <= y_global <= cal.segment_height_px:
        raise ControlError(f"y = {y_global} px is outside the {cal.segment_height_px} px frame")
    return cal.fov_to_edge_mm + px_to_mm(y_global, cal)


def belt_edge_time(distance_mm, belt_speed_mps):
    """Time in ms to cover ``distance_mm`` at ``belt_speed_mps`` (1 m/s = 1 mm/ms)."""
    if belt_speed_mps <= 0:
        raise ControlError("Belt speed must be positive to schedule a flick")
    return distance_mm / belt_speed_mps


def t_to_hit_projectile(layout):
    """Fall time from the belt edge to the paddle line, in ms."""
    return layout.fall_time_ms


def horizontal_travel_mm(layout, belt_speed_mps):
    """Horizontal distance a fragment flies while falling to the paddle line."""
    return belt_speed_mps * layout.fall_time_ms


def flick_time(y_global, capture_ts, cal, layout, t_offset_ms=0.0):
    """
    Absolute instant a paddle must fire to strike a fragment.

    T_flick = capture_ts + T_belt_edge + T_to_hit + T_offset.

    Args:
        y_global (float): Centroid y in stitched-frame pixels
        capture_ts (float): Frame capture time in ms
        cal (BeltCalibration): Belt calibration (speed and edge distance)
        layout (PaddleLayout): Paddle array (T_to_hit)
        t_offset_ms (float): Empirical correction

    Returns:
        float: Flick time in ms

    Raises:
        ControlError: If the belt is not moving
    """
    if cal.belt_speed_mps <= 0:
        raise ControlError("Belt speed must be positive to schedule a flick")
    t_belt_edge = belt_edge_time(distance_to_belt_edge(y_global, cal), cal.belt_speed_mps)
    return capture_ts + t_belt_edge + layout.effective_t_to_hit_ms + t_offset_ms


def round_ms(value):
    """Round half up to a whole millisecond."""
    return int(math.floor(value + 0.5))


def command_for_detection(detection, capture_ts, cal, layout, fragment_id, ton_ms=None,
                          t_offset_ms=0.0):
    """
    Build the paddle command for one global detection.

    Args:
        detection (Detection): Detection in GLOBAL_PX space
        capture_ts (float): Capture time of its frame
        fragment_id (int): Provenance id carried over the wire

    Returns:
        PaddleCommand: Command with whole-millisecond timing
    """
    box = detection.bbox
    ton = layout.actuate_ms if ton_ms is None else max(ton_ms, layout.actuate_ms)
    return PaddleCommand(
        paddle_index=paddle_for_x(box.x_c, cal, layout),
        flick_at=round_ms(flick_time(box.y_c, capture_ts, cal, layout, t_offset_ms)),
        ton_ms=round_ms(ton),
        fragment_id=fragment_id
    )


class Scheduler:
    """
    FIFO actuation scheduler of the PLC.

    A command occupies its paddle for the half-open window
    [flick_at, flick_at + ton + return_ms). Commands overlapping the queue
    tail are merged into it by extending its hold time, so a paddle never
    has two overlapping windows and never flicks more than once per cycle.

    The scheduler has a single owner: ``enqueue`` and ``tick`` must not be
    called concurrently.
    """

    def __init__(self, layout):
        self.layout = layout
        self.state = SchedulerState(layout.paddle_count)

    # ---- finite state machine ----

    @property
    def fsm(self):
        return self.state.fsm

    def begin_receive(self):
        """A line started arriving. A faulted FSM stays faulted until a good packet parses."""
        if self.state.fsm is not FsmState.FAULT:
            self.state.fsm = FsmState.RECEIVING

    def begin_parse(self):
        if self.state.fsm is not FsmState.FAULT:
            self.state.fsm = FsmState.PARSING

    def parsed(self):
        """A well-formed packet was decoded; clears a fault."""
        if self.state.fsm is FsmState.FAULT:
            logger.info("Well-formed packet received, leaving fault state")
        self.state.fsm = FsmState.SCHEDULING

    def malformed(self, reason, raw=None):
        """Record a protocol breach and enter the fault state."""
        self.state.breaches += 1
        self.state.fsm = FsmState.FAULT
        logger.warning(f"Communication breach ({reason}): {raw!r}")

    def scheduled(self):
        self.state.fsm = FsmState.IDLE

    def reset(self, reason='transport_lost'):
        """Drop a half-received line: one breach, back to Idle."""
        self.state.breaches += 1
        self.state.fsm = FsmState.IDLE
        logger.warning(f"Session reset ({reason})")

    # ---- queue ----

    def enqueue(self, cmd, now):
        """
        Offer a command to its paddle's queue.

        Args:
            cmd (PaddleCommand): Command to schedule
            now (float): Current time in ms

        Returns:
            EnqueueResult: Accepted (possibly merged) or rejected with a reason
        """
        if not 1 <= cmd.paddle_index <= self.layout.paddle_count:
            raise OutOfBeltError(f"Paddle {cmd.paddle_index} does not exist")

        if self.state.fsm is FsmState.FAULT:
            return self._reject(cmd, RejectReason.FAULT)
        if cmd.ton_ms < self.layout.actuate_ms:
            return self._reject(cmd, RejectReason.TON_TOO_SHORT)
        if cmd.flick_at <= now:
            return self._reject(cmd, RejectReason.LATE)

        queue = self.state.queues[cmd.paddle_index]
        return_ms = self.layout.return_ms
        if queue:
            tail = queue[-1]
            if cmd.flick_at < tail.flick_at:
                return self._reject(cmd, RejectReason.OUT_OF_ORDER)
            if cmd.flick_at < tail.end + return_ms:
                tail.ton_ms = max(tail.end, cmd.flick_at + cmd.ton_ms) - tail.flick_at
                tail.fragment_ids.append(cmd.fragment_id)
                self.state.commands_accepted += 1
                self.state.commands_merged += 1
                return EnqueueResult(accepted=True, merged=True)
        elif cmd.flick_at < self.state.busy_until[cmd.paddle_index]:
            return self._reject(cmd, RejectReason.PADDLE_BUSY)

        queue.append(QueuedActuation(cmd.paddle_index, cmd.flick_at, cmd.ton_ms, [cmd.fragment_id]))
        self.state.commands_accepted += 1
        return EnqueueResult(accepted=True)

    def _reject(self, cmd, reason):
        self.state.commands_rejected += 1
        if reason.is_breach:
            self.state.breaches += 1
            logger.warning(
                f"Rejected command for fragment {cmd.fragment_id} on paddle "
                f"{cmd.paddle_index}: {reason.value}"
            )
        else:
            logger.debug(f"Rejected command for fragment {cmd.fragment_id}: {reason.value}")
        return EnqueueResult(accepted=False, reason=reason)

    def tick(self, now):
        """
        Fire every queued actuation that is due.

        Args:
            now (float): Current time in ms, non-decreasing between calls

        Returns:
            list: ActuationEvents ordered by start time, then paddle
        """
        if now < self.state.last_tick:
            raise ControlError(f"Scheduler clock went backwards: {now} < {self.state.last_tick}")
        self.state.last_tick = now

        events = []
        for paddle, queue in self.state.queues.items():
            while queue and queue[0].flick_at <= now:
                item = queue.popleft()
                events.append(ActuationEvent(paddle, item.flick_at, item.end, tuple(item.fragment_ids)))
                self.state.busy_until[paddle] = item.end + self.layout.return_ms
                self.state.flicks_executed += 1
        events.sort(key=lambda e: (e.start, e.paddle))
        return events

    def pending_fragments(self):
        """Fragment ids still waiting in the queues."""
        return [
            fragment_id
            for queue in self.state.queues.values()
            for item in queue
            for fragment_id in item.fragment_ids
        ]
