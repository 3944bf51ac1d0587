"""
Tests for the sort controller.

This module tests paddle mapping, flick-time computation and the PLC-side
scheduler: its finite state machine, merging and rejection rules, and the
actuation-rate guarantees over seeded command streams.
"""

import bisect
import math
import unittest

import numpy as np

from app.api.error_handling import ConfigError, ControlError, OutOfBeltError
from app.models.control import FsmState, PaddleCommand, PaddleLayout, RejectReason
from app.models.detection import Detection
from app.models.geometry import BBox, BeltCalibration
from app.models.material import MaterialClass
from app.services.control_service import (
    Scheduler, command_for_detection, distance_to_belt_edge, flick_time, horizontal_travel_mm,
    paddle_for_x, round_ms, t_to_hit_projectile
)


class TestPaddleMapping(unittest.TestCase):
    """Test cases for paddle mapping and flick times."""

    def setUp(self):
        """Set up test environment."""
        self.cal = BeltCalibration()
        self.layout = PaddleLayout()

    def test_paddle_for_x(self):
        """64 paddles of 90 px each, numbered from 1."""
        self.assertEqual(paddle_for_x(0, self.cal, self.layout), 1)
        self.assertEqual(paddle_for_x(89.9, self.cal, self.layout), 1)
        self.assertEqual(paddle_for_x(90, self.cal, self.layout), 2)
        self.assertEqual(paddle_for_x(5759.9, self.cal, self.layout), 64)

    def test_paddle_outside_belt(self):
        """Coordinates off the belt have no paddle."""
        for x in (-0.1, 5760, 6000):
            with self.assertRaises(OutOfBeltError):
                paddle_for_x(x, self.cal, self.layout)

    def test_layout_covers_belt(self):
        """64 one-inch paddles span the 64 in belt; a short pitch does not."""
        self.layout.validate(self.cal.belt_width_mm)
        with self.assertRaises(ConfigError) as ctx:
            PaddleLayout(pitch_mm=20.0).validate(self.cal.belt_width_mm)
        self.assertEqual(ctx.exception.field, 'layout.pitch_mm')

    def test_fall_time(self):
        """Six inches of free fall take about 176 ms."""
        self.assertAlmostEqual(t_to_hit_projectile(self.layout), 176.3, delta=0.1)
        self.assertEqual(PaddleLayout(t_to_hit_ms=150.0).effective_t_to_hit_ms, 150.0)

    def test_flick_time(self):
        """T_flick = capture + distance / speed + T_to_hit + offset."""
        y = 600.0
        distance = 300.0 + y / self.cal.px_per_mm
        self.assertAlmostEqual(distance_to_belt_edge(y, self.cal), distance)
        expected = 1000.0 + distance / 1.2 + self.layout.fall_time_ms + 5.0
        self.assertAlmostEqual(flick_time(y, 1000.0, self.cal, self.layout, 5.0), expected)

    def test_flick_time_grows_with_row(self):
        """Rows further upstream fire later."""
        early = flick_time(0.0, 0.0, self.cal, self.layout)
        late = flick_time(1200.0, 0.0, self.cal, self.layout)
        self.assertAlmostEqual(late - early, self.cal.fov_length_mm / 1.2)

    def test_flick_time_slope(self):
        """Flick time is affine in the row: 1 / belt speed ms per mm of belt."""
        for speed in (0.4, 1.2, 1.3):
            with self.subTest(speed=speed):
                cal = BeltCalibration(belt_speed_mps=speed)
                expected = 1.0 / (speed * cal.px_per_mm)
                for y in (0.0, 250.0, 600.0, 1100.0):
                    step = 64.0
                    slope = (flick_time(y + step, 0.0, cal, self.layout)
                             - flick_time(y, 0.0, cal, self.layout)) / step
                    self.assertLess(abs(slope - expected) / expected, 1e-9)

    def test_fall_matches_standoff(self):
        """At the operating speed a fragment flies about the 8 in paddle standoff while falling."""
        travel = horizontal_travel_mm(self.layout, 1.2)
        self.assertAlmostEqual(travel, 211.5, delta=0.5)
        standoff = self.layout.standoff_from_belt_edge_mm
        self.assertLess(abs(travel - standoff) / standoff, 0.10)

    def test_stationary_belt(self):
        """No flick can be scheduled on a stopped belt."""
        cal = BeltCalibration(belt_speed_mps=0.0)
        with self.assertRaises(ControlError):
            flick_time(600.0, 0.0, cal, self.layout)

    def test_command_for_detection(self):
        """Commands carry whole-millisecond timing and a TON of at least the actuation time."""
        box = BBox.in_global(MaterialClass.METAL, 100.0, 600.0, 80.0, 80.0, self.cal, 0.9)
        cmd = command_for_detection(Detection(box, 3), 1000, self.cal, self.layout, 42, ton_ms=5)
        self.assertEqual(cmd.paddle_index, 2)
        self.assertEqual(cmd.flick_at, round_ms(flick_time(600.0, 1000, self.cal, self.layout)))
        self.assertEqual(cmd.ton_ms, 20)
        self.assertEqual(cmd.fragment_id, 42)

    def test_round_half_up(self):
        self.assertEqual(round_ms(10.5), 11)
        self.assertEqual(round_ms(10.49), 10)


class TestSchedulerRules(unittest.TestCase):
    """Test cases for the scheduler's acceptance rules."""

    def setUp(self):
        """Set up test environment."""
        self.scheduler = Scheduler(PaddleLayout())

    def test_late_command_is_a_breach(self):
        """A flick time at or before now is rejected as late."""
        result = self.scheduler.enqueue(PaddleCommand(1, 100, 20, 1), now=100)
        self.assertFalse(result.accepted)
        self.assertIs(result.reason, RejectReason.LATE)
        self.assertTrue(result.breach)
        self.assertEqual(self.scheduler.state.breaches, 1)

    def test_overlapping_commands_merge(self):
        """A command inside the tail's window extends its hold time."""
        self.assertTrue(self.scheduler.enqueue(PaddleCommand(5, 100, 20, 1), 0).accepted)
        merged = self.scheduler.enqueue(PaddleCommand(5, 130, 20, 2), 0)
        self.assertTrue(merged.merged)
        events = self.scheduler.tick(1000)
        self.assertEqual(len(events), 1)
        self.assertEqual((events[0].start, events[0].end), (100, 150))
        self.assertEqual(events[0].fragment_ids, (1, 2))
        self.assertEqual(self.scheduler.state.commands_merged, 1)

    def test_separate_windows_stay_separate(self):
        """A command after the tail's window and return gets its own actuation."""
        self.scheduler.enqueue(PaddleCommand(5, 100, 20, 1), 0)
        result = self.scheduler.enqueue(PaddleCommand(5, 140, 20, 2), 0)
        self.assertFalse(result.merged)
        self.assertEqual(len(self.scheduler.tick(1000)), 2)

    def test_out_of_order(self):
        """A command earlier than the queue tail is refused without a breach."""
        self.scheduler.enqueue(PaddleCommand(5, 200, 20, 1), 0)
        result = self.scheduler.enqueue(PaddleCommand(5, 150, 20, 2), 0)
        self.assertIs(result.reason, RejectReason.OUT_OF_ORDER)
        self.assertFalse(result.breach)
        self.assertEqual(self.scheduler.state.breaches, 0)

    def test_paddle_busy(self):
        """A command landing in a fired actuation's window is refused."""
        self.scheduler.enqueue(PaddleCommand(5, 100, 20, 1), 0)
        self.scheduler.tick(100)
        result = self.scheduler.enqueue(PaddleCommand(5, 130, 20, 2), 101)
        self.assertIs(result.reason, RejectReason.PADDLE_BUSY)
        self.assertTrue(self.scheduler.enqueue(PaddleCommand(5, 140, 20, 3), 101).accepted)

    def test_short_ton(self):
        """A hold shorter than the actuation latency is refused."""
        result = self.scheduler.enqueue(PaddleCommand(5, 100, 10, 1), 0)
        self.assertIs(result.reason, RejectReason.TON_TOO_SHORT)

    def test_unknown_paddle(self):
        with self.assertRaises(OutOfBeltError):
            self.scheduler.enqueue(PaddleCommand(65, 100, 20, 1), 0)

    def test_clock_cannot_go_backwards(self):
        self.scheduler.tick(50)
        with self.assertRaises(ControlError):
            self.scheduler.tick(49)

    def test_events_fire_when_due(self):
        """Nothing fires before its flick time."""
        self.scheduler.enqueue(PaddleCommand(3, 100, 20, 1), 0)
        self.assertEqual(self.scheduler.tick(99), [])
        self.assertEqual(self.scheduler.pending_fragments(), [1])
        self.assertEqual(len(self.scheduler.tick(100)), 1)
        self.assertEqual(self.scheduler.state.flicks_executed, 1)


class TestFiniteStateMachine(unittest.TestCase):
    """Test cases for the packet-handling state machine."""

    def setUp(self):
        """Set up test environment."""
        self.scheduler = Scheduler(PaddleLayout())

    def test_packet_cycle(self):
        """Idle, Receiving, Parsing, Scheduling, Idle."""
        seen = [self.scheduler.fsm]
        for step in (self.scheduler.begin_receive, self.scheduler.begin_parse,
                     self.scheduler.parsed, self.scheduler.scheduled):
            step()
            seen.append(self.scheduler.fsm)
        self.assertEqual(seen, [
            FsmState.IDLE, FsmState.RECEIVING, FsmState.PARSING, FsmState.SCHEDULING, FsmState.IDLE
        ])

    def test_fault_until_good_packet(self):
        """A malformed line faults the FSM until a well-formed packet parses."""
        self.scheduler.malformed('bad_magic', b'XX|1\n')
        self.assertIs(self.scheduler.fsm, FsmState.FAULT)
        self.scheduler.begin_receive()
        self.assertIs(self.scheduler.fsm, FsmState.FAULT)
        result = self.scheduler.enqueue(PaddleCommand(1, 500, 20, 1), 0)
        self.assertIs(result.reason, RejectReason.FAULT)
        self.assertEqual(self.scheduler.state.breaches, 2)

        self.scheduler.parsed()
        self.assertIs(self.scheduler.fsm, FsmState.SCHEDULING)
        self.assertTrue(self.scheduler.enqueue(PaddleCommand(1, 500, 20, 2), 0).accepted)

    def test_transport_reset(self):
        """A dropped connection mid-line counts a breach and returns to Idle."""
        self.scheduler.begin_receive()
        self.scheduler.reset()
        self.assertIs(self.scheduler.fsm, FsmState.IDLE)
        self.assertEqual(self.scheduler.state.breaches, 1)


class TestSchedulerProperties(unittest.TestCase):
    """Seeded command streams (10^5 commands in all) never break the actuation guarantees."""

    def run_stream(self, seed, paddles=4, commands=20000):
        layout = PaddleLayout()
        scheduler = Scheduler(layout)
        rng = np.random.default_rng(seed)
        steps = rng.integers(0, 15, size=commands)
        paddle_ids = rng.integers(1, paddles + 1, size=commands)
        leads = rng.integers(-5, 300, size=commands)
        tons = rng.integers(10, 45, size=commands)
        now = 0
        accepted = []
        events = []
        for k in range(commands):
            now += int(steps[k])
            events.extend(scheduler.tick(now))
            cmd = PaddleCommand(int(paddle_ids[k]), now + int(leads[k]), int(tons[k]),
                                len(accepted) + 100000 * seed)
            if scheduler.enqueue(cmd, now).accepted:
                accepted.append(cmd.fragment_id)
        events.extend(scheduler.tick(now + 10000))
        return layout, scheduler, accepted, events

    def test_guarantees(self):
        for seed in range(5):
            with self.subTest(seed=seed):
                layout, scheduler, accepted, events = self.run_stream(seed)
                self.assertEqual(scheduler.state.pending, 0)

                fired = [f for event in events for f in event.fragment_ids]
                self.assertEqual(sorted(fired), sorted(accepted))

                by_paddle = {}
                for event in events:
                    by_paddle.setdefault(event.paddle, []).append(event)
                limit = math.floor(layout.max_flick_rate_hz)
                self.assertEqual(limit, 25)
                for paddle, own in by_paddle.items():
                    starts = [e.start for e in own]
                    self.assertEqual(starts, sorted(starts))
                    for prev, nxt in zip(own, own[1:]):
                        self.assertGreaterEqual(nxt.start, prev.end + layout.return_ms)
                        self.assertGreaterEqual(nxt.start - prev.start, layout.cycle_ms)
                    for i, start in enumerate(starts):
                        in_window = bisect.bisect_left(starts, start + 1000) - i
                        self.assertLessEqual(in_window, limit)

    def test_same_seed_same_events(self):
        self.assertEqual(self.run_stream(9, commands=3000)[3], self.run_stream(9, commands=3000)[3])


if __name__ == '__main__':
    unittest.main()
