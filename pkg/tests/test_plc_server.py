"""
Tests for the PLC emulator.

This module drives a PLC session on virtual time and runs the TCP server
on a free local port against a real client.
"""

import socket
import time
import unittest
from unittest.mock import patch

from app.api.error_handling import GeometryError
from app.api.plc_server import PlcClient, PlcServer, PlcSession
from app.api.plc_wire import AckStatus, FramePacket, encode
from app.models.control import CommandOutcome, FsmState, PaddleCommand, PaddleLayout
from app.services.control_service import Scheduler


def wait_for(predicate, timeout=2.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.01)
    return predicate()


class TestPlcSession(unittest.TestCase):
    """Test cases for the protocol handler on virtual time."""

    def setUp(self):
        """Set up test environment."""
        self.session = PlcSession(Scheduler(PaddleLayout()))

    def send(self, packet, now):
        return self.session.handle_line(encode(packet), now)

    def test_executed_and_merged_records(self):
        """Each command produces one record once its actuation fires."""
        ack = self.send(FramePacket(1, 0, (PaddleCommand(4, 500, 20, 1), PaddleCommand(4, 510, 20, 2))), 10)
        self.assertIs(ack.status, AckStatus.ACCEPTED)
        self.assertEqual(self.session.records, [])
        events = self.session.tick(600)
        self.assertEqual(len(events), 1)
        outcomes = [(r.fragment_id, r.outcome, r.actuated_ts) for r in self.session.records]
        self.assertEqual(outcomes, [(1, CommandOutcome.EXECUTED, 500), (2, CommandOutcome.MERGED, 500)])

    def test_late_command_is_rejected_breach(self):
        ack = self.send(FramePacket(1, 0, (PaddleCommand(4, 5, 20, 1),)), 10)
        self.assertEqual((ack.status, ack.rejected), (AckStatus.PARTIAL, 1))
        record = self.session.records[0]
        self.assertIs(record.outcome, CommandOutcome.REJECTED)
        self.assertTrue(record.breach)
        self.assertEqual(record.reason, 'late')

    def test_malformed_line(self):
        """A malformed line is acknowledged, logged as a breach and faults the FSM."""
        ack = self.session.handle_line(b'ARIS1 F=1 T=0;1,x,20,1\n', 10)
        self.assertIs(ack.status, AckStatus.MALFORMED)
        record = self.session.records[0]
        self.assertIs(record.outcome, CommandOutcome.MALFORMED)
        self.assertEqual((record.reason, record.frame_id), ('non_numeric', 1))
        self.assertIs(self.session.scheduler.fsm, FsmState.FAULT)

        ack = self.send(FramePacket(2, 0, (PaddleCommand(4, 500, 20, 1),)), 20)
        self.assertIs(ack.status, AckStatus.ACCEPTED)
        self.assertIs(self.session.scheduler.fsm, FsmState.IDLE)

    def test_raw_line_is_single_line(self):
        """Control characters of a broken line are escaped in its record."""
        self.session.handle_line(b'XX\r\x00junk\n', 0)
        self.assertEqual(self.session.records[0].raw_line, 'XX\\x0d\\x00junk')

    def test_unexpected_decode_error_is_grammar(self):
        """A decoding failure without its own reason code is logged as grammar."""
        with patch.object(self.session.decoder, 'decode', side_effect=GeometryError('bad box')):
            ack = self.session.handle_line(b'ARIS1 F=1 T=0;\n', 10)
        self.assertIs(ack.status, AckStatus.MALFORMED)
        record = self.session.records[0]
        self.assertEqual((record.reason, record.frame_id, record.breach), ('grammar', None, True))
        self.assertEqual(self.session.scheduler.state.breaches, 1)

    def test_pending_records_on_close(self):
        self.send(FramePacket(1, 0, (PaddleCommand(4, 500, 20, 1),)), 10)
        self.session.close()
        self.assertIs(self.session.records[0].outcome, CommandOutcome.PENDING)

    def test_transport_lost(self):
        self.session.transport_lost(b'ARIS1 F=3 T=', 50)
        self.assertEqual(self.session.scheduler.state.breaches, 1)
        self.assertEqual(self.session.records[0].reason, 'framing')


class TestPlcServer(unittest.TestCase):
    """Test cases for the TCP server."""

    def setUp(self):
        """Set up test environment."""
        # A frozen clock keeps every flick time in the future
        self.server = PlcServer('127.0.0.1', 0, PaddleLayout(), tick_ms=2.0, clock=lambda: 0.0)
        self.server.start()
        self.host, self.port = self.server.address

    def tearDown(self):
        """Clean up after tests."""
        self.server.stop()

    def test_hundred_packets_hundred_acks(self):
        with PlcClient(self.host, self.port, timeout=5.0) as client:
            acks = []
            for i in range(100):
                cmd = PaddleCommand(i % 64 + 1, 10**6 + 100 * i, 20, i)
                acks.append(client.send(FramePacket(i, 0, (cmd,))))
        self.assertEqual(len(acks), 100)
        self.assertTrue(all(ack.status is AckStatus.ACCEPTED for ack in acks))
        self.assertEqual([ack.frame_id for ack in acks], list(range(100)))
        self.assertEqual(self.server.session.counters()['commands_accepted'], 100)

    def test_malformed_injection(self):
        """A garbage line is answered, counted as a breach and the server keeps serving."""
        with PlcClient(self.host, self.port) as client:
            first = client.send(FramePacket(1, 0, (PaddleCommand(1, 10**6, 20, 1),)))
            bad = client.send_raw(b'ARIS1 F=2 T=0;99,10,20,2\n')
            after = client.send(FramePacket(2, 0, (PaddleCommand(2, 10**6, 20, 3),)))
        self.assertIs(first.status, AckStatus.ACCEPTED)
        self.assertIs(bad.status, AckStatus.MALFORMED)
        self.assertIs(after.status, AckStatus.ACCEPTED)

        self.server.stop()
        counters = self.server.session.counters()
        self.assertEqual(counters['breaches'], 1)
        self.assertEqual(counters['acks_sent'], 3)
        reasons = [r.reason for r in self.server.session.records if r.breach]
        self.assertEqual(reasons, ['paddle_range'])

    def test_connection_dropped_mid_line(self):
        """A partial line followed by a disconnect counts one breach."""
        with socket.create_connection((self.host, self.port), timeout=2.0) as raw:
            raw.sendall(b'ARIS1 F=1 T=0;1,')
        self.assertTrue(wait_for(lambda: self.server.session.counters()['breaches'] == 1))

    @patch('app.api.plc_server.MAX_LINE_BYTES', 64)
    def test_oversize_line_is_one_breach(self):
        """The tail of an over-long line is discarded, not read as another packet."""
        oversize = b'ARIS1 F=1 T=0;' + b';'.join(b'%d,1000000,20,%d' % (k % 64 + 1, k) for k in range(20))
        with PlcClient(self.host, self.port, timeout=5.0) as client:
            bad = client.send_raw(oversize + b'\n')
            after = client.send(FramePacket(2, 0, (PaddleCommand(2, 10**6, 20, 99),)))
        self.assertIs(bad.status, AckStatus.MALFORMED)
        self.assertIs(after.status, AckStatus.ACCEPTED)
        self.assertEqual(after.frame_id, 2)

        self.server.stop()
        reasons = [r.reason for r in self.server.session.records if r.breach]
        self.assertEqual(reasons, ['framing'])

    def test_frame_ids_restart_per_connection(self):
        for _ in range(2):
            with PlcClient(self.host, self.port) as client:
                ack = client.send(FramePacket(0, 0))
                self.assertIs(ack.status, AckStatus.ACCEPTED)


if __name__ == '__main__':
    unittest.main()
