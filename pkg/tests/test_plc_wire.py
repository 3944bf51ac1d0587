"""
Tests for the PLC wire protocol.

This module tests packet and acknowledgement encoding, the strict decoder
with its reason codes, and that arbitrary input only ever fails with a
protocol error.
"""

import unittest

import numpy as np

from app.api.error_handling import (
    BadMagicError, FramingError, GeometryError, GrammarError, NonMonotoneFrameError,
    NonNumericFieldError, PaddleRangeError, ProtocolError
)
from app.api.plc_wire import (
    Ack, AckStatus, FramePacket, SessionDecoder, decode, decode_ack, encode, encode_ack, reason_of
)
from app.models.control import EnqueueResult, PaddleCommand, RejectReason


class TestEncoding(unittest.TestCase):
    """Test cases for packet encoding."""

    def test_line_format(self):
        """One ASCII line per frame, commands separated by semicolons."""
        packet = FramePacket(7, 1500, (PaddleCommand(3, 1926, 20, 11), PaddleCommand(64, 1930, 25, 12)))
        self.assertEqual(encode(packet), b'ARIS1 F=7 T=1500;3,1926,20,11;64,1930,25,12\n')
        self.assertEqual(decode(encode(packet)), packet)

    def test_empty_packet(self):
        """A frame without commands still produces a line."""
        packet = FramePacket(0, 0)
        self.assertEqual(encode(packet), b'ARIS1 F=0 T=0;\n')
        self.assertEqual(decode(b'ARIS1 F=0 T=0;\n'), packet)

    def test_encode_refuses_invalid_fields(self):
        """Packets that would not decode back are refused at the sender."""
        with self.assertRaises(PaddleRangeError):
            encode(FramePacket(1, 0, (PaddleCommand(0, 10, 20, 1),)))
        with self.assertRaises(NonNumericFieldError):
            encode(FramePacket(-1, 0))
        with self.assertRaises(NonNumericFieldError):
            encode(FramePacket(1, 0, (PaddleCommand(1, 10.5, 20, 1),)))

    def test_random_packets_decode_to_themselves(self):
        """10^5 random packets survive an encode-decode cycle unchanged."""
        rng = np.random.default_rng(3)
        packets = 100000
        sizes = rng.integers(0, 12, size=packets)
        total = int(sizes.sum())
        paddles = rng.integers(1, 65, size=total)
        flick_ats = rng.integers(0, 10**9, size=total)
        tons = rng.integers(20, 200, size=total)
        fragments = rng.integers(0, 10**6, size=total)
        captures = rng.integers(0, 10**9, size=packets)
        offset = 0
        for frame_id in range(packets):
            commands = tuple(
                PaddleCommand(int(paddles[k]), int(flick_ats[k]), int(tons[k]), int(fragments[k]))
                for k in range(offset, offset + int(sizes[frame_id]))
            )
            offset += int(sizes[frame_id])
            packet = FramePacket(frame_id, int(captures[frame_id]), commands)
            self.assertEqual(decode(encode(packet)), packet)


class TestDecoding(unittest.TestCase):
    """Test cases for the strict decoder and its reason codes."""

    def assert_reason(self, line, error, reason, **kwargs):
        with self.assertRaises(error) as ctx:
            decode(line, **kwargs)
        self.assertEqual(ctx.exception.reason, reason)
        return ctx.exception

    def test_bad_magic(self):
        self.assert_reason(b'ARIS2 F=1 T=0;\n', BadMagicError, 'bad_magic')
        self.assert_reason(b'hello\n', BadMagicError, 'bad_magic')

    def test_framing(self):
        self.assert_reason(b'ARIS1 F=1 T=0;', FramingError, 'framing')
        self.assert_reason(b'ARIS1 F=1\r T=0;\n', FramingError, 'framing')
        self.assert_reason(b'ARIS1 F=1 T=0;\xff\n', FramingError, 'framing')

    def test_non_numeric(self):
        error = self.assert_reason(b'ARIS1 F=4 T=0;1,abc,20,1\n', NonNumericFieldError, 'non_numeric')
        self.assertEqual(error.frame_id, 4)
        self.assert_reason(b'ARIS1 F=x T=0;\n', NonNumericFieldError, 'non_numeric')
        self.assert_reason(b'ARIS1 F=1 T=-5;\n', NonNumericFieldError, 'non_numeric')
        self.assert_reason(b'ARIS1 F=1 T=0;1,' + b'9' * 40 + b',20,1\n', NonNumericFieldError, 'non_numeric')

    def test_paddle_range(self):
        self.assert_reason(b'ARIS1 F=1 T=0;0,10,20,1\n', PaddleRangeError, 'paddle_range')
        self.assert_reason(b'ARIS1 F=1 T=0;65,10,20,1\n', PaddleRangeError, 'paddle_range')
        self.assertEqual(len(decode(b'ARIS1 F=1 T=0;8,10,20,1\n', paddle_count=8).commands), 1)

    def test_reason_codes(self):
        self.assertEqual(reason_of(PaddleRangeError('paddle 65')), 'paddle_range')
        self.assertEqual(reason_of(FramingError('no newline')), 'framing')
        self.assertEqual(reason_of(GeometryError('bad box')), 'grammar')

    def test_grammar(self):
        self.assert_reason(b'ARIS1 F=1 T=0\n', GrammarError, 'grammar')
        self.assert_reason(b'ARIS1 F=1 T=0;1,2,3\n', GrammarError, 'grammar')
        self.assert_reason(b'ARIS1 F=1 T=0;1,2,3,4;\n', GrammarError, 'grammar')
        self.assert_reason(b'ARIS1 T=0 F=1;\n', GrammarError, 'grammar')

    def test_frame_ids_increase(self):
        """Within a session frame ids strictly increase; malformed lines do not advance them."""
        session = SessionDecoder()
        session.decode(b'ARIS1 F=5 T=0;\n')
        with self.assertRaises(NonMonotoneFrameError):
            session.decode(b'ARIS1 F=5 T=10;\n')
        with self.assertRaises(BadMagicError):
            session.decode(b'XX\n')
        self.assertEqual(session.last_frame_id, 5)
        self.assertEqual(session.decode(b'ARIS1 F=6 T=10;\n').frame_id, 6)
        session.reset()
        self.assertEqual(session.decode(b'ARIS1 F=0 T=20;\n').frame_id, 0)

    def test_fuzzed_lines_only_raise_protocol_errors(self):
        """Random and mutated lines either decode or raise a ProtocolError."""
        rng = np.random.default_rng(99)
        valid = encode(FramePacket(12, 3400, (PaddleCommand(3, 3600, 20, 1), PaddleCommand(9, 3610, 30, 2))))
        alphabet = np.frombuffer(b'ARIS1 F=T;,0123456789-\n\r\xff?', dtype=np.uint8)
        for _ in range(5000):
            choice = rng.integers(0, 3)
            if choice == 0:
                line = rng.integers(0, 256, size=int(rng.integers(0, 80)), dtype=np.uint8).tobytes()
            elif choice == 1:
                line = rng.choice(alphabet, size=int(rng.integers(0, 60))).tobytes()
            else:
                mutated = bytearray(valid)
                for _ in range(int(rng.integers(1, 4))):
                    mutated[int(rng.integers(0, len(mutated)))] = int(rng.choice(alphabet))
                line = bytes(mutated)
            if rng.random() < 0.7:
                line += b'\n'
            try:
                decode(line, last_frame_id=int(rng.integers(0, 20)))
            except ProtocolError as e:
                self.assertIn(e.reason, {
                    'bad_magic', 'framing', 'non_numeric', 'paddle_range', 'non_monotone', 'grammar'
                })


class TestAcks(unittest.TestCase):
    """Test cases for acknowledgements."""

    def test_ack_lines(self):
        self.assertEqual(encode_ack(Ack(4, AckStatus.ACCEPTED)), b'ACK F=4 S=ACCEPTED\n')
        self.assertEqual(encode_ack(Ack(4, AckStatus.PARTIAL, 2)), b'ACK F=4 S=PARTIAL 2\n')
        self.assertEqual(encode_ack(Ack.malformed()), b'ACK F=? S=MALFORMED\n')
        for ack in (Ack(4, AckStatus.ACCEPTED), Ack(9, AckStatus.PARTIAL, 1), Ack.malformed()):
            self.assertEqual(decode_ack(encode_ack(ack)), ack)

    def test_ack_for_results(self):
        """Any rejected command makes the ack partial."""
        ok = EnqueueResult(accepted=True)
        late = EnqueueResult(accepted=False, reason=RejectReason.LATE)
        self.assertEqual(Ack.for_results(3, [ok, ok]).status, AckStatus.ACCEPTED)
        self.assertEqual(Ack.for_results(3, [ok, late, late]), Ack(3, AckStatus.PARTIAL, 2))

    def test_invalid_acks(self):
        for line in (b'ACK F=? S=ACCEPTED\n', b'ACK F=3 S=MALFORMED\n', b'NAK F=3\n', b'ACK F=3 S=ACCEPTED'):
            with self.assertRaises(ProtocolError):
                decode_ack(line)


if __name__ == '__main__':
    unittest.main()
