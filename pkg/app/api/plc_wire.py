"""
PLC wire protocol.

This module implements the newline-delimited ASCII protocol spoken between
the inference host and the PLC emulator. One line carries one frame's
paddle commands::

    ARIS1 F=<frame_id> T=<capture_ts>;<paddle>,<flick_at>,<ton>,<fragment>;...\\n

and the PLC answers each line with one acknowledgement::

    ACK F=<frame_id> S=ACCEPTED\\n
    ACK F=<frame_id> S=PARTIAL <rejected>\\n
    ACK F=? S=MALFORMED\\n

All numeric fields are unsigned decimal integers (milliseconds for times).
"""

import enum
import logging
import re
from dataclasses import dataclass
from typing import Optional, Tuple

from app.api.error_handling import (
    BadMagicError, FramingError, GrammarError, NonMonotoneFrameError,
    NonNumericFieldError, PaddleRangeError, ProtocolError
)
from app.models.control import PaddleCommand

# Configure logging
logger = logging.getLogger(__name__)

MAGIC = 'ARIS1'
ACK_MAGIC = 'ACK'
DEFAULT_PADDLE_COUNT = 64
# Widest numeric field accepted
MAX_FIELD_DIGITS = 20

_UINT = re.compile(r'\d+', re.ASCII)
_HEADER = re.compile(r'F=([^ ]*) T=([^ ]*)', re.ASCII)
_ACK = re.compile(r'ACK F=(\?|\d+) S=(ACCEPTED|PARTIAL (\d+)|MALFORMED)', re.ASCII)


class AckStatus(enum.Enum):
    """Enumeration of acknowledgement statuses."""
    ACCEPTED = 'ACCEPTED'    # Every command was scheduled
    PARTIAL = 'PARTIAL'      # Some commands were rejected
    MALFORMED = 'MALFORMED'  # The line could not be decoded


@dataclass(frozen=True)
class FramePacket:
    """The paddle commands inferred from one frame."""
    frame_id: int
    capture_ts_ms: int
    commands: Tuple[PaddleCommand, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'commands', tuple(self.commands))


@dataclass(frozen=True)
class Ack:
    """The PLC's answer to one packet."""
    frame_id: Optional[int]
    status: AckStatus
    rejected: int = 0

    @classmethod
    def for_results(cls, frame_id, results):
        rejected = sum(1 for result in results if not result.accepted)
        if rejected:
            return cls(frame_id, AckStatus.PARTIAL, rejected)
        return cls(frame_id, AckStatus.ACCEPTED)

    @classmethod
    def malformed(cls):
        return cls(None, AckStatus.MALFORMED)


def _check_uint(value, name):
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value < 10 ** MAX_FIELD_DIGITS:
        raise NonNumericFieldError(f"{name} must be an unsigned integer, got {value!r}")


def encode(packet, paddle_count=DEFAULT_PADDLE_COUNT):
    """
    Encode a packet as one wire line.

    Args:
        packet (FramePacket): Packet to encode
        paddle_count (int): Number of paddles of the sorter

    Returns:
        bytes: Newline-terminated ASCII line

    Raises:
        ProtocolError: If the packet would not decode back to itself
    """
    _check_uint(packet.frame_id, 'frame_id')
    _check_uint(packet.capture_ts_ms, 'capture_ts')
    tuples = []
    for cmd in packet.commands:
        for name in ('paddle_index', 'flick_at', 'ton_ms', 'fragment_id'):
            _check_uint(getattr(cmd, name), name)
        if not 1 <= cmd.paddle_index <= paddle_count:
            raise PaddleRangeError(f"Paddle {cmd.paddle_index} outside 1..{paddle_count}")
        tuples.append(f"{cmd.paddle_index},{cmd.flick_at},{cmd.ton_ms},{cmd.fragment_id}")
    line = f"{MAGIC} F={packet.frame_id} T={packet.capture_ts_ms};{';'.join(tuples)}\n"
    return line.encode('ascii')


def _uint(text, name, raw, frame_id=None):
    if not _UINT.fullmatch(text):
        raise NonNumericFieldError(f"{name} is not an unsigned integer: {text!r}", raw, frame_id)
    if len(text) > MAX_FIELD_DIGITS:
        raise NonNumericFieldError(f"{name} has more than {MAX_FIELD_DIGITS} digits", raw, frame_id)
    return int(text)


def decode(line, last_frame_id=None, paddle_count=DEFAULT_PADDLE_COUNT):
    """
    Decode one wire line with a strict grammar.

    Args:
        line (bytes): Raw line including its terminating newline
        last_frame_id (int, optional): Previous frame id of the session
        paddle_count (int): Number of paddles of the sorter

    Returns:
        FramePacket: The decoded packet

    Raises:
        FramingError: Missing terminator, embedded newline or non-ASCII bytes
        BadMagicError: Line does not start with the protocol magic
        NonNumericFieldError: A numeric field holds anything but digits
        PaddleRangeError: A paddle number outside 1..paddle_count
        NonMonotoneFrameError: Frame id not greater than ``last_frame_id``
        GrammarError: Any other deviation from the grammar
    """
    raw = bytes(line)
    if not raw.endswith(b'\n'):
        raise FramingError("Line is not newline terminated", raw)
    body = raw[:-1]
    if b'\n' in body or b'\r' in body:
        raise FramingError("Embedded line break", raw)
    try:
        text = body.decode('ascii')
    except UnicodeDecodeError:
        raise FramingError("Line is not ASCII", raw)

    if not text.startswith(MAGIC + ' '):
        raise BadMagicError(f"Line does not start with {MAGIC!r}", raw)

    header, sep, payload = text[len(MAGIC) + 1:].partition(';')
    if not sep:
        raise GrammarError("Missing ';' after the header", raw)
    match = _HEADER.fullmatch(header)
    if not match:
        raise GrammarError(f"Malformed header {header!r}", raw)
    frame_id = _uint(match.group(1), 'frame_id', raw)
    capture_ts = _uint(match.group(2), 'capture_ts', raw, frame_id)

    commands = []
    if payload:
        for item in payload.split(';'):
            fields = item.split(',')
            if len(fields) != 4:
                raise GrammarError(f"Command tuple {item!r} needs 4 fields", raw, frame_id)
            paddle, flick_at, ton, fragment = (
                _uint(value, name, raw, frame_id)
                for value, name in zip(fields, ('paddle', 'flick_at', 'ton', 'fragment'))
            )
            if not 1 <= paddle <= paddle_count:
                raise PaddleRangeError(f"Paddle {paddle} outside 1..{paddle_count}", raw, frame_id)
            commands.append(PaddleCommand(paddle, flick_at, ton, fragment))

    if last_frame_id is not None and frame_id <= last_frame_id:
        raise NonMonotoneFrameError(
            f"Frame id {frame_id} does not follow {last_frame_id}", raw, frame_id
        )
    return FramePacket(frame_id, capture_ts, tuple(commands))


def encode_ack(ack):
    """Encode an acknowledgement line."""
    if ack.status is AckStatus.MALFORMED:
        return f"{ACK_MAGIC} F=? S=MALFORMED\n".encode('ascii')
    if ack.status is AckStatus.PARTIAL:
        return f"{ACK_MAGIC} F={ack.frame_id} S=PARTIAL {ack.rejected}\n".encode('ascii')
    return f"{ACK_MAGIC} F={ack.frame_id} S=ACCEPTED\n".encode('ascii')


def decode_ack(line):
    """
    Decode an acknowledgement line.

    Raises:
        ProtocolError: If the line is not a valid acknowledgement
    """
    raw = bytes(line)
    if not raw.endswith(b'\n'):
        raise FramingError("Ack is not newline terminated", raw)
    try:
        text = raw[:-1].decode('ascii')
    except UnicodeDecodeError:
        raise FramingError("Ack is not ASCII", raw)
    match = _ACK.fullmatch(text)
    if not match:
        raise GrammarError(f"Malformed ack {text!r}", raw)

    frame_text, status_text, rejected = match.groups()
    if status_text == 'MALFORMED':
        if frame_text != '?':
            raise GrammarError("Malformed acks carry no frame id", raw)
        return Ack.malformed()
    if frame_text == '?':
        raise GrammarError("Ack without a frame id", raw)
    if rejected is not None:
        return Ack(int(frame_text), AckStatus.PARTIAL, int(rejected))
    return Ack(int(frame_text), AckStatus.ACCEPTED)


class SessionDecoder:
    """
    Per-session decoder that enforces increasing frame ids.

    Malformed lines do not advance the session's frame id.
    """

    def __init__(self, paddle_count=DEFAULT_PADDLE_COUNT):
        self.paddle_count = paddle_count
        self.last_frame_id = None

    def decode(self, line):
        packet = decode(line, self.last_frame_id, self.paddle_count)
        self.last_frame_id = packet.frame_id
        return packet

    def reset(self):
        self.last_frame_id = None


def reason_of(error):
    """Stable reason code of a decoding failure."""
    if isinstance(error, ProtocolError):
        return error.reason
    return 'grammar'
