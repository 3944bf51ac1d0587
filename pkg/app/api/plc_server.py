"""
PLC emulator.

This module hosts the PLC side of the wire protocol. ``PlcSession`` holds
the protocol logic (decode, finite state machine, scheduling, operations
records) and is driven with explicit timestamps, so the simulator can run it
on virtual time. ``PlcServer`` serves a session over TCP with two threads:
a reader that owns the socket and a scheduler thread that owns the session,
connected by a queue. ``PlcClient`` is the inference host's end.
"""

import logging
import queue
import socket
import threading
import time
from collections import defaultdict, deque

from app.api.error_handling import ArisError, PlcConnectionError, handle_exception, retry
from app.api.plc_wire import Ack, SessionDecoder, decode_ack, encode, encode_ack, reason_of
from app.models.control import CommandOutcome
from app.models.report import OpRecord
from app.services.control_service import Scheduler

# Configure logging
logger = logging.getLogger(__name__)

MAX_LINE_BYTES = 65536


def _skip_rest_of_line(reader):
    """Discard the remainder of an oversize line up to its newline."""
    while True:
        chunk = reader.readline(MAX_LINE_BYTES)
        if not chunk or chunk.endswith(b'\n'):
            return


def _printable(raw):
    """One-line ASCII rendering of a raw wire line for the operations log."""
    text = raw.rstrip(b'\n').decode('ascii', errors='backslashreplace')
    return ''.join(c if c.isprintable() else f"\\x{ord(c):02x}" for c in text)


class PlcSession:
    """
    Protocol handler of the PLC.

    Every decoded command and every breach produces exactly one operations
    record, handed to ``sink`` once its outcome is final.

    Args:
        scheduler (Scheduler): The paddle scheduler this session feeds
        sink (callable, optional): Receives finalized OpRecords
        classify (callable, optional): fragment_id -> class label for records
    """

    def __init__(self, scheduler, sink=None, classify=None):
        self.scheduler = scheduler
        self.decoder = SessionDecoder(scheduler.layout.paddle_count)
        self.records = []
        self.sink = sink if sink is not None else self.records.append
        self.classify = classify
        self.packets_received = 0
        self.acks_sent = 0
        self._pending = defaultdict(deque)

    def _material(self, fragment_id):
        if self.classify is None or fragment_id is None:
            return None
        return self.classify(fragment_id)

    def handle_line(self, raw, now):
        """
        Receive, parse and schedule one wire line.

        Args:
            raw (bytes): The line as read from the transport
            now (float): Receipt time in ms

        Returns:
            Ack: The acknowledgement to send back
        """
        scheduler = self.scheduler
        scheduler.begin_receive()
        self.packets_received += 1
        scheduler.begin_parse()
        try:
            packet = self.decoder.decode(raw)
        except ArisError as e:
            reason = reason_of(e)
            scheduler.malformed(reason, raw)
            self.sink(OpRecord(
                CommandOutcome.MALFORMED,
                frame_id=getattr(e, 'frame_id', None),
                packet_ts=int(now),
                breach=True,
                reason=reason,
                raw_line=_printable(raw)
            ))
            self.acks_sent += 1
            return Ack.malformed()

        scheduler.parsed()
        results = []
        for cmd in packet.commands:
            result = scheduler.enqueue(cmd, now)
            results.append(result)
            record = OpRecord(
                CommandOutcome.PENDING,
                fragment_id=cmd.fragment_id,
                material=self._material(cmd.fragment_id),
                frame_id=packet.frame_id,
                packet_ts=packet.capture_ts_ms,
                scheduled_ts=cmd.flick_at,
                paddle=cmd.paddle_index
            )
            if result.accepted:
                self._pending[(cmd.paddle_index, cmd.fragment_id)].append(record)
            else:
                record.outcome = CommandOutcome.REJECTED
                record.breach = result.breach
                record.reason = result.reason.value
                self.sink(record)
        scheduler.scheduled()

        self.acks_sent += 1
        return Ack.for_results(packet.frame_id, results)

    def tick(self, now):
        """Advance the scheduler and finalize the records of fired actuations."""
        events = self.scheduler.tick(now)
        for event in events:
            for position, fragment_id in enumerate(event.fragment_ids):
                waiting = self._pending.get((event.paddle, fragment_id))
                if not waiting:
                    continue
                record = waiting.popleft()
                record.outcome = CommandOutcome.EXECUTED if position == 0 else CommandOutcome.MERGED
                record.actuated_ts = event.start
                self.sink(record)
        return events

    def transport_lost(self, partial, now):
        """A line was cut off by the transport: one breach, FSM back to Idle."""
        self.scheduler.reset('transport_lost')
        self.decoder.reset()
        self.sink(OpRecord(
            CommandOutcome.MALFORMED,
            packet_ts=int(now),
            breach=True,
            reason='framing',
            raw_line=_printable(partial)
        ))

    def new_connection(self):
        """Frame ids restart with every client connection."""
        self.decoder.reset()

    def close(self):
        """Finalize the records of commands that never fired."""
        for key in sorted(self._pending, key=lambda k: (k[0], k[1])):
            for record in self._pending[key]:
                self.sink(record)
        self._pending.clear()

    def counters(self):
        state = self.scheduler.state
        return {
            'fsm': state.fsm.value,
            'packets_received': self.packets_received,
            'acks_sent': self.acks_sent,
            'commands_accepted': state.commands_accepted,
            'commands_merged': state.commands_merged,
            'commands_rejected': state.commands_rejected,
            'flicks_executed': state.flicks_executed,
            'breaches': state.breaches,
            'pending': state.pending
        }


class PlcServer:
    """
    Single-client TCP server hosting a PLC session.

    The reader thread never touches the scheduler: it hands each line to the
    scheduler thread through a queue and waits for the acknowledgement. The
    scheduler thread ticks at least once per ``tick_ms`` so acks are answered
    within one tick period.

    Args:
        host (str): Address to bind
        port (int): Port to bind (0 picks a free one)
        layout (PaddleLayout): Paddle array of the virtual sorter
        tick_ms (float): Scheduler tick period
        clock (callable, optional): Returns the current time in ms
        sink (callable, optional): Receives finalized OpRecords
    """

    def __init__(self, host, port, layout, tick_ms=5.0, clock=None, sink=None):
        self.host = host
        self.port = port
        self.tick_ms = tick_ms
        self.session = PlcSession(Scheduler(layout), sink=sink)
        self._start = time.monotonic()
        self.clock = clock if clock is not None else self._monotonic_ms
        self._inbox = queue.Queue()
        self._stop = threading.Event()
        self._socket = None
        self._client = None
        self._threads = []
        self._stopped = False

    def _monotonic_ms(self):
        return (time.monotonic() - self._start) * 1000.0

    @property
    def address(self):
        return self._socket.getsockname() if self._socket else (self.host, self.port)

    def start(self):
        """
        Bind the endpoint and start the reader and scheduler threads.

        Raises:
            PlcConnectionError: If the endpoint cannot be bound
        """
        server_socket = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server_socket.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            server_socket.bind((self.host, self.port))
            server_socket.listen(1)
        except OSError as e:
            server_socket.close()
            raise PlcConnectionError(f"Cannot listen on {self.host}:{self.port}: {e}") from e
        server_socket.settimeout(0.2)
        self._socket = server_socket

        for target, name in ((self._accept_loop, 'plc-reader'), (self._scheduler_loop, 'plc-scheduler')):
            thread = threading.Thread(target=target, name=name, daemon=True)
            thread.start()
            self._threads.append(thread)
        logger.info(f"PLC emulator listening on {self.address[0]}:{self.address[1]}")
        return self

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                client, address = self._socket.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            logger.info(f"Inference host connected from {address}")
            self._client = client
            self._inbox.put(('connect', None, None))
            try:
                self._serve_client(client)
            except OSError as e:
                logger.warning(f"Connection from {address} failed: {e}")
            finally:
                client.close()
                self._client = None
                logger.info(f"Connection closed from {address}")

    def _serve_client(self, client):
        client.settimeout(None)
        reader = client.makefile('rb')
        replies = queue.Queue(maxsize=1)
        while not self._stop.is_set():
            line = reader.readline(MAX_LINE_BYTES)
            if not line:
                return
            if not line.endswith(b'\n') and len(line) < MAX_LINE_BYTES:
                self._inbox.put(('lost', line, None))
                return
            self._inbox.put(('line', line, replies))
            client.sendall(encode_ack(replies.get()))
            if not line.endswith(b'\n'):
                _skip_rest_of_line(reader)

    def _scheduler_loop(self):
        period = self.tick_ms / 1000.0
        while not self._stop.is_set():
            try:
                kind, payload, replies = self._inbox.get(timeout=period)
            except queue.Empty:
                kind = None
            now = self.clock()
            try:
                if kind == 'line':
                    replies.put(self.session.handle_line(payload, now))
                elif kind == 'lost':
                    self.session.transport_lost(payload, now)
                elif kind == 'connect':
                    self.session.new_connection()
                self.session.tick(now)
            except ArisError as e:
                handle_exception(e, 'PLC scheduler', kind or 'tick', {'now_ms': now})
                # The reader is waiting for an answer
                if kind == 'line' and replies.empty():
                    replies.put(Ack.malformed())

    def request_stop(self):
        """Ask ``serve_forever`` to return; safe to call from a signal handler."""
        self._stop.set()

    def stop(self):
        """Stop both threads and finalize pending operations records."""
        if self._stopped:
            return
        self._stopped = True
        self._stop.set()
        if self._client is not None:
            try:
                self._client.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        if self._socket is not None:
            self._socket.close()
        for thread in self._threads:
            thread.join(timeout=2.0)
        self.session.tick(self.clock())
        self.session.close()
        logger.info(f"PLC emulator stopped: {self.session.counters()}")

    def serve_forever(self):
        """Block until ``request_stop`` or ``stop`` is called, then shut down."""
        if self._socket is None:
            self.start()
        while not self._stop.wait(timeout=0.5):
            pass
        self.stop()

    def __enter__(self):
        return self.start()

    def __exit__(self, exc_type, exc, tb):
        self.stop()


class PlcClient:
    """
    Inference-host end of the wire protocol.

    Args:
        host (str): PLC emulator address
        port (int): PLC emulator port
        timeout (float): Socket timeout in seconds
        paddle_count (int): Number of paddles, for encoding checks
    """

    def __init__(self, host, port, timeout=5.0, paddle_count=64):
        self.host = host
        self.port = port
        self.timeout = timeout
        self.paddle_count = paddle_count
        self._socket = None
        self._reader = None

    @retry(PlcConnectionError, tries=4, delay=0.2, backoff=2, logger_name=__name__)
    def connect(self):
        """
        Open the connection, retrying with exponential backoff.

        Raises:
            PlcConnectionError: If the emulator cannot be reached
        """
        try:
            self._socket = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as e:
            raise PlcConnectionError(f"Cannot reach PLC at {self.host}:{self.port}: {e}") from e
        self._reader = self._socket.makefile('rb')
        return self

    def send_raw(self, line):
        """Send one raw line and wait for its acknowledgement."""
        if self._socket is None:
            raise PlcConnectionError("Client is not connected")
        try:
            self._socket.sendall(line)
            reply = self._reader.readline(MAX_LINE_BYTES)
        except OSError as e:
            raise PlcConnectionError(f"Connection to PLC lost: {e}") from e
        if not reply:
            raise PlcConnectionError("PLC closed the connection")
        return decode_ack(reply)

    def send(self, packet):
        """Encode and send one packet, returning its Ack."""
        return self.send_raw(encode(packet, self.paddle_count))

    def close(self):
        if self._reader is not None:
            self._reader.close()
        if self._socket is not None:
            self._socket.close()
        self._socket = None
        self._reader = None

    def __enter__(self):
        return self.connect()

    def __exit__(self, exc_type, exc, tb):
        self.close()
