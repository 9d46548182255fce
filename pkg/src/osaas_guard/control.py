"""Command channel to the simulated ingress ROADMs (VOA set, block, unblock)."""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from dataclasses import dataclass

import numpy as np

from . import wire
from .errors import Disconnected, UnknownUser
from .simulator import VOA_MAX_DB, SimState

SET_VOA = "set_voa"
BLOCK = "block"
UNBLOCK = "unblock"
VERBS = (SET_VOA, BLOCK, UNBLOCK)

APPLIED = "applied"
REJECTED = "rejected"


@wire.register("command")
@dataclass(frozen=True)
class ControlCommand:
    """``slice=None`` targets the whole user; a whole-user ``set_voa`` adds ``db`` to every slice."""
    seq: int
    user_id: str
    verb: str
    timestamp: int
    slice: int | None = None
    db: float | None = None

    def __post_init__(self):
        if self.verb not in VERBS:
            raise ValueError(f"unknown verb {self.verb}")
        if self.verb == SET_VOA and self.db is None:
            raise ValueError("set_voa needs a dB value")

    def to_fields(self) -> dict:
        return {"seq": self.seq, "user_id": self.user_id, "verb": self.verb,
                "timestamp": self.timestamp, "slice": self.slice, "db": self.db}

    @classmethod
    def from_fields(cls, b: dict) -> "ControlCommand":
        wire.expect_keys(b, ("seq", "user_id", "verb", "timestamp", "slice", "db"))
        return cls(wire.as_int(b["seq"]), wire.as_str(b["user_id"]), wire.as_str(b["verb"]),
                   wire.as_int(b["timestamp"]),
                   None if b["slice"] is None else wire.as_int(b["slice"]),
                   None if b["db"] is None else wire.as_float(b["db"]))


@wire.register("ack")
@dataclass(frozen=True)
class ControlAck:
    seq: int
    status: str
    effective_time: int
    reason: str | None = None

    @property
    def applied(self) -> bool:
        return self.status == APPLIED

    def to_fields(self) -> dict:
        return {"seq": self.seq, "status": self.status, "effective_time": self.effective_time,
                "reason": self.reason}

    @classmethod
    def from_fields(cls, b: dict) -> "ControlAck":
        wire.expect_keys(b, ("seq", "status", "effective_time", "reason"))
        if b["status"] not in (APPLIED, REJECTED):
            raise ValueError(f"unknown ack status {b['status']}")
        return cls(wire.as_int(b["seq"]), b["status"], wire.as_int(b["effective_time"]),
                   None if b["reason"] is None else wire.as_str(b["reason"]))


def _reject(cmd: ControlCommand, reason: str, state: SimState) -> ControlAck:
    return ControlAck(cmd.seq, REJECTED, max(state.time, cmd.timestamp), reason)


def apply(command: ControlCommand, state: SimState) -> tuple[ControlAck, SimState]:
    """Apply one command to the ROADM state; the effect shows from the next emitted tick."""
    try:
        user = state.user(command.user_id)
    except UnknownUser:
        return _reject(command, "UnknownTarget", state), state
    if command.slice is not None and not 0 <= command.slice < user.n_slices:
        return _reject(command, "UnknownTarget", state), state
    target = slice(None) if command.slice is None else command.slice

    if command.verb == SET_VOA:
        if command.slice is None:
            new = user.voa + command.db
        else:
            new = np.array(command.db)
        if not (0.0 <= command.db <= VOA_MAX_DB and np.all((new >= 0.0) & (new <= VOA_MAX_DB))):
            return _reject(command, "OutOfRange", state), state
        user.voa[target] = new
    elif command.verb == BLOCK:
        user.blocked[target] = True
    else:
        user.blocked[target] = False
    return ControlAck(command.seq, APPLIED, max(state.time, command.timestamp + 1)), state


class ControlSession:
    """One controller's ordered, acknowledged command channel to one simulator.

    Every submitted command gets exactly one ack, in submission order.
    Sequence numbers must strictly increase; a repeated or stale number is
    rejected without touching the state.
    """

    def __init__(self, state: SimState, lock: threading.Lock | None = None):
        self.state = state
        self.lock = lock or threading.Lock()
        self._last_seq: int | None = None
        self._seen: set[int] = set()
        self.log: list[ControlCommand] = []
        self.acks: list[ControlAck] = []
        self.closed = False

    def submit(self, command: ControlCommand) -> ControlAck:
        if self.closed:
            raise Disconnected("control session closed")
        with self.lock:
            if command.seq in self._seen:
                ack = _reject(command, "DuplicateSeq", self.state)
            elif self._last_seq is not None and command.seq < self._last_seq:
                ack = _reject(command, "OutOfOrderSeq", self.state)
            else:
                self._seen.add(command.seq)
                self._last_seq = command.seq
                ack, _ = apply(command, self.state)
            self.log.append(command)
            self.acks.append(ack)
        return ack

    def close(self) -> None:
        self.closed = True


class CommandIssuer:
    """Allocates sequence numbers for one controller."""

    def __init__(self, session, start: int = 1):
        self.session = session
        self._next = start

    def send(self, user_id: str, verb: str, timestamp: int, slice: int | None = None,
             db: float | None = None) -> tuple[ControlCommand, ControlAck]:
        cmd = ControlCommand(self._next, user_id, verb, timestamp, slice, db)
        self._next += 1
        return cmd, self.session.submit(cmd)


def replay_log(commands, state: SimState) -> SimState:
    session = ControlSession(state)
    for cmd in commands:
        session.submit(cmd)
    return state


# socket mode ---------------------------------------------------------------

class _ControlHandler(socketserver.StreamRequestHandler):
    def handle(self):
        session = ControlSession(self.server.state, self.server.lock)
        for raw in self.rfile:
            try:
                cmd = wire.decode(raw)
            except wire.MalformedLine as exc:
                self.wfile.write((json.dumps({"error": str(exc)}) + "\n").encode())
                continue
            ack = session.submit(cmd)
            self.wfile.write((wire.encode(ack) + "\n").encode())
            self.wfile.flush()


class ControlServer(socketserver.ThreadingTCPServer):
    """Serve the control session for a simulator state over local TCP."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, state: SimState, lock: threading.Lock | None = None,
                 host: str = "127.0.0.1", port: int = 0):
        self.state = state
        self.lock = lock or threading.Lock()
        super().__init__((host, port), _ControlHandler)
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"tcp://{host}:{port}"

    def start(self) -> "ControlServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


class ControlClient:
    """Socket-side counterpart of :class:`ControlSession` with the same ``submit`` API."""

    def __init__(self, endpoint: str, timeout: float = 5.0):
        host, _, port = endpoint[len("tcp://"):].rpartition(":")
        self._sock = socket.create_connection((host, int(port)), timeout=timeout)
        self._rfile = self._sock.makefile("rb")

    def submit(self, command: ControlCommand) -> ControlAck:
        try:
            self._sock.sendall((wire.encode(command) + "\n").encode())
            line = self._rfile.readline()
        except OSError as exc:
            raise Disconnected(str(exc)) from exc
        if not line:
            raise Disconnected("control server closed the session")
        return wire.decode(line)

    def close(self) -> None:
        self._rfile.close()
        self._sock.close()
