"""1 Hz telemetry plane: records, publisher/subscriber fan-out, socket and replay endpoints."""

from __future__ import annotations

import collections
import os
import socket
import socketserver
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Union

from . import wire
from .errors import Disconnected, MalformedLine
from .spectrum import POWER_FLOOR_DBM, TOL

TELEMETRY_FEATURES = ("cfo", "cdc", "dgd", "rx_power", "osnr", "prefec_ber", "pdl")
DEFAULT_BUFFER = 1024


@wire.register("telemetry")
@dataclass(frozen=True)
class TelemetryRecord:
    timestamp: int
    cfo: float
    cdc: float
    dgd: float
    rx_power: float
    osnr: float
    prefec_ber: float
    pdl: float

    def __post_init__(self):
        if not 0.0 <= self.prefec_ber <= 0.5:
            raise MalformedLine(f"prefec_ber {self.prefec_ber} outside [0, 0.5]")

    def features(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in TELEMETRY_FEATURES)

    def to_fields(self) -> dict:
        d = {name: getattr(self, name) for name in TELEMETRY_FEATURES}
        d["timestamp"] = self.timestamp
        return d

    @classmethod
    def from_fields(cls, body: dict) -> "TelemetryRecord":
        wire.expect_keys(body, ("timestamp",) + TELEMETRY_FEATURES)
        return cls(wire.as_int(body["timestamp"]),
                   *(wire.as_float(body[name]) for name in TELEMETRY_FEATURES))


@wire.register("ocm")
@dataclass(frozen=True)
class OcmSnapshot:
    timestamp: int
    user_id: str
    add_port_total: float
    slice_powers: tuple[float, ...]

    def __post_init__(self):
        if not isinstance(self.slice_powers, tuple):
            object.__setattr__(self, "slice_powers", tuple(float(p) for p in self.slice_powers))
        if any(p < POWER_FLOOR_DBM - TOL for p in self.slice_powers):
            raise MalformedLine("slice power below the OCM floor")

    def to_fields(self) -> dict:
        return {"timestamp": self.timestamp, "user_id": self.user_id,
                "add_port_total": self.add_port_total,
                "slice_powers": list(self.slice_powers)}

    @classmethod
    def from_fields(cls, body: dict) -> "OcmSnapshot":
        wire.expect_keys(body, ("timestamp", "user_id", "add_port_total", "slice_powers"))
        powers = body["slice_powers"]
        if not isinstance(powers, list) or not powers:
            raise MalformedLine("slice_powers must be a non-empty list")
        return cls(wire.as_int(body["timestamp"]), wire.as_str(body["user_id"]),
                   wire.as_float(body["add_port_total"]),
                   tuple(wire.as_float(p) for p in powers))


StreamMessage = Union[TelemetryRecord, OcmSnapshot]


def encode_record(record) -> str:
    return wire.encode(record)


def decode_record(line: str | bytes):
    return wire.decode(line)


def _order_key(msg) -> tuple:
    # telemetry precedes OCM snapshots within a tick; snapshots by user id
    if isinstance(msg, TelemetryRecord):
        return (msg.timestamp, 0, "")
    return (msg.timestamp, 1, getattr(msg, "user_id", ""))


class Subscription:
    """One consumer's bounded view of a publisher, starting at the live edge.

    Overflowing the buffer disconnects the subscription instead of blocking
    the producer.  Iteration ends cleanly once the publisher is closed and
    the buffer is drained.
    """

    def __init__(self, maxsize: int = DEFAULT_BUFFER):
        if maxsize < 1:
            raise ValueError("buffer size must be >= 1")
        self.maxsize = maxsize
        self._queue: collections.deque = collections.deque()
        self._cond = threading.Condition()
        self._closed = False
        self.disconnected = False

    def _push(self, msg) -> None:
        with self._cond:
            if self.disconnected or self._closed:
                return
            if len(self._queue) >= self.maxsize:
                self.disconnected = True
                self._queue.clear()
            else:
                self._queue.append(msg)
            self._cond.notify_all()

    def _close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def get(self, timeout: float | None = None):
        """Next message; raises ``StopIteration`` at end of stream."""
        with self._cond:
            ok = self._cond.wait_for(
                lambda: self._queue or self._closed or self.disconnected, timeout)
            if self.disconnected:
                raise Disconnected("subscriber overflowed its buffer")
            if not ok:
                raise TimeoutError("no message within timeout")
            if self._queue:
                return self._queue.popleft()
            raise StopIteration

    def drain(self) -> list:
        """Every buffered message, without blocking."""
        with self._cond:
            if self.disconnected:
                raise Disconnected("subscriber overflowed its buffer")
            items = list(self._queue)
            self._queue.clear()
            return items

    @property
    def finished(self) -> bool:
        with self._cond:
            return self._closed and not self._queue

    def __iter__(self) -> Iterator:
        while True:
            try:
                yield self.get()
            except StopIteration:
                return


class Publisher:
    """Single-producer fan-out of telemetry and OCM messages in timestamp order."""

    def __init__(self, buffer_size: int = DEFAULT_BUFFER):
        self.buffer_size = buffer_size
        self._subs: list[Subscription] = []
        self._lock = threading.Lock()
        self._last_key: tuple | None = None
        self._last_telemetry_ts: int | None = None
        self.closed = False

    def subscribe(self, buffer_size: int | None = None) -> Subscription:
        sub = Subscription(buffer_size or self.buffer_size)
        with self._lock:
            if self.closed:
                sub._close()
            else:
                self._subs.append(sub)
        return sub

    def publish(self, msg) -> None:
        key = _order_key(msg)
        with self._lock:
            if self.closed:
                raise RuntimeError("publisher closed")
            if self._last_key is not None and key <= self._last_key:
                raise ValueError(f"out-of-order or duplicate message {key} after {self._last_key}")
            if isinstance(msg, TelemetryRecord):
                if self._last_telemetry_ts is not None and msg.timestamp != self._last_telemetry_ts + 1:
                    raise ValueError("telemetry cadence must be exactly 1 s")
                self._last_telemetry_ts = msg.timestamp
            self._last_key = key
            subs = [s for s in self._subs if not s.disconnected]
            self._subs = subs
        for sub in subs:
            sub._push(msg)

    def close(self) -> None:
        with self._lock:
            self.closed = True
            subs, self._subs = self._subs, []
        for sub in subs:
            sub._close()


# socket mode ---------------------------------------------------------------

class _StreamHandler(socketserver.StreamRequestHandler):
    def handle(self):
        sub = self.server.publisher.subscribe()
        self.server.subscribed.set()
        try:
            for msg in sub:
                self.wfile.write((wire.encode(msg) + "\n").encode())
                self.wfile.flush()
        except (Disconnected, BrokenPipeError, ConnectionResetError):
            pass


class StreamServer(socketserver.ThreadingTCPServer):
    """Serve a publisher over local TCP; every connection is a fresh subscriber."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, publisher: Publisher, host: str = "127.0.0.1", port: int = 0):
        self.publisher = publisher
        self.subscribed = threading.Event()
        super().__init__((host, port), _StreamHandler)
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"tcp://{host}:{port}"

    def start(self) -> "StreamServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


def _iter_socket(host: str, port: int) -> Iterator:
    with socket.create_connection((host, port)) as conn:
        with conn.makefile("rb") as fh:
            for raw in fh:
                if not raw.endswith(b"\n"):
                    raise Disconnected("stream ended mid-line")
                yield wire.decode(raw)


def read_replay(path: str | os.PathLike) -> Iterator:
    with open(path, "r", encoding="utf-8") as fh:
        yield from wire.decode_lines(fh)


def write_replay(path: str | os.PathLike, messages) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for msg in messages:
            fh.write(wire.encode(msg) + "\n")
            n += 1
    return n


def subscribe(endpoint) -> Iterator:
    """Ordered message iterator for a publisher, ``tcp://host:port`` URL or replay file."""
    if isinstance(endpoint, Publisher):
        return iter(endpoint.subscribe())
    if isinstance(endpoint, str) and endpoint.startswith("tcp://"):
        host, _, port = endpoint[len("tcp://"):].rpartition(":")
        return _iter_socket(host, int(port))
    if isinstance(endpoint, (str, os.PathLike)) and Path(endpoint).exists():
        return read_replay(endpoint)
    raise Disconnected(f"endpoint {endpoint!r} is not live")
