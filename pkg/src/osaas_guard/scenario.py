"""Line-system configuration and timed scenario scripts.

A scenario file is a JSON document::

    {
      "schema": "osaas-scenario/1",
      "name": "demo", "seed": 7, "duration": 60,
      "topology": {"roadms": [...], "ila_count": 2, "span_lengths_km": [91, 91, 91]},
      "probe": {"center": -25.0, "width": 37.5, "launch_power": 0.0,
                "add_node": "Node-1", "drop_node": "Node-5"},
      "users": [{"user_id": "user-1", "start_offset": 0.0, "width": 300.0,
                 "add_node": "Node-1", "drop_node": "Node-5",
                 "sla": {"min_power": -2.2, "max_power": 11.8,
                         "min_psd": -27.0, "max_psd": -10.8},
                 "signals": [{"kind": "coherent", "center": 25.0, "width": 37.5,
                              "launch_power": -1.0, "symbol_rate": 32.0,
                              "modulation": "16QAM"}, ...]}, ...],
      "constants": {... ImpairmentConstants fields, all optional ...},
      "events": [{"t": 20, "type": "add_ook", "user": "user-1", "center": 75.0,
                  "power": 2.0, "width": 20.0, "bit_rate": 10.0},
                 {"t": 30, "type": "power_offset", "user": "user-2", "offset_db": 3.0},
                 {"t": 40, "type": "repack", "user": "user-3", "n_channels": 2},
                 {"t": 50, "type": "remove_ook", "user": "user-1"}]
    }

Frequencies are GHz offsets from the 191.3 THz grid anchor.  Event times are
integer simulated seconds.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Union

from .errors import ScenarioError
from .impairments import ImpairmentConstants
from .spectrum import (OOK_DEFAULT_BIT_RATE, OOK_DEFAULT_WIDTH, SLICE_WIDTH, Coherent,
                       Ook, Signal, SlaLimits, SpectralWindow, sum_power_dbm,
                       windows_disjoint)

SCHEMA = "osaas-scenario/1"
NOMINAL_CHANNEL_WIDTH = 37.5


@dataclass(frozen=True)
class Topology:
    roadms: tuple[str, ...] = ("Node-1", "Node-2", "Node-4", "Node-5")
    ila_count: int = 2
    span_lengths_km: tuple[float, ...] = (91.0, 91.0, 91.0)

    def __post_init__(self):
        if len(self.span_lengths_km) != len(self.roadms) - 1:
            raise ScenarioError("need one span between each pair of consecutive ROADMs")

    @property
    def total_length_km(self) -> float:
        return float(sum(self.span_lengths_km))

    def node_index(self, name: str) -> int:
        try:
            return self.roadms.index(name)
        except ValueError:
            raise ScenarioError(f"unknown node {name!r}") from None

    def spans(self, add_node: str, drop_node: str) -> frozenset[int]:
        a, d = self.node_index(add_node), self.node_index(drop_node)
        if not a < d:
            raise ScenarioError(f"add node {add_node} must precede drop node {drop_node}")
        return frozenset(range(a, d))


@dataclass(frozen=True)
class ProbeConfig:
    center: float = -25.0
    width: float = 37.5
    launch_power: float = 0.0
    add_node: str = "Node-1"
    drop_node: str = "Node-5"


@dataclass(frozen=True)
class UserConfig:
    user_id: str
    window: SpectralWindow
    sla: SlaLimits
    add_node: str
    drop_node: str
    signals: tuple[Signal, ...]


def channel_layout(window: SpectralWindow, n: int, per_channel_power: float,
                   nominal_width: float = NOMINAL_CHANNEL_WIDTH) -> tuple[Signal, ...]:
    """``n`` equal coherent channels spread evenly across ``window``.

    Channel edges are snapped to the 6.25 GHz slice grid so that clean
    spectra occupy whole slices only.
    """
    if n < 1:
        raise ScenarioError("need at least one channel")
    spacing = window.width / n
    n_sl = max(1, math.floor(min(nominal_width, 0.75 * spacing) / SLICE_WIDTH + 1e-9))
    width = n_sl * SLICE_WIDTH
    out = []
    for k in range(n):
        low = window.start_offset + round((k * spacing + 0.5 * (spacing - width)) / SLICE_WIDTH) * SLICE_WIDTH
        out.append(Signal.coherent(low + 0.5 * width, per_channel_power, width=width))
    return tuple(out)


def _user(uid, start, width, sla, add, drop, n_channels, power):
    window = SpectralWindow(start, width)
    return UserConfig(uid, window, sla, add, drop, channel_layout(window, n_channels, power))


SLA_WIDE = SlaLimits(-2.2, 11.8, -27.0, -10.8)
SLA_NARROW = SlaLimits(-4.0, 9.8, -27.0, -10.8)


def default_users() -> tuple[UserConfig, ...]:
    return (
        _user("user-1", 0.0, 300.0, SLA_WIDE, "Node-1", "Node-5", 6, -1.0),
        _user("user-2", 300.0, 200.0, SLA_NARROW, "Node-1", "Node-5", 4, -1.0),
        _user("user-3", 500.0, 300.0, SLA_WIDE, "Node-2", "Node-4", 6, -1.0),
    )


# events ------------------------------------------------------------------

@dataclass(frozen=True)
class AddOok:
    t: int
    user: str
    center: float
    power: float
    width: float = OOK_DEFAULT_WIDTH
    bit_rate: float = OOK_DEFAULT_BIT_RATE
    type = "add_ook"

    def signal(self) -> Signal:
        return Signal.ook(self.center, self.power, self.width, self.bit_rate)


@dataclass(frozen=True)
class RemoveOok:
    t: int
    user: str
    type = "remove_ook"


@dataclass(frozen=True)
class PowerOffset:
    t: int
    user: str
    offset_db: float
    type = "power_offset"


@dataclass(frozen=True)
class Repack:
    t: int
    user: str
    n_channels: int
    type = "repack"


ScenarioEvent = Union[AddOok, RemoveOok, PowerOffset, Repack]
_EVENT_TYPES = {cls.type: cls for cls in (AddOok, RemoveOok, PowerOffset, Repack)}


def event_to_dict(ev: ScenarioEvent) -> dict:
    d = {"type": ev.type}
    d.update(ev.__dict__)
    return d


def event_from_dict(d: dict) -> ScenarioEvent:
    d = dict(d)
    cls = _EVENT_TYPES.get(d.pop("type", None))
    if cls is None:
        raise ScenarioError(f"unknown event type in {d}")
    try:
        ev = cls(**d)
    except TypeError as exc:
        raise ScenarioError(str(exc)) from None
    if not isinstance(ev.t, int) or ev.t < 0:
        raise ScenarioError("event time must be a non-negative integer")
    return ev


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    seed: int = 0
    duration: int = 60
    topology: Topology = field(default_factory=Topology)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    users: tuple[UserConfig, ...] = field(default_factory=default_users)
    constants: ImpairmentConstants = field(default_factory=ImpairmentConstants)
    events: tuple[ScenarioEvent, ...] = ()

    def __post_init__(self):
        if self.duration < 0:
            raise ScenarioError("duration must be >= 0")
        ids = [u.user_id for u in self.users]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate user ids")
        if not windows_disjoint([u.window for u in self.users]):
            raise ScenarioError("user windows overlap")
        for u in self.users:
            self.topology.spans(u.add_node, u.drop_node)
            u.window.n_slices  # raises on misaligned width
        self.topology.spans(self.probe.add_node, self.probe.drop_node)
        object.__setattr__(self, "events", tuple(sorted(self.events, key=lambda e: e.t)))

    def user(self, user_id: str) -> UserConfig:
        for u in self.users:
            if u.user_id == user_id:
                return u
        from .errors import UnknownUser
        raise UnknownUser(user_id)

    @property
    def user_ids(self) -> list[str]:
        return [u.user_id for u in self.users]

    def with_events(self, events, **changes) -> "Scenario":
        return replace(self, events=tuple(events), **changes)

    def nominal_total(self, user_id: str) -> float:
        return sum_power_dbm([s.launch_power for s in self.user(user_id).signals])

    # serialisation --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "name": self.name,
            "seed": self.seed,
            "duration": self.duration,
            "topology": {"roadms": list(self.topology.roadms),
                         "ila_count": self.topology.ila_count,
                         "span_lengths_km": list(self.topology.span_lengths_km)},
            "probe": dict(self.probe.__dict__),
            "users": [_user_to_dict(u) for u in self.users],
            "constants": self.constants.to_dict(),
            "events": [event_to_dict(e) for e in self.events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if d.get("schema") != SCHEMA:
            raise ScenarioError(f"unsupported scenario schema {d.get('schema')!r}")
        try:
            topo = d.get("topology", {})
            topology = Topology(tuple(topo.get("roadms", Topology.roadms)),
                                int(topo.get("ila_count", 2)),
                                tuple(float(x) for x in topo.get("span_lengths_km", Topology.span_lengths_km)))
            probe = ProbeConfig(**d.get("probe", {}))
            users = tuple(_user_from_dict(u) for u in d["users"]) if "users" in d else default_users()
            constants = ImpairmentConstants.from_dict(d.get("constants", {}))
            events = tuple(event_from_dict(e) for e in d.get("events", []))
            return cls(d.get("name", "scenario"), int(d.get("seed", 0)), int(d.get("duration", 60)),
                       topology, probe, users, constants, events)
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"invalid scenario: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Scenario":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.loads(fh.read())


def _signal_to_dict(s: Signal) -> dict:
    d = {"center": s.center, "width": s.width, "launch_power": s.launch_power}
    if isinstance(s.kind, Ook):
        d.update(kind="ook", bit_rate=s.kind.bit_rate)
    else:
        d.update(kind="coherent", symbol_rate=s.kind.symbol_rate, modulation=s.kind.modulation)
    return d


def _signal_from_dict(d: dict) -> Signal:
    if d["kind"] == "ook":
        return Signal(Ook(float(d.get("bit_rate", OOK_DEFAULT_BIT_RATE))), float(d["center"]),
                      float(d.get("width", OOK_DEFAULT_WIDTH)), float(d["launch_power"]))
    if d["kind"] == "coherent":
        return Signal(Coherent(float(d.get("symbol_rate", 32.0)), d.get("modulation", "16QAM")),
                      float(d["center"]), float(d["width"]), float(d["launch_power"]))
    raise ScenarioError(f"unknown signal kind {d['kind']!r}")


def _user_to_dict(u: UserConfig) -> dict:
    return {"user_id": u.user_id, "start_offset": u.window.start_offset, "width": u.window.width,
            "add_node": u.add_node, "drop_node": u.drop_node, "sla": dict(u.sla.__dict__),
            "signals": [_signal_to_dict(s) for s in u.signals]}


def _user_from_dict(d: dict) -> UserConfig:
    return UserConfig(d["user_id"], SpectralWindow(float(d["start_offset"]), float(d["width"])),
                      SlaLimits(**d["sla"]), d["add_node"], d["drop_node"],
                      tuple(_signal_from_dict(s) for s in d.get("signals", [])))
