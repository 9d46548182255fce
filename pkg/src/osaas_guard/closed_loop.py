"""Closed-loop wiring: simulator -> telemetry plane -> detector/policy -> control plane."""

from __future__ import annotations

import collections
import os
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import wire
from .control import BLOCK, SET_VOA, CommandIssuer, ControlAck, ControlCommand, ControlSession
from .detector.estimator import StreamingDetector, feature_row
from .detector.model import DetectorModel
from .policy import (ATTENUATE_SLICE, ATTENUATE_USER, BLOCK_SLICE, MitigationAction, PolicyConfig,
                     Violation, check_snapshot, plan_compliance, plan_ook_response)
from .scenario import Scenario
from .simulator import LineSimulator
from .spectrum import slice_window
from .telemetry import OcmSnapshot, Publisher, TelemetryRecord

LABEL_THRESHOLD = 0.25

ProbSource = Callable[[int], np.ndarray]


@dataclass
class UserTrace:
    rows: list[np.ndarray] = field(default_factory=list)
    labels: list[np.ndarray] = field(default_factory=list)
    occupancy: list[np.ndarray] = field(default_factory=list)
    snapshots: list[OcmSnapshot] = field(default_factory=list)
    probs: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass
class EventLog:
    """Timestamped record of everything the controllers saw and did."""
    entries: list = field(default_factory=list)
    traces: dict[str, UserTrace] = field(default_factory=dict)
    telemetry: list[TelemetryRecord] = field(default_factory=list)

    def of_type(self, cls) -> list:
        return [e for e in self.entries if isinstance(e, cls)]

    @property
    def actions(self) -> list[MitigationAction]:
        return self.of_type(MitigationAction)

    @property
    def violations(self) -> list[Violation]:
        return self.of_type(Violation)

    @property
    def commands(self) -> list[ControlCommand]:
        return self.of_type(ControlCommand)

    @property
    def acks(self) -> list[ControlAck]:
        return self.of_type(ControlAck)

    def lines(self) -> list[str]:
        return [wire.encode(e) for e in self.entries]

    def write(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    def stream_messages(self) -> list:
        """Recorded telemetry-plane traffic, in publish order (for replay files)."""
        by_t = collections.defaultdict(list)
        for tr in self.traces.values():
            for snap in tr.snapshots:
                by_t[snap.timestamp].append(snap)
        out = []
        for rec in self.telemetry:
            out.append(rec)
            out.extend(sorted(by_t[rec.timestamp], key=lambda s: s.user_id))
        return out


class UserController:
    """Per-user policy actor: consumes stream messages, issues ROADM commands."""

    def __init__(self, user_id: str, slices, policy: PolicyConfig, session,
                 detector: StreamingDetector | None = None, oracle: ProbSource | None = None,
                 act_on_ook: bool = True, log: EventLog | None = None):
        self.user_id = user_id
        self.slices = slices
        self.sla = policy.sla[user_id]
        self.policy = policy
        self.issuer = CommandIssuer(session)
        self.detector = detector
        self.oracle = oracle
        self.act_on_ook = act_on_ook
        self.history: collections.deque = collections.deque(maxlen=policy.sustain)
        self.voa = np.zeros(len(slices))
        self.blocked: set[int] = set()
        self.log = log if log is not None else EventLog()
        self.last_probs: np.ndarray | None = None

    def on_message(self, msg) -> None:
        probs = None
        if self.detector is not None:
            out = self.detector.push(msg)
            if out is not None:
                probs = out[1]
        if not isinstance(msg, OcmSnapshot) or msg.user_id != self.user_id:
            return
        if self.oracle is not None:
            probs = self.oracle(msg.timestamp)
        self.last_probs = probs
        self.decide(msg, probs)

    def decide(self, snap: OcmSnapshot, probs: np.ndarray | None) -> None:
        t = snap.timestamp
        violations = check_snapshot(snap, self.sla, self.slices)
        self.log.entries.extend(violations)
        actions = plan_compliance(violations, self.policy)
        if probs is not None:
            self.history.append(np.asarray(probs, dtype=float))
            if self.act_on_ook:
                ook = plan_ook_response(list(self.history), self.policy, self.user_id, t,
                                        blocked=sorted(self.blocked))
                blocking = {a.slice for a in ook if a.kind == BLOCK_SLICE}
                actions = [a for a in actions
                           if not (a.kind == ATTENUATE_SLICE and a.slice in blocking)] + ook
        for action in actions:
            self.log.entries.append(action)
            self._execute(action)

    def _send(self, verb, t, slice=None, db=None) -> ControlAck:
        cmd, ack = self.issuer.send(self.user_id, verb, t, slice, db)
        self.log.entries.extend([cmd, ack])
        if ack.applied:
            if verb == SET_VOA:
                if slice is None:
                    self.voa += db
                else:
                    self.voa[slice] = db
            elif verb == BLOCK:
                self.blocked.add(slice)
        return ack

    def _execute(self, a: MitigationAction) -> None:
        if a.kind == ATTENUATE_USER:
            self._send(SET_VOA, a.timestamp, None, a.db)
        elif a.kind == ATTENUATE_SLICE:
            self._send(SET_VOA, a.timestamp, a.slice, float(self.voa[a.slice] + a.db))
        elif a.kind == BLOCK_SLICE:
            self._send(BLOCK, a.timestamp, a.slice)


def default_policy(scenario: Scenario, **overrides) -> PolicyConfig:
    return PolicyConfig(sla={u.user_id: u.sla for u in scenario.users}, **overrides)


def run_closed_loop(scenario: Scenario, models: Mapping[str, DetectorModel] | None = None,
                    policy: PolicyConfig | None = None, oracle: bool = False,
                    act_on_ook: bool = True, mitigate: bool = True,
                    buffer_size: int = 1024, oracle_min_occupancy: float = 0.0) -> EventLog:
    """Run ``scenario`` to its end with one controller per user.

    ``models`` maps user ids to trained detectors; users without a model get
    power/PSD control only.  ``oracle=True`` replaces every detector with the
    ground-truth indicator ``occupancy > oracle_min_occupancy``.
    ``mitigate=False`` observes only.
    """
    policy = policy or default_policy(scenario)
    models = models or {}
    sim = LineSimulator(scenario)
    publisher = Publisher(buffer_size)
    log = EventLog()
    controllers = {}
    subs = {}
    truth: dict[str, np.ndarray] = {}
    for cfg in scenario.users:
        uid = cfg.user_id
        session = ControlSession(sim.state)
        det = StreamingDetector(models[uid], uid) if uid in models else None
        orc = (lambda t, uid=uid: (truth[uid] > oracle_min_occupancy).astype(float)) if oracle else None
        controllers[uid] = UserController(uid, slice_window(cfg.window), policy, session, det, orc,
                                          act_on_ook, log)
        subs[uid] = publisher.subscribe()
        log.traces[uid] = UserTrace()

    while not sim.finished:
        record, snaps = sim.tick()
        log.telemetry.append(record)
        for uid in sorted(snaps):
            occ = sim.true_occupancy(uid)
            truth[uid] = occ
            tr = log.traces[uid]
            tr.rows.append(feature_row(record, snaps[uid]))
            tr.occupancy.append(occ)
            tr.labels.append((occ >= LABEL_THRESHOLD).astype(np.int8))
            tr.snapshots.append(snaps[uid])
        publisher.publish(record)
        for uid in sorted(snaps):
            publisher.publish(snaps[uid])
        for uid, ctl in controllers.items():
            for msg in subs[uid].drain():
                if mitigate:
                    ctl.on_message(msg)
                elif ctl.detector is not None:
                    out = ctl.detector.push(msg)
                    if out is not None:
                        ctl.last_probs = out[1]
            if ctl.last_probs is not None:
                log.traces[uid].probs[record.timestamp] = ctl.last_probs
                ctl.last_probs = None
    publisher.close()
    return log


def replay_stream(messages, models: Mapping[str, DetectorModel], policy: PolicyConfig,
                  slices_by_user: Mapping[str, list]) -> EventLog:
    """Re-feed recorded telemetry-plane traffic through detectors and policy.

    Commands go to a null session that acknowledges without a simulator.
    """
    log = EventLog()
    controllers = {uid: UserController(uid, slices_by_user[uid], policy, _NullSession(),
                                       StreamingDetector(models[uid], uid) if uid in models else None,
                                       log=log)
                   for uid in slices_by_user}
    for msg in messages:
        if isinstance(msg, TelemetryRecord):
            log.telemetry.append(msg)
        for ctl in controllers.values():
            ctl.on_message(msg)
    return log


class _NullSession:
    def submit(self, cmd: ControlCommand) -> ControlAck:
        return ControlAck(cmd.seq, "applied", cmd.timestamp + 1)
