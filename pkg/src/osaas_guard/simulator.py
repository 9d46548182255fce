"""Tick-driven simulator of the OSaaS line system and its operator probe channel."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OverlapOutsideWindow, ScenarioError, UnknownUser
from .impairments import ImpairmentConstants, cpm_ber_jitter, nl_power_penalty, xpm_ber_multiplier
from .scenario import (AddOok, PowerOffset, RemoveOok, Repack, Scenario, ScenarioEvent,
                       channel_layout)
from .spectrum import (POWER_FLOOR_DBM, SLICE_WIDTH, Signal, SlaLimits, SpectralWindow,
                       occupancy_mask, slice_window, sum_power_dbm)
from .telemetry import OcmSnapshot, TelemetryRecord

VOA_MAX_DB = 35.0


@dataclass
class UserState:
    user_id: str
    window: SpectralWindow
    sla: SlaLimits
    spans: frozenset[int]
    nominal_total: float
    voa: np.ndarray                  # dB per slice
    blocked: np.ndarray              # bool per slice
    signals: dict[int, Signal] = field(default_factory=dict)

    @property
    def n_slices(self) -> int:
        return self.voa.size

    def ook_signals(self) -> dict[int, Signal]:
        return {sid: s for sid, s in self.signals.items() if s.is_ook}

    def slice_linear_weights(self, signal: Signal) -> np.ndarray:
        """Fraction of ``signal``'s power that lands in each slice."""
        return occupancy_mask(signal, self.window) * (SLICE_WIDTH / signal.width)

    def raw_slice_mw(self) -> np.ndarray:
        lin = np.zeros(self.n_slices)
        for sig in self.signals.values():
            lin += 10.0 ** (sig.launch_power / 10.0) * self.slice_linear_weights(sig)
        return lin

    def transmission(self) -> np.ndarray:
        """Linear per-slice WSS transmission (0 for blocked slices)."""
        return np.where(self.blocked, 0.0, 10.0 ** (-self.voa / 10.0))


@dataclass
class SimState:
    time: int
    scenario: Scenario
    users: dict[str, UserState]
    probe: Signal
    probe_spans: frozenset[int]
    rng: np.random.Generator
    cpm_phase: dict[int, float] = field(default_factory=dict)
    next_signal_id: int = 0

    @property
    def constants(self) -> ImpairmentConstants:
        return self.scenario.constants

    def user(self, user_id: str) -> UserState:
        try:
            return self.users[user_id]
        except KeyError:
            raise UnknownUser(user_id) from None


def initial_state(scenario: Scenario) -> SimState:
    users = {}
    sid = 0
    for cfg in scenario.users:
        n = cfg.window.n_slices
        sigs = {}
        for s in cfg.signals:
            if not cfg.window.contains(s.low, s.high):
                raise OverlapOutsideWindow(f"{cfg.user_id}: signal at {s.center} GHz leaves the window")
            sigs[sid] = s
            sid += 1
        users[cfg.user_id] = UserState(
            cfg.user_id, cfg.window, cfg.sla, scenario.topology.spans(cfg.add_node, cfg.drop_node),
            sum_power_dbm([s.launch_power for s in cfg.signals]) if cfg.signals else POWER_FLOOR_DBM,
            np.zeros(n), np.zeros(n, dtype=bool), sigs)
    p = scenario.probe
    state = SimState(0, scenario, users, Signal.coherent(p.center, p.launch_power, width=p.width),
                     scenario.topology.spans(p.add_node, p.drop_node),
                     np.random.default_rng(scenario.seed), next_signal_id=sid)
    for uid in users:
        for k, s in users[uid].ook_signals().items():
            state.cpm_phase[k] = float(state.rng.uniform(0.0, 2.0 * math.pi))
    return state


def inject(state: SimState, event: ScenarioEvent) -> SimState:
    """Apply one scenario event to ``state`` in place and return it."""
    if event.t < state.time:
        raise ScenarioError(f"event at t={event.t} is in the past (now {state.time})")
    user = state.user(event.user)
    if isinstance(event, AddOok):
        sig = event.signal()
        if not user.window.contains(sig.low, sig.high):
            raise OverlapOutsideWindow(
                f"OOK [{sig.low}, {sig.high}] GHz exceeds {user.user_id} window "
                f"[{user.window.start_offset}, {user.window.end_offset}]")
        sid = state.next_signal_id
        state.next_signal_id += 1
        user.signals[sid] = sig
        state.cpm_phase[sid] = float(state.rng.uniform(0.0, 2.0 * math.pi))
    elif isinstance(event, RemoveOok):
        for sid in list(user.ook_signals()):
            del user.signals[sid]
            state.cpm_phase.pop(sid, None)
    elif isinstance(event, PowerOffset):
        if event.offset_db != 0.0:
            user.signals = {sid: s.shifted_power(event.offset_db) for sid, s in user.signals.items()}
    elif isinstance(event, Repack):
        coherent = {sid: s for sid, s in user.signals.items() if not s.is_ook}
        if not coherent:
            raise ScenarioError(f"{user.user_id} has no coherent channels to repack")
        total = sum_power_dbm([s.launch_power for s in coherent.values()])
        per_channel = total - 10.0 * math.log10(event.n_channels)
        for sid in coherent:
            del user.signals[sid]
        for sig in channel_layout(user.window, event.n_channels, per_channel):
            user.signals[state.next_signal_id] = sig
            state.next_signal_id += 1
    else:
        raise ScenarioError(f"unsupported event {event!r}")
    return state


def _noise(rng: np.random.Generator, std: float) -> float:
    draw = rng.standard_normal()
    return std * draw


def ocm_snapshot(state: SimState, user: UserState, noise: np.ndarray | None = None) -> OcmSnapshot:
    raw = user.raw_slice_mw()
    passed = raw * user.transmission()
    with np.errstate(divide="ignore"):
        dbm = 10.0 * np.log10(raw) - user.voa
    if noise is not None:
        dbm = dbm + noise
    dbm = np.where(user.blocked | (raw <= 0.0), POWER_FLOOR_DBM, np.maximum(dbm, POWER_FLOOR_DBM))
    total_mw = float(passed.sum())
    total = 10.0 * math.log10(total_mw) if total_mw > 0 else POWER_FLOOR_DBM
    return OcmSnapshot(state.time, user.user_id, max(total, POWER_FLOOR_DBM),
                       tuple(float(v) for v in dbm))


def step(state: SimState) -> tuple[TelemetryRecord, dict[str, OcmSnapshot], SimState]:
    """Emit the probe record and per-user OCM snapshots for ``state.time``, then advance 1 s."""
    k = state.constants
    rng = state.rng
    ber_mult = 1.0
    ber_add = 0.0
    for user in state.users.values():
        shared = len(user.spans & state.probe_spans)
        trans = user.transmission()
        for sid, sig in sorted(user.ook_signals().items()):
            # draw unconditionally so geometry and blocking never shift the stream
            jitter_delta = abs(sig.center - state.probe.center)
            passing = float(np.dot(user.slice_linear_weights(sig), trans))
            jitter, state.cpm_phase[sid] = cpm_ber_jitter(jitter_delta, rng, k, state.cpm_phase[sid])
            if shared == 0 or passing <= 0.0:
                continue
            strength = 1.0 + k.shared_span_scale * (shared - 1)
            eff_power = sig.launch_power + 10.0 * math.log10(passing)
            ber_mult *= 1.0 + strength * (xpm_ber_multiplier(eff_power, jitter_delta, k) - 1.0)
            ber_add += strength * passing * jitter
    ber = k.baseline_ber * ber_mult * math.exp(k.ber_log_std * rng.standard_normal()) + ber_add
    ber = min(max(ber, 0.0), 0.5)

    snaps = {}
    penalty = 0.0
    for uid, user in state.users.items():
        noise = k.ocm_noise_std * rng.standard_normal(user.n_slices)
        snaps[uid] = ocm_snapshot(state, user, noise if k.ocm_noise_std > 0 else None)
        if user.spans & state.probe_spans:
            penalty += nl_power_penalty(snaps[uid].add_port_total, user.nominal_total, k)

    record = TelemetryRecord(
        state.time,
        k.cfo_nominal + _noise(rng, k.cfo_std),
        k.cdc_nominal + _noise(rng, k.cdc_std),
        k.dgd_nominal + _noise(rng, k.dgd_std),
        k.rx_power_nominal + _noise(rng, k.rx_power_std),
        k.osnr_nominal - penalty + _noise(rng, k.osnr_std),
        ber,
        k.pdl_nominal + _noise(rng, k.pdl_std),
    )
    state.time += 1
    return record, snaps, state


class LineSimulator:
    """Owns a :class:`SimState` and replays a scenario's timeline against it."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.state = initial_state(scenario)
        self._pending = list(scenario.events)

    @property
    def time(self) -> int:
        return self.state.time

    @property
    def finished(self) -> bool:
        return self.state.time >= self.scenario.duration

    def inject(self, event: ScenarioEvent) -> None:
        inject(self.state, event)

    def tick(self) -> tuple[TelemetryRecord, dict[str, OcmSnapshot]]:
        while self._pending and self._pending[0].t <= self.state.time:
            inject(self.state, self._pending.pop(0))
        record, snaps, _ = step(self.state)
        return record, snaps

    def snapshot(self) -> SimState:
        return copy.deepcopy(self.state)

    def true_occupancy(self, user_id: str) -> np.ndarray:
        """Max fractional occupancy of active OOK signals per slice (ground truth)."""
        user = self.state.user(user_id)
        occ = np.zeros(user.n_slices)
        for sig in user.ook_signals().values():
            occ = np.maximum(occ, occupancy_mask(sig, user.window))
        return occ

    def run(self):
        """Yield ``(record, snapshots)`` until the scenario ends."""
        while not self.finished:
            yield self.tick()


def slices_for(user: UserState):
    return slice_window(user.window)
