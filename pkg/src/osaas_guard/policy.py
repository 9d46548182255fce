"""SLA compliance checks and graduated OOK/power responses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import wire
from .errors import UnmitigableViolation
from .spectrum import POWER_FLOOR_DBM, SLICE_WIDTH, TOL, SlaLimits, WssChannelSpec, psd_dbm_per_ghz
from .telemetry import OcmSnapshot

TOTAL_HIGH = "TotalPowerHigh"
TOTAL_LOW = "TotalPowerLow"
PSD_HIGH = "SlicePsdHigh"
PSD_LOW = "SlicePsdLow"
HIGH_KINDS = (TOTAL_HIGH, PSD_HIGH)

RAISE_ALARM = "RaiseAlarm"
ATTENUATE_SLICE = "AttenuateSlice"
BLOCK_SLICE = "BlockSlice"
ATTENUATE_USER = "AttenuateUser"
ACTION_KINDS = (RAISE_ALARM, ATTENUATE_SLICE, BLOCK_SLICE, ATTENUATE_USER)


@dataclass(frozen=True)
class PolicyConfig:
    sla: Mapping[str, SlaLimits] = field(default_factory=dict)
    p_alarm: float = 0.5
    p_block: float = 0.9
    sustain: int = 1
    attenuation_step: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.p_alarm <= self.p_block <= 1.0:
            raise ValueError("need 0 < p_alarm <= p_block <= 1")
        if self.sustain < 1:
            raise ValueError("sustain count must be >= 1")
        if not self.attenuation_step > 0:
            raise ValueError("attenuation_step must be positive")


@wire.register("violation")
@dataclass(frozen=True)
class Violation:
    kind: str
    user_id: str
    measured: float
    limit: float
    timestamp: int
    slice: int | None = None

    @property
    def excess(self) -> float:
        return abs(self.measured - self.limit)

    def to_fields(self) -> dict:
        return {"violation": self.kind, "user_id": self.user_id, "measured": self.measured,
                "limit": self.limit, "timestamp": self.timestamp, "slice": self.slice}

    @classmethod
    def from_fields(cls, b: dict) -> "Violation":
        wire.expect_keys(b, ("violation", "user_id", "measured", "limit", "timestamp", "slice"))
        if b["violation"] not in (TOTAL_HIGH, TOTAL_LOW, PSD_HIGH, PSD_LOW):
            raise ValueError(f"unknown violation kind {b['violation']}")
        return cls(b["violation"], wire.as_str(b["user_id"]), wire.as_float(b["measured"]),
                   wire.as_float(b["limit"]), wire.as_int(b["timestamp"]),
                   None if b["slice"] is None else wire.as_int(b["slice"]))


@wire.register("action")
@dataclass(frozen=True)
class MitigationAction:
    kind: str
    user_id: str
    timestamp: int
    slice: int | None = None
    db: float | None = None
    slices: tuple[int, ...] = ()
    probs: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ACTION_KINDS:
            raise ValueError(f"unknown action kind {self.kind}")
        if self.kind in (ATTENUATE_SLICE, ATTENUATE_USER) and not (self.db is not None and self.db > 0):
            raise ValueError("attenuation must be positive")

    def to_fields(self) -> dict:
        return {"action": self.kind, "user_id": self.user_id, "timestamp": self.timestamp,
                "slice": self.slice, "db": self.db, "slices": list(self.slices),
                "probs": list(self.probs)}

    @classmethod
    def from_fields(cls, b: dict) -> "MitigationAction":
        wire.expect_keys(b, ("action", "user_id", "timestamp", "slice", "db", "slices", "probs"))
        return cls(b["action"], wire.as_str(b["user_id"]), wire.as_int(b["timestamp"]),
                   None if b["slice"] is None else wire.as_int(b["slice"]),
                   None if b["db"] is None else wire.as_float(b["db"]),
                   tuple(wire.as_int(s) for s in b["slices"]),
                   tuple(wire.as_float(p) for p in b["probs"]))


def check_total_power(snapshot: OcmSnapshot, sla: SlaLimits) -> Violation | None:
    total = snapshot.add_port_total
    if total > sla.max_power + TOL:
        return Violation(TOTAL_HIGH, snapshot.user_id, total, sla.max_power, snapshot.timestamp)
    if total < sla.min_power - TOL:
        return Violation(TOTAL_LOW, snapshot.user_id, total, sla.min_power, snapshot.timestamp)
    return None


def check_slice_psd(snapshot: OcmSnapshot, sla: SlaLimits,
                    slices: Sequence[WssChannelSpec] | None = None) -> list[Violation]:
    out = []
    for i, power in enumerate(snapshot.slice_powers):
        if power <= POWER_FLOOR_DBM + TOL:
            continue
        width = slices[i].width if slices is not None else SLICE_WIDTH
        psd = psd_dbm_per_ghz(power, width)
        if psd > sla.max_psd + TOL:
            out.append(Violation(PSD_HIGH, snapshot.user_id, psd, sla.max_psd, snapshot.timestamp, i))
        elif psd < sla.min_psd - TOL:
            out.append(Violation(PSD_LOW, snapshot.user_id, psd, sla.min_psd, snapshot.timestamp, i))
    return out


def check_snapshot(snapshot: OcmSnapshot, sla: SlaLimits,
                   slices: Sequence[WssChannelSpec] | None = None) -> list[Violation]:
    total = check_total_power(snapshot, sla)
    return ([total] if total else []) + check_slice_psd(snapshot, sla, slices)


def _sustained(prob_history: Sequence[np.ndarray], threshold: float, k: int) -> np.ndarray:
    recent = np.asarray(prob_history[-k:], dtype=float)
    return np.all(recent >= threshold, axis=0)


def plan_ook_response(prob_history: Sequence[np.ndarray], policy: PolicyConfig, user_id: str = "",
                      timestamp: int = 0, blocked: Sequence[int] = ()) -> list[MitigationAction]:
    """Alarm on slices above ``p_alarm`` and block those above ``p_block``, each for ``sustain`` ticks."""
    if len(prob_history) < policy.sustain:
        return []
    already = set(blocked)
    block = [int(i) for i in np.flatnonzero(_sustained(prob_history, policy.p_block, policy.sustain))
             if int(i) not in already]
    alarm = [int(i) for i in np.flatnonzero(_sustained(prob_history, policy.p_alarm, policy.sustain))
             if int(i) not in already and int(i) not in block]
    actions = []
    if alarm:
        latest = np.asarray(prob_history[-1], dtype=float)
        actions.append(MitigationAction(RAISE_ALARM, user_id, timestamp, slices=tuple(alarm),
                                        probs=tuple(float(latest[i]) for i in alarm)))
    actions += [MitigationAction(BLOCK_SLICE, user_id, timestamp, slice=i) for i in block]
    return actions


def ceil_to_step(excess: float, step: float) -> float:
    # the tolerance keeps an excess of exactly n*step from rounding up to n+1 steps
    return max(1, math.ceil((excess - TOL) / step)) * step


def plan_power_mitigation(violation: Violation, policy: PolicyConfig) -> MitigationAction:
    if violation.kind not in HIGH_KINDS:
        raise UnmitigableViolation(f"{violation.kind}: operator cannot raise a user's power")
    db = ceil_to_step(violation.measured - violation.limit, policy.attenuation_step)
    if violation.kind == TOTAL_HIGH:
        return MitigationAction(ATTENUATE_USER, violation.user_id, violation.timestamp, db=db)
    return MitigationAction(ATTENUATE_SLICE, violation.user_id, violation.timestamp,
                            slice=violation.slice, db=db)


def plan_compliance(violations: Sequence[Violation], policy: PolicyConfig) -> list[MitigationAction]:
    """Actions for one snapshot's violations.

    A total-power breach is handled on its own first; per-slice PSD breaches
    are re-evaluated on the next tick once the whole-user attenuation is in.
    Low-side violations produce no action.
    """
    totals = [v for v in violations if v.kind == TOTAL_HIGH]
    if totals:
        return [plan_power_mitigation(totals[0], policy)]
    return [plan_power_mitigation(v, policy) for v in violations if v.kind == PSD_HIGH]
