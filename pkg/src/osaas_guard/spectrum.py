"""Flex-grid spectrum arithmetic.

Frequencies are GHz offsets from a single C-band anchor (``GRID_ANCHOR_THZ``);
absolute optical frequencies never enter the arithmetic.  Power values are dBm
(or dBm/GHz for spectral densities) and are handled in binary64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInput, NonAlignedWidth, NonPositiveWidth

GRID_ANCHOR_THZ = 191.3
SLICE_WIDTH = 6.25
POWER_FLOOR_DBM = -40.0
TOL = 1e-9

OOK_DEFAULT_WIDTH = 20.0
OOK_DEFAULT_BIT_RATE = 10.0


@dataclass(frozen=True)
class SpectralWindow:
    start_offset: float
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise NonPositiveWidth(f"window width must be positive, got {self.width}")

    @property
    def end_offset(self) -> float:
        return self.start_offset + self.width

    @property
    def n_slices(self) -> int:
        return _slice_count(self.width)

    def contains(self, low: float, high: float) -> bool:
        return low >= self.start_offset - TOL and high <= self.end_offset + TOL

    def overlaps(self, other: "SpectralWindow") -> bool:
        return (self.start_offset < other.end_offset - TOL
                and other.start_offset < self.end_offset - TOL)


@dataclass(frozen=True)
class WssChannelSpec:
    index: int
    low: float
    high: float

    @property
    def width(self) -> float:
        return self.high - self.low

    @property
    def center(self) -> float:
        return 0.5 * (self.low + self.high)


@dataclass(frozen=True)
class Coherent:
    symbol_rate: float = 32.0
    modulation: str = "16QAM"


@dataclass(frozen=True)
class Ook:
    bit_rate: float = OOK_DEFAULT_BIT_RATE


@dataclass(frozen=True)
class Signal:
    kind: Coherent | Ook
    center: float
    width: float
    launch_power: float

    def __post_init__(self):
        if not self.width > 0:
            raise NonPositiveWidth(f"signal width must be positive, got {self.width}")

    @classmethod
    def ook(cls, center: float, launch_power: float, width: float = OOK_DEFAULT_WIDTH,
            bit_rate: float = OOK_DEFAULT_BIT_RATE) -> "Signal":
        return cls(Ook(bit_rate), center, width, launch_power)

    @classmethod
    def coherent(cls, center: float, launch_power: float, width: float = 37.5,
                 symbol_rate: float = 32.0, modulation: str = "16QAM") -> "Signal":
        return cls(Coherent(symbol_rate, modulation), center, width, launch_power)

    @property
    def is_ook(self) -> bool:
        return isinstance(self.kind, Ook)

    @property
    def low(self) -> float:
        return self.center - 0.5 * self.width

    @property
    def high(self) -> float:
        return self.center + 0.5 * self.width

    def shifted_power(self, delta_db: float) -> "Signal":
        return Signal(self.kind, self.center, self.width, self.launch_power + delta_db)


@dataclass(frozen=True)
class SlaLimits:
    min_power: float
    max_power: float
    min_psd: float
    max_psd: float

    def __post_init__(self):
        if not (self.min_power < self.max_power and self.min_psd < self.max_psd):
            raise ValueError(f"SLA limits must satisfy min < max: {self}")


def _slice_count(width: float) -> int:
    n = round(width / SLICE_WIDTH)
    if n < 1 or abs(n * SLICE_WIDTH - width) > TOL:
        raise NonAlignedWidth(f"{width} GHz is not a positive multiple of {SLICE_WIDTH} GHz")
    return n


def slice_window(window: SpectralWindow) -> list[WssChannelSpec]:
    """Partition ``window`` into adjacent 6.25 GHz WSS channels."""
    n = _slice_count(window.width)
    edges = [window.start_offset + i * SLICE_WIDTH for i in range(n)] + [window.end_offset]
    return [WssChannelSpec(i, edges[i], edges[i + 1]) for i in range(n)]


def slice_edges(window: SpectralWindow) -> tuple[np.ndarray, np.ndarray]:
    slices = slice_window(window)
    return (np.array([s.low for s in slices]), np.array([s.high for s in slices]))


def occupancy_mask(signal: Signal, window: SpectralWindow) -> np.ndarray:
    """Fraction of each slice of ``window`` covered by the signal band.

    The signal may lie partly or entirely outside the window; slices it does
    not reach get 0.
    """
    lows, highs = slice_edges(window)
    overlap = np.minimum(highs, signal.high) - np.maximum(lows, signal.low)
    return np.maximum(overlap, 0.0) / SLICE_WIDTH


def db_to_mw(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)


def mw_to_db(mw):
    return 10.0 * np.log10(mw)


def sum_power_dbm(levels: Iterable[float]) -> float:
    """Incoherent power sum of dBm levels, returned in dBm."""
    arr = np.asarray(list(levels) if not isinstance(levels, np.ndarray) else levels, dtype=float)
    if arr.size == 0:
        raise EmptyInput("sum_power_dbm needs at least one level")
    if arr.size == 1:
        return float(arr.reshape(-1)[0])
    return float(10.0 * math.log10(float(np.sum(10.0 ** (arr / 10.0)))))


def psd_dbm_per_ghz(power: float, width: float) -> float:
    if not width > 0:
        raise NonPositiveWidth(f"width must be positive, got {width}")
    return power - 10.0 * math.log10(width)


def windows_disjoint(windows: Sequence[SpectralWindow]) -> bool:
    for i, a in enumerate(windows):
        for b in windows[i + 1:]:
            if a.overlaps(b):
                return False
    return True
