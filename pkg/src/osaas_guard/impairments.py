"""Behavioural impairment model for the probe channel.

None of this is fiber physics.  XPM raises the probe BER multiplicatively
and vanishes past ``xpm_cutoff``; CPM adds a bounded, polarisation-driven BER
jitter out to ``cpm_cutoff``; launching above the nominal total power costs
OSNR linearly in dB.  The constants are calibrated so that a +2 dBm OOK
signal 100 GHz from the probe pushes it over the SD-FEC threshold.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

TWO_OVER_PI = 2.0 / math.pi


@dataclass(frozen=True)
class ImpairmentConstants:
    baseline_ber: float = 1e-4
    xpm_gain: float = 200.0          # 1/mW
    xpm_cutoff: float = 500.0        # GHz
    cpm_cutoff: float = 1000.0       # GHz
    cpm_jitter_scale: float = 5.0    # in units of baseline_ber
    cpm_walk_std: float = 0.3        # rad per tick
    nl_power_coeff: float = 0.4      # dB OSNR per dB of excess power
    osnr_nominal: float = 20.0
    sdfec_ber_limit: float = 2.0e-2
    shared_span_scale: float = 0.0   # 0 disables per-span scaling
    # nominal telemetry values
    cfo_nominal: float = 0.0
    cdc_nominal: float = 273.0 * 17.0
    dgd_nominal: float = 1.0
    rx_power_nominal: float = -10.0
    pdl_nominal: float = 0.5
    # per-feature noise standard deviations
    cfo_std: float = 5.0
    cdc_std: float = 2.0
    dgd_std: float = 0.05
    rx_power_std: float = 0.05
    osnr_std: float = 0.1
    ber_log_std: float = 0.05
    pdl_std: float = 0.02
    ocm_noise_std: float = 0.0

    def __post_init__(self):
        must_be_positive = ("baseline_ber", "xpm_gain", "xpm_cutoff", "cpm_cutoff",
                            "cpm_jitter_scale", "nl_power_coeff", "osnr_nominal",
                            "sdfec_ber_limit")
        for name in must_be_positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for f in fields(self):
            if f.name.endswith("_std") and getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")
        if self.shared_span_scale < 0:
            raise ValueError("shared_span_scale must be non-negative")
        if not self.xpm_cutoff < self.cpm_cutoff:
            raise ValueError("xpm_cutoff must be below cpm_cutoff")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ImpairmentConstants":
        return cls(**data)


def xpm_ber_multiplier(ook_power: float, delta_f: float, k: ImpairmentConstants) -> float:
    """BER multiplier on the probe caused by one OOK signal ``delta_f`` GHz away."""
    reach = 1.0 - delta_f / k.xpm_cutoff
    if reach <= 0.0:
        return 1.0
    return 1.0 + k.xpm_gain * 10.0 ** (ook_power / 10.0) * reach


def cpm_amplitude(delta_f: float, k: ImpairmentConstants) -> float:
    reach = 1.0 - delta_f / k.cpm_cutoff
    if reach <= 0.0:
        return 0.0
    return k.cpm_jitter_scale * k.baseline_ber * reach


def cpm_ber_jitter(delta_f: float, rng: np.random.Generator, k: ImpairmentConstants,
                   phase: float) -> tuple[float, float]:
    """Advance the SOP random walk and return ``(jitter, new_phase)``.

    The jitter is ``amplitude * |sin(phase)|``, so it is bounded by
    ``cpm_amplitude`` and has stationary mean ``amplitude * 2/pi`` once the
    phase is uniformly distributed.  A step is drawn even past the cutoff so
    the random stream does not depend on geometry.
    """
    new_phase = phase + k.cpm_walk_std * rng.standard_normal()
    amp = cpm_amplitude(delta_f, k)
    if amp == 0.0:
        return 0.0, new_phase
    return amp * abs(math.sin(new_phase)), new_phase


def cpm_mean_jitter(delta_f: float, k: ImpairmentConstants) -> float:
    return cpm_amplitude(delta_f, k) * TWO_OVER_PI


def nl_power_penalty(total_power: float, nominal_power: float, k: ImpairmentConstants) -> float:
    return k.nl_power_coeff * max(0.0, total_power - nominal_power)
