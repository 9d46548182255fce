"""Closed-loop simulation, OOK detection and SLA enforcement for Optical-Spectrum-as-a-Service."""

from .closed_loop import EventLog, run_closed_loop
from .dataset import DatasetSpec
from .detector import OOKDetector
from .evaluation import EvaluationReport, evaluate
from .policy import MitigationAction, PolicyConfig, Violation
from .scenario import AddOok, PowerOffset, RemoveOok, Repack, Scenario
from .simulator import LineSimulator
from .spectrum import Signal, SlaLimits, SpectralWindow

__version__ = "0.1.0"

__all__ = [
    "AddOok", "DatasetSpec", "EvaluationReport", "EventLog", "LineSimulator", "MitigationAction",
    "OOKDetector", "PolicyConfig", "PowerOffset", "RemoveOok", "Repack", "Scenario", "Signal",
    "SlaLimits", "SpectralWindow", "Violation", "evaluate", "run_closed_loop",
]
