from .checkpoint import load, save
from .estimator import (OOKDetector, SlidingWindowTransformer, StreamingDetector, feature_row,
                        infer_stream, sliding_windows, telemetry_features)
from .model import DetectorConfig, DetectorModel, forward, train
from .nn import bce_loss, conv1d_forward, grad_check, lstm_step
from .optim import AdamState, adam_update

__all__ = [
    "AdamState", "DetectorConfig", "DetectorModel", "OOKDetector", "SlidingWindowTransformer",
    "StreamingDetector", "adam_update", "bce_loss", "conv1d_forward", "feature_row", "forward",
    "grad_check", "infer_stream", "load", "lstm_step", "save", "sliding_windows",
    "telemetry_features", "train",
]
