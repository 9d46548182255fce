"""scikit-learn style front end for the CNN-LSTM OOK detector."""

from __future__ import annotations

import collections
import math
import os
from typing import Iterable, Iterator

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..errors import DimensionMismatch, EmptyDataset
from ..telemetry import OcmSnapshot, TelemetryRecord
from . import checkpoint
from .model import DetectorConfig, DetectorModel, train

BER_LOG_RANGE = (-12.0, -0.3)


def telemetry_features(record: TelemetryRecord) -> np.ndarray:
    """The seven probe features, with BER fed as a clamped log10."""
    log_ber = math.log10(record.prefec_ber) if record.prefec_ber > 0 else BER_LOG_RANGE[0]
    log_ber = min(max(log_ber, BER_LOG_RANGE[0]), BER_LOG_RANGE[1])
    return np.array([record.cfo, record.cdc, record.dgd, record.rx_power,
                     record.osnr, log_ber, record.pdl])


def feature_row(record: TelemetryRecord, snapshot: OcmSnapshot) -> np.ndarray:
    if record.timestamp != snapshot.timestamp:
        raise DimensionMismatch("telemetry and OCM rows must share a timestamp")
    return np.concatenate([np.asarray(snapshot.slice_powers, dtype=float),
                           telemetry_features(record)])


def sliding_windows(rows: np.ndarray, window_len: int) -> np.ndarray:
    """``[n_ticks, D]`` -> ``[n_ticks - window_len + 1, window_len, D]`` (views copied)."""
    rows = np.asarray(rows, dtype=float)
    n = rows.shape[0] - window_len + 1
    if n <= 0:
        return np.empty((0, window_len, rows.shape[1]))
    return np.lib.stride_tricks.sliding_window_view(rows, window_len, axis=0).transpose(0, 2, 1).copy()


class SlidingWindowTransformer(TransformerMixin, BaseEstimator):
    """Turns a per-tick feature matrix into overlapping detector windows."""

    def __init__(self, window_len=10):
        self.window_len = window_len

    def fit(self, X, y=None):
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X)
        return sliding_windows(X, self.window_len)


class OOKDetector(BaseEstimator):
    """Per-slice OOK segmentation over windows of OCM powers and probe telemetry.

    ``X`` has shape ``[n_samples, window_len, n_slices + 7]`` with raw
    (unnormalised) features, OCM slice powers first.  ``y`` is a binary
    ``[n_samples, n_slices]`` mask.
    """

    def __init__(self, conv_filters=16, kernel_size=5, lstm_hidden=64, window_len=10,
                 learning_rate=1e-3, epochs=3000, batch_size=None, patience=None,
                 min_delta=0.0, threshold=0.5, random_state=0, warm_start=False):
        self.conv_filters = conv_filters
        self.kernel_size = kernel_size
        self.lstm_hidden = lstm_hidden
        self.window_len = window_len
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.min_delta = min_delta
        self.threshold = threshold
        self.random_state = random_state
        self.warm_start = warm_start

    def _config(self, n_slices: int) -> DetectorConfig:
        return DetectorConfig(n_slices=n_slices, conv_filters=self.conv_filters,
                              kernel=self.kernel_size, lstm_hidden=self.lstm_hidden,
                              window_len=self.window_len, lr=self.learning_rate,
                              epochs=self.epochs, batch=self.batch_size,
                              seed=self.random_state, patience=self.patience,
                              min_delta=self.min_delta)

    def _check_X(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.size == 0:
            raise EmptyDataset("no samples")
        X = check_array(X, allow_nd=True, ensure_all_finite=True)
        if X.ndim != 3:
            raise DimensionMismatch(f"expected [n_samples, window_len, n_features], got {X.shape}")
        if X.shape[1] != self.window_len:
            raise DimensionMismatch(f"window length {X.shape[1]} != window_len={self.window_len}")
        return X

    def fit(self, X, y, on_epoch=None):
        X = self._check_X(X)
        y = check_array(y, ensure_2d=True, dtype=float)
        config = self._config(y.shape[1])
        resume = None
        if self.warm_start and getattr(self, "model_", None) is not None:
            resume = self.model_
        model = train(X, y, config, resume=resume, on_epoch=on_epoch)
        self._set_model(model)
        return self

    def _set_model(self, model: DetectorModel) -> None:
        self.model_ = model
        self.n_slices_ = model.config.n_slices
        self.n_features_in_ = model.dims.n_inputs
        self.loss_curve_ = list(model.train_state.loss_curve) if model.train_state else []
        self.n_epochs_ = model.train_state.epoch if model.train_state else 0

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = self._check_X(X)
        if X.shape[2] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} features, got {X.shape[2]}")
        return self.model_.predict_proba(X)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= self.threshold).astype(int)

    def score(self, X, y) -> float:
        """Micro-averaged F1 over (sample, slice) cells at ``threshold``."""
        from ..evaluation import prf1
        pred = self.predict(X).astype(bool)
        truth = np.asarray(y).astype(bool)
        tp = int(np.sum(pred & truth))
        fp = int(np.sum(pred & ~truth))
        fn = int(np.sum(~pred & truth))
        return prf1(tp, fp, fn)[2]

    def save(self, path: str | os.PathLike) -> None:
        check_is_fitted(self, "model_")
        checkpoint.save(self.model_, path)

    @classmethod
    def from_model(cls, model: DetectorModel, **overrides) -> "OOKDetector":
        c = model.config
        est = cls(conv_filters=c.conv_filters, kernel_size=c.kernel, lstm_hidden=c.lstm_hidden,
                  window_len=c.window_len, learning_rate=c.lr, epochs=c.epochs,
                  batch_size=c.batch, patience=c.patience, min_delta=c.min_delta,
                  random_state=c.seed)
        est.set_params(**overrides)
        est._set_model(model)
        return est

    @classmethod
    def load(cls, path: str | os.PathLike, **overrides) -> "OOKDetector":
        return cls.from_model(checkpoint.load(path), **overrides)


class StreamingDetector:
    """Sliding-window inference for one user over a telemetry-plane stream.

    Feed messages in stream order with :meth:`push`; once ``window_len``
    aligned (telemetry, OCM) rows have been seen, every completed tick
    returns a probability vector for that tick.
    """

    def __init__(self, model: DetectorModel, user_id: str, window_len: int | None = None):
        self.model = model
        self.user_id = user_id
        self.window_len = window_len or model.config.window_len
        self._rows: collections.deque = collections.deque(maxlen=self.window_len)
        self._pending: TelemetryRecord | None = None

    def reset(self) -> None:
        self._rows.clear()
        self._pending = None

    def push(self, msg) -> tuple[int, np.ndarray] | None:
        if isinstance(msg, TelemetryRecord):
            self._pending = msg
            return None
        if not isinstance(msg, OcmSnapshot) or msg.user_id != self.user_id:
            return None
        if self._pending is None or self._pending.timestamp != msg.timestamp:
            return None
        self._rows.append(feature_row(self._pending, msg))
        if len(self._rows) < self.window_len:
            return None
        window = np.stack(self._rows)[None]
        return msg.timestamp, self.model.predict_proba(window)[0]


def infer_stream(model: DetectorModel, stream: Iterable, user_id: str,
                 window_len: int | None = None) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(timestamp, probabilities)`` per tick once the window has filled."""
    det = StreamingDetector(model, user_id, window_len)
    for msg in stream:
        out = det.push(msg)
        if out is not None:
            yield out
