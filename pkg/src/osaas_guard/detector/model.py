"""Detector configuration, trained-model container and the training loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from ..errors import DimensionMismatch, EmptyDataset, NonFiniteInput, ShapeMismatch
from .nn import Dims, check_params, forward_batch, init_params, loss_and_grads
from .optim import AdamState, adam_update

log = logging.getLogger(__name__)

N_TELEMETRY = 7


@dataclass(frozen=True)
class DetectorConfig:
    n_slices: int
    conv_filters: int = 16
    kernel: int = 5
    lstm_hidden: int = 64
    window_len: int = 10
    lr: float = 1e-3
    epochs: int = 3000
    batch: int | None = None      # None: full batch
    seed: int = 0
    patience: int | None = None   # early stop after this many epochs without improvement
    min_delta: float = 0.0

    def __post_init__(self):
        if self.window_len < 1:
            raise ValueError("window_len must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel must be a positive odd integer")
        if self.n_slices < 1 or self.conv_filters < 1 or self.lstm_hidden < 1:
            raise ValueError("layer sizes must be positive")
        if self.lr < 0 or self.epochs < 0:
            raise ValueError("lr and epochs must be non-negative")
        if self.batch is not None and self.batch < 1:
            raise ValueError("batch must be >= 1")

    def dims(self, n_telemetry: int = N_TELEMETRY) -> Dims:
        return Dims(self.n_slices, n_telemetry, self.conv_filters, self.kernel, self.lstm_hidden)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    """Everything needed to continue training bit-identically."""
    epoch: int = 0
    adam: AdamState = field(default_factory=AdamState)
    rng_state: dict | None = None
    best_loss: float = float("inf")
    wait: int = 0
    loss_curve: list[float] = field(default_factory=list)
    stopped_early: bool = False


@dataclass
class DetectorModel:
    config: DetectorConfig
    params: dict[str, np.ndarray]
    mean: np.ndarray
    std: np.ndarray
    n_telemetry: int = N_TELEMETRY
    train_state: TrainState | None = None

    def __post_init__(self):
        check_params(self.params, self.dims)
        if self.mean.shape != (self.dims.n_inputs,) or self.std.shape != (self.dims.n_inputs,):
            raise ShapeMismatch("normalisation stats do not match the input width")
        for name, arr in self.params.items():
            if not np.all(np.isfinite(arr)):
                raise NonFiniteInput(f"parameter {name} is not finite")

    @property
    def dims(self) -> Dims:
        return self.config.dims(self.n_telemetry)

    def normalize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def predict_proba(self, X_raw) -> np.ndarray:
        return forward(self, self.normalize(X_raw))


def forward(model: DetectorModel, inputs) -> np.ndarray:
    """Slice probabilities for already-normalised inputs ``[T, S+7]`` or ``[N, T, S+7]``."""
    X = np.asarray(inputs, dtype=float)
    single = X.ndim == 2
    probs = forward_batch(model.params, model.dims, X)
    return probs[0] if single else probs


def normalization_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    flat = X.reshape(-1, X.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return mean, std


def _validate(X, Y, config: DetectorConfig, n_telemetry: int):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 3 or X.shape[0] == 0:
        if X.size == 0:
            raise EmptyDataset("training set is empty")
        raise DimensionMismatch(f"inputs must be [N, T, S+{n_telemetry}], got {X.shape}")
    if Y.shape != (X.shape[0], config.n_slices):
        raise DimensionMismatch(f"labels {Y.shape} do not match {X.shape[0]} samples x {config.n_slices} slices")
    if X.shape[2] != config.n_slices + n_telemetry:
        raise DimensionMismatch(f"feature width {X.shape[2]} != {config.n_slices} + {n_telemetry}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("training inputs contain NaN or inf")
    if not np.all((Y == 0) | (Y == 1)):
        raise DimensionMismatch("labels must be binary")
    return X, Y


def train(X, Y, config: DetectorConfig, resume: DetectorModel | None = None,
          n_telemetry: int = N_TELEMETRY,
          on_epoch: Callable[[int, float], None] | None = None) -> DetectorModel:
    """Fit the detector with BCE + Adam.

    ``X`` holds raw (unnormalised) windows ``[N, T, S + n_telemetry]`` and
    ``Y`` the binary slice labels ``[N, S]``.  With ``resume`` the saved
    parameters, optimiser moments and shuffling RNG are restored and training
    continues up to ``config.epochs``.
    """
    X, Y = _validate(X, Y, config, n_telemetry)
    dims = config.dims(n_telemetry)
    if resume is not None:
        if resume.train_state is None:
            raise ValueError("checkpoint carries no training state to resume from")
        if resume.dims != dims:
            raise DimensionMismatch("resume checkpoint dimensions differ from config")
        mean, std = resume.mean, resume.std
        params = {k: v.copy() for k, v in resume.params.items()}
        prev = resume.train_state
        state = TrainState(prev.epoch,
                           AdamState({k: v.copy() for k, v in prev.adam.m.items()},
                                     {k: v.copy() for k, v in prev.adam.v.items()}, prev.adam.t),
                           prev.rng_state, prev.best_loss, prev.wait, list(prev.loss_curve),
                           prev.stopped_early)
        rng = np.random.default_rng()
        rng.bit_generator.state = prev.rng_state
    else:
        mean, std = normalization_stats(X)
        rng = np.random.default_rng(config.seed)
        params = init_params(dims, rng)
        state = TrainState()
    Xn = (X - mean) / std
    N = Xn.shape[0]

    while state.epoch < config.epochs and not state.stopped_early:
        if config.batch is None or config.batch >= N:
            batches = [np.arange(N)]
        else:
            perm = rng.permutation(N)
            batches = [perm[i:i + config.batch] for i in range(0, N, config.batch)]
        total = 0.0
        for idx in batches:
            loss, grads = loss_and_grads(params, dims, Xn[idx], Y[idx])
            adam_update(params, grads, state.adam, lr=config.lr)
            total += loss * idx.size
        epoch_loss = total / N
        state.loss_curve.append(epoch_loss)
        state.epoch += 1
        if on_epoch is not None:
            on_epoch(state.epoch, epoch_loss)
        if epoch_loss < state.best_loss - config.min_delta:
            state.best_loss, state.wait = epoch_loss, 0
        else:
            state.wait += 1
            if config.patience is not None and state.wait >= config.patience:
                state.stopped_early = True
                log.info("early stop at epoch %d (loss %.6f)", state.epoch, epoch_loss)
    state.rng_state = rng.bit_generator.state
    return DetectorModel(config, params, mean, std, n_telemetry, state)


def with_config(model: DetectorModel, **changes) -> DetectorModel:
    return replace(model, config=replace(model.config, **changes))
