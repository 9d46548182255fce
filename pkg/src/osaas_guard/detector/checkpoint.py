"""Checkpoint file format.

::

    OSAAS-DETECTOR 1\\n
    <one-line JSON header>\\n
    <little-endian float64 arrays, concatenated>

The header records the config, dims, normalisation mean/std and the list of
``[name, shape]`` for every array that follows.  Parameter arrays come first
in the order conv W, conv b, LSTM input blocks (i, f, g, o), LSTM hidden
blocks, LSTM biases, dense W, dense b.  When training state is present, the
Adam first and second moments follow in the same order and the header
carries the epoch counter, Adam step, shuffling-RNG state and loss curve.
"""

from __future__ import annotations

import io
import json
import os

import numpy as np

from ..errors import CheckpointError
from .model import DetectorConfig, DetectorModel, TrainState
from .nn import PARAM_ORDER
from .optim import AdamState

MAGIC = b"OSAAS-DETECTOR 1\n"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


def dumps(model: DetectorModel) -> bytes:
    arrays: list[tuple[str, np.ndarray]] = [(n, model.params[n]) for n in PARAM_ORDER]
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "n_telemetry": model.n_telemetry,
        "norm_mean": [float(x) for x in model.mean],
        "norm_std": [float(x) for x in model.std],
        "train_state": None,
    }
    ts = model.train_state
    if ts is not None:
        header["train_state"] = {
            "epoch": ts.epoch, "adam_t": ts.adam.t, "rng_state": ts.rng_state,
            "best_loss": ts.best_loss if np.isfinite(ts.best_loss) else None,
            "wait": ts.wait, "loss_curve": [float(x) for x in ts.loss_curve],
            "stopped_early": ts.stopped_early, "has_moments": bool(ts.adam.m),
        }
        if ts.adam.m:
            arrays += [(f"adam_m.{n}", ts.adam.m[n]) for n in PARAM_ORDER]
            arrays += [(f"adam_v.{n}", ts.adam.v[n]) for n in PARAM_ORDER]
    header["arrays"] = [[name, list(arr.shape)] for name, arr in arrays]
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
    for _, arr in arrays:
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())
    return buf.getvalue()


def loads(data: bytes) -> DetectorModel:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a detector checkpoint")
    end = data.find(b"\n", len(MAGIC))
    if end < 0:
        raise CheckpointError("truncated header")
    try:
        header = json.loads(data[len(MAGIC):end])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    payload = memoryview(data)[end + 1:]
    arrays = {}
    offset = 0
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * _DTYPE.itemsize
        if offset + nbytes > len(payload):
            raise CheckpointError("truncated parameter payload")
        arrays[name] = np.frombuffer(payload[offset:offset + nbytes], dtype=_DTYPE).reshape(shape).astype(float)
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError("trailing bytes after parameter payload")

    cfg = DetectorConfig(**header["config"])
    params = {n: arrays[n] for n in PARAM_ORDER}
    state = None
    ts = header.get("train_state")
    if ts is not None:
        adam = AdamState(t=ts["adam_t"])
        if ts["has_moments"]:
            adam.m = {n: arrays[f"adam_m.{n}"] for n in PARAM_ORDER}
            adam.v = {n: arrays[f"adam_v.{n}"] for n in PARAM_ORDER}
        best = ts["best_loss"]
        state = TrainState(ts["epoch"], adam, ts["rng_state"],
                           float("inf") if best is None else best, ts["wait"],
                           list(ts["loss_curve"]), ts["stopped_early"])
    return DetectorModel(cfg, params, np.array(header["norm_mean"], dtype=float),
                         np.array(header["norm_std"], dtype=float), header["n_telemetry"], state)


def save(model: DetectorModel, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def load(path: str | os.PathLike) -> DetectorModel:
    with open(path, "rb") as fh:
        return loads(fh.read())
