"""CNN-LSTM segmentation network with hand-derived gradients.

Per timestep the OCM slice vector goes through a same-padded linear 1-D
convolution, the flattened feature map (filter-major) is concatenated with the
telemetry features, and the fused vector drives a single LSTM layer.  A dense
sigmoid head on the final hidden state gives one probability per WSS slice.

Because the convolution is linear, its composition with the LSTM input
weights collapses to a small ``[4H, S + K - 1]`` matrix over the padded OCM
vector.  Forward and backward both use that collapsed form; the full
``[4H, F*S]`` product is never materialised per sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NonFiniteInput, ShapeMismatch

PARAM_ORDER = ("conv_W", "conv_b", "lstm_Wx", "lstm_Wh", "lstm_b", "dense_W", "dense_b")
GATES = ("i", "f", "g", "o")
PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class Dims:
    n_slices: int
    n_telemetry: int
    conv_filters: int
    kernel: int
    hidden: int

    @property
    def fused(self) -> int:
        return self.conv_filters * self.n_slices + self.n_telemetry

    @property
    def n_inputs(self) -> int:
        return self.n_slices + self.n_telemetry

    def shapes(self) -> dict[str, tuple[int, ...]]:
        F, S, H, K = self.conv_filters, self.n_slices, self.hidden, self.kernel
        return {
            "conv_W": (F, 1, K),
            "conv_b": (F,),
            "lstm_Wx": (4, H, self.fused),
            "lstm_Wh": (4, H, H),
            "lstm_b": (4, H),
            "dense_W": (S, H),
            "dense_b": (S,),
        }


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def init_params(dims: Dims, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform(-r, r) with r = 1/sqrt(fan_in) for every tensor of a layer."""
    fan_in = {"conv": dims.kernel, "lstm": dims.fused + dims.hidden, "dense": dims.hidden}
    params = {}
    for name, shape in dims.shapes().items():
        r = 1.0 / np.sqrt(fan_in[name.split("_")[0]])
        params[name] = rng.uniform(-r, r, size=shape)
    return params


def check_params(params: dict[str, np.ndarray], dims: Dims) -> None:
    for name, shape in dims.shapes().items():
        if name not in params:
            raise ShapeMismatch(f"missing parameter {name}")
        if params[name].shape != shape:
            raise ShapeMismatch(f"{name} has shape {params[name].shape}, expected {shape}")


# primitive ops ----------------------------------------------------------------

def conv1d_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-length 1-D convolution of ``x`` [1 x S] with zero padding.

    ``y[f, i] = b[f] + sum_j W[f, 0, j] * x[0, i + j - K//2]``
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != 1:
        raise ShapeMismatch(f"conv input must be [1 x n_slices], got {x.shape}")
    if W.ndim != 3 or W.shape[1] != 1 or W.shape[2] % 2 == 0 or b.shape != (W.shape[0],):
        raise ShapeMismatch(f"conv weights {W.shape} / bias {b.shape} inconsistent")
    K = W.shape[2]
    S = x.shape[1]
    xp = np.pad(x[0], K // 2)
    cols = np.stack([xp[j:j + S] for j in range(K)])     # [K, S]
    return W[:, 0, :] @ cols + b[:, None]


def lstm_step(x_t, h_prev, c_prev, Wx, Wh, b):
    """One LSTM cell update; gate blocks are ordered i, f, g, o."""
    x_t, h_prev, c_prev = (np.asarray(a, dtype=float) for a in (x_t, h_prev, c_prev))
    H = Wh.shape[1]
    if (Wx.shape[:2] != (4, H) or Wh.shape != (4, H, H) or b.shape != (4, H)
            or x_t.shape[-1] != Wx.shape[2] or h_prev.shape[-1] != H or c_prev.shape[-1] != H):
        raise ShapeMismatch("LSTM dimensions do not match")
    z = np.einsum("khd,...d->...kh", Wx, x_t) + np.einsum("khj,...j->...kh", Wh, h_prev) + b
    i = sigmoid(z[..., 0, :])
    f = sigmoid(z[..., 1, :])
    g = np.tanh(z[..., 2, :])
    o = sigmoid(z[..., 3, :])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def bce_loss(probs, labels) -> float:
    p = np.clip(np.asarray(probs, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(labels, dtype=float)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


# batched network -------------------------------------------------------------

def _collapsed_conv(params, dims: Dims):
    F, S, K, H4 = dims.conv_filters, dims.n_slices, dims.kernel, 4 * dims.hidden
    Wx = params["lstm_Wx"].reshape(H4, dims.fused)
    Wc = Wx[:, :F * S].reshape(H4, F, S)
    Wt = Wx[:, F * S:]
    cw = params["conv_W"][:, 0, :]
    M = np.zeros((H4, S + K - 1))
    for j in range(K):
        M[:, j:j + S] += np.einsum("gfi,f->gi", Wc, cw[:, j])
    const = np.einsum("gfi,f->g", Wc, params["conv_b"])
    return Wc, Wt, M, const


def _split_inputs(X: np.ndarray, dims: Dims):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != dims.n_inputs:
        raise ShapeMismatch(f"inputs must be [N, T, {dims.n_inputs}], got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("inputs contain NaN or inf")
    pad = dims.kernel // 2
    ocm = X[:, :, :dims.n_slices]
    xp = np.pad(ocm, ((0, 0), (0, 0), (pad, pad)))
    return xp, X[:, :, dims.n_slices:]


def forward_batch(params, dims: Dims, X, keep_cache: bool = False):
    """Probabilities ``[N, S]`` for normalised inputs ``X`` of shape ``[N, T, S + n_tel]``."""
    xp, tel = _split_inputs(X, dims)
    N, T = xp.shape[:2]
    H = dims.hidden
    Wc, Wt, M, const = _collapsed_conv(params, dims)
    Wh = params["lstm_Wh"].reshape(4 * H, H)
    gx = xp @ M.T + tel @ Wt.T + (const + params["lstm_b"].reshape(-1))   # [N, T, 4H]

    h = np.zeros((N, H))
    c = np.zeros((N, H))
    cache = {"hs": np.zeros((T + 1, N, H)), "cs": np.zeros((T + 1, N, H)),
             "acts": np.zeros((T, N, 4, H)), "tanh_c": np.zeros((T, N, H))} if keep_cache else None
    for t in range(T):
        z = (gx[:, t] + h @ Wh.T).reshape(N, 4, H)
        i = sigmoid(z[:, 0])
        f = sigmoid(z[:, 1])
        g = np.tanh(z[:, 2])
        o = sigmoid(z[:, 3])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        if keep_cache:
            cache["acts"][t] = np.stack([i, f, g, o], axis=1)
            cache["tanh_c"][t] = tc
            cache["hs"][t + 1] = h
            cache["cs"][t + 1] = c
    logits = h @ params["dense_W"].T + params["dense_b"]
    probs = sigmoid(logits)
    if keep_cache:
        cache.update(xp=xp, tel=tel, Wc=Wc, Wh=Wh, probs=probs)
        return probs, cache
    return probs


def loss_and_grads(params, dims: Dims, X, Y):
    """Mean BCE over samples and slices, and its gradient for every parameter."""
    Y = np.asarray(Y, dtype=float)
    probs, cache = forward_batch(params, dims, X, keep_cache=True)
    if Y.shape != probs.shape:
        raise ShapeMismatch(f"labels {Y.shape} vs outputs {probs.shape}")
    loss = bce_loss(probs, Y)
    N, S = probs.shape
    H, K, F = dims.hidden, dims.kernel, dims.conv_filters
    T = cache["acts"].shape[0]

    clamped = (probs < PROB_CLAMP) | (probs > 1.0 - PROB_CLAMP)
    dlogits = np.where(clamped, 0.0, probs - Y) / (N * S)
    hT = cache["hs"][T]
    grads = {"dense_W": dlogits.T @ hT, "dense_b": dlogits.sum(axis=0)}

    Wh = cache["Wh"]
    dh = dlogits @ params["dense_W"]
    dc = np.zeros((N, H))
    dgx = np.zeros((N, T, 4 * H))
    dWh = np.zeros((4 * H, H))
    for t in range(T - 1, -1, -1):
        i, f, g, o = (cache["acts"][t, :, k] for k in range(4))
        tc = cache["tanh_c"][t]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * cache["cs"][t] * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            dh * tc * o * (1.0 - o),
        ], axis=1)
        dgx[:, t] = dz
        dWh += dz.T @ cache["hs"][t]
        dh = dz @ Wh
        dc = dc * f

    flat = dgx.reshape(N * T, 4 * H)
    gsum = flat.sum(axis=0)
    A = flat.T @ cache["xp"].reshape(N * T, -1)                 # [4H, S+K-1]
    dWt = flat.T @ cache["tel"].reshape(N * T, -1)
    Wc = cache["Wc"]
    cw = params["conv_W"][:, 0, :]
    dWc = np.multiply.outer(gsum, params["conv_b"])[:, :, None] * np.ones((1, 1, S))
    dconv = np.zeros((F, K))
    for j in range(K):
        Aj = A[:, j:j + S]
        dWc += Aj[:, None, :] * cw[None, :, j, None]
        dconv[:, j] = np.einsum("gfi,gi->f", Wc, Aj)
    grads["conv_W"] = dconv[:, None, :]
    grads["conv_b"] = np.einsum("gfi,g->f", Wc, gsum)
    dWx = np.concatenate([dWc.reshape(4 * H, F * S), dWt], axis=1)
    grads["lstm_Wx"] = dWx.reshape(4, H, dims.fused)
    grads["lstm_Wh"] = dWh.reshape(4, H, H)
    grads["lstm_b"] = gsum.reshape(4, H)
    return loss, grads


def grad_check(params, dims: Dims, X, Y, eps: float = 1e-5, names=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``names`` restricts the check to a subset of parameter tensors.
    """
    _, analytic = loss_and_grads(params, dims, X, Y)
    worst = 0.0
    for name in names or PARAM_ORDER:
        p = params[name]
        flat = p.reshape(-1)
        ga = analytic[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            lp = bce_loss(forward_batch(params, dims, X), Y)
            flat[idx] = orig - eps
            lm = bce_loss(forward_batch(params, dims, X), Y)
            flat[idx] = orig
            gn = (lp - lm) / (2.0 * eps)
            err = abs(ga[idx] - gn) / max(1e-8, abs(ga[idx]) + abs(gn))
            worst = max(worst, err)
    return worst
