"""Differentiable layer primitives and the training loss.

All image tensors are channels-last ``(N, H, W, C)``.  Each op validates
shapes, checks its output for non-finite values, and registers a backward
closure on the active tape via :func:`siamverify.tensor.record_op`.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, EngineError, LabelError, UninitializedStatsError
from .tensor import Tensor, record_op

BCE_CLAMP = 1e-7
BATCHNORM_EPS = 1e-5
BATCHNORM_MOMENTUM = 0.9


def _check_finite(op: str, data: np.ndarray) -> None:
    if not np.isfinite(data).all():
        raise EngineError(f"{op} produced non-finite values")


def _out(op: str, data: np.ndarray, inputs, backward_fn) -> Tensor:
    _check_finite(op, data)
    return record_op(Tensor(data), inputs, backward_fn)


# ---------------------------------------------------------------------------
# elementwise / reduction helpers


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            b.accumulate_grad(g * a.data)

    return _out("mul", data, (a, b), bwd)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, producing a scalar tensor."""
    data = x.data.sum()

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g, x.shape).astype(x.dtype, copy=False))

    return _out("sum_all", np.asarray(data), (x,), bwd)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    data = x.data.reshape(shape)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(x.shape))

    return _out("reshape", data, (x,), bwd)


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    return reshape(x, (x.shape[0], -1))


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    """max(0, x); gradient is 0 for x <= 0."""
    mask = x.data > 0
    data = np.where(mask, x.data, 0)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    return _out("relu", data, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic function, output in (0, 1)."""
    z = x.data
    pos = z >= 0
    data = np.empty_like(z)
    data[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    data[~pos] = ez / (1.0 + ez)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * data * (1.0 - data))

    return _out("sigmoid", data, (x,), bwd)


# ---------------------------------------------------------------------------
# dense


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight + bias`` for ``x`` of shape (N, D)."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise DimensionError(
            f"dense: expected 2-d input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"dense: input features {x.shape[1]} (axis 1) != weight rows {weight.shape[0]} (axis 0)")
    if bias.shape != (weight.shape[1],):
        raise DimensionError(
            f"dense: bias shape {bias.shape} != units ({weight.shape[1]},)")
    data = x.data @ weight.data + bias.data

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g @ weight.data.T)
        if weight.requires_grad:
            weight.accumulate_grad(x.data.T @ g)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))

    return _out("dense", data, (x, weight, bias), bwd)


# ---------------------------------------------------------------------------
# convolution


def _same_padding(size: int, k: int, stride: int) -> Tuple[int, int]:
    out = -(-size // stride)  # ceil
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> Tuple[np.ndarray, int, int]:
    n, h, w, c = xp.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = np.empty((n, oh, ow, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :]
    return cols.reshape(n * oh * ow, kh * kw * c), oh, ow


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: str = "valid") -> Tensor:
    """2-d cross-correlation over a channels-last batch.

    ``x`` is (N, H, W, C), ``kernel`` is (kh, kw, C, F), ``bias`` is (F,).
    ``padding`` is ``"valid"`` (no padding) or ``"same"`` (zero padding so
    the output spatial size is ceil(size / stride)).
    """
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d: input must be (N,H,W,C), got {x.shape}")
    if kernel.data.ndim != 4:
        raise DimensionError(f"conv2d: kernel must be (kh,kw,C,F), got {kernel.shape}")
    n, h, w, c = x.shape
    kh, kw, kc, f = kernel.shape
    if kc != c:
        raise DimensionError(
            f"conv2d: input channels {c} (input axis 3) != kernel channels {kc} (kernel axis 2)")
    if bias.shape != (f,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != filters ({f},)")
    if stride < 1:
        raise ConfigError(f"conv2d: stride must be >= 1, got {stride}")
    if padding not in ("valid", "same"):
        raise ConfigError(f"conv2d: padding must be 'valid' or 'same', got {padding!r}")

    if padding == "same":
        ph = _same_padding(h, kh, stride)
        pw = _same_padding(w, kw, stride)
    else:
        ph = pw = (0, 0)
    hp, wp = h + ph[0] + ph[1], w + pw[0] + pw[1]
    if kh > hp or kw > wp:
        raise DimensionError(
            f"conv2d: kernel ({kh}x{kw}) larger than padded input ({hp}x{wp}) on axes (1,2)")

    xp = np.pad(x.data, ((0, 0), ph, pw, (0, 0))) if (ph != (0, 0) or pw != (0, 0)) else x.data
    cols, oh, ow = _im2col(xp, kh, kw, stride)
    wmat = kernel.data.reshape(kh * kw * c, f)
    data = (cols @ wmat + bias.data).reshape(n, oh, ow, f)

    def bwd(g):
        gflat = g.reshape(n * oh * ow, f)
        if bias.requires_grad:
            bias.accumulate_grad(gflat.sum(axis=0))
        if kernel.requires_grad:
            kernel.accumulate_grad((cols.T @ gflat).reshape(kernel.shape))
        if x.requires_grad:
            dcols = (gflat @ wmat.T).reshape(n, oh, ow, kh, kw, c)
            dxp = np.zeros((n, hp, wp, c), dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += dcols[:, :, :, i, j, :]
            x.accumulate_grad(dxp[:, ph[0]:hp - ph[1], pw[0]:wp - pw[1], :])

    return _out("conv2d", data, (x, kernel, bias), bwd)


# ---------------------------------------------------------------------------
# pooling


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped.

    The backward pass routes each window's gradient to the first maximal
    element in row-major window order.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"maxpool2d: input must be (N,H,W,C), got {x.shape}")
    n, h, w, c = x.shape
    if h < 2 or w < 2:
        raise DimensionError(f"maxpool2d: window 2x2 larger than input {h}x{w} (axes 1,2)")
    oh, ow = h // 2, w // 2
    xc = x.data[:, :oh * 2, :ow * 2, :]
    windows = (
        xc.reshape(n, oh, 2, ow, 2, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, oh, ow, c, 4)
    )
    idx = windows.argmax(axis=-1)
    data = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        if not x.requires_grad:
            return
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dxc = (
            dwin.reshape(n, oh, ow, c, 2, 2)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, oh * 2, ow * 2, c)
        )
        dx = np.zeros_like(x.data)
        dx[:, :oh * 2, :ow * 2, :] = dxc
        x.accumulate_grad(dx)

    return _out("maxpool2d", data, (x,), bwd)


# ---------------------------------------------------------------------------
# batch normalization


class BatchNormStats:
    """Running mean/variance for one batchnorm layer (momentum 0.9)."""

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.populated = False

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray) -> None:
        m = BATCHNORM_MOMENTUM
        self.mean = m * self.mean + (1.0 - m) * batch_mean.astype(self.mean.dtype)
        self.var = m * self.var + (1.0 - m) * batch_var.astype(self.var.dtype)
        self.populated = True


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, stats: BatchNormStats, mode: str) -> Tensor:
    """Per-channel batch normalization over all non-channel axes.

    ``train`` and ``calibrate`` modes normalize by batch statistics
    (variance denominator N, epsilon 1e-5) and update the running stats;
    ``infer`` mode is a pure function of the running stats.
    """
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"batchnorm: gamma/beta shapes {gamma.shape}/{beta.shape} != channels ({c},)")
    axes = tuple(range(x.data.ndim - 1))
    eps = BATCHNORM_EPS

    if mode in ("train", "calibrate"):
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv_std
        stats.update(mu, var)
    elif mode == "infer":
        if not stats.populated:
            raise UninitializedStatsError(
                "batchnorm infer mode before any training batch; running stats are uninitialized")
        inv_std = 1.0 / np.sqrt(stats.var + eps)
        xhat = (x.data - stats.mean) * inv_std
        mu = None
    else:
        raise ConfigError(f"batchnorm: unknown mode {mode!r}")

    data = gamma.data * xhat + beta.data
    m = x.data.size // c  # elements per channel

    def bwd(g):
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=axes))
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=axes))
        if x.requires_grad:
            dxhat = g * gamma.data
            if mu is None:  # infer: statistics are constants
                x.accumulate_grad(dxhat * inv_std)
            else:
                # backprop through batch mean and variance
                dvar = (dxhat * (x.data - mu)).sum(axis=axes) * (-0.5) * inv_std ** 3
                dmu = (-dxhat * inv_std).sum(axis=axes) + dvar * (-2.0 / m) * (x.data - mu).sum(axis=axes)
                dx = dxhat * inv_std + dvar * 2.0 * (x.data - mu) / m + dmu / m
                x.accumulate_grad(dx)

    return _out("batchnorm", data, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# dropout


def dropout(x: Tensor, rate: float, mode: str, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: train mode zeroes with probability ``rate`` and
    rescales survivors by 1/(1-rate); infer and calibrate modes are the
    exact identity (the input tensor is returned unchanged).
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout: rate must be in [0, 1), got {rate}")
    if mode in ("infer", "calibrate") or rate == 0.0:
        return x
    if mode != "train":
        raise ConfigError(f"dropout: unknown mode {mode!r}")
    if rng is None:
        raise ContractError("dropout in train mode requires a seeded random generator")
    keep = rng.random(x.shape) >= rate
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    factor = keep * scale
    data = x.data * factor

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * factor)

    return _out("dropout", data, (x,), bwd)


# ---------------------------------------------------------------------------
# siamese distance head


def l1_distance(p: Tensor, q: Tensor) -> Tuple[Tensor, Tensor]:
    """Elementwise |p - q| and its per-sample sum.

    Returns ``(elementwise, total)`` where ``elementwise`` has the shape of
    the inputs and ``total`` is (N, 1) for (N, D) inputs.  The layer has no
    learnable parameters; the subgradient at p_i == q_i is 0.
    """
    if p.shape != q.shape:
        raise DimensionError(f"l1_distance: shapes {p.shape} and {q.shape} differ")
    diff = p.data - q.data
    sign = np.sign(diff)
    elem_data = np.abs(diff)

    def bwd_elem(g):
        if p.requires_grad:
            p.accumulate_grad(g * sign)
        if q.requires_grad:
            q.accumulate_grad(-g * sign)

    elem = _out("l1_distance", elem_data, (p, q), bwd_elem)

    total_data = elem_data.sum(axis=-1, keepdims=True)

    def bwd_total(g):
        if p.requires_grad:
            p.accumulate_grad(g * sign)
        if q.requires_grad:
            q.accumulate_grad(-g * sign)

    total = _out("l1_distance", total_data, (p, q), bwd_total)
    return elem, total


# ---------------------------------------------------------------------------
# loss


def bce_loss(prediction: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs so a fully
    saturated sigmoid cannot produce an infinite loss.  Targets must be
    exactly 0 or 1.
    """
    if prediction.shape != target.shape:
        raise DimensionError(
            f"bce_loss: prediction shape {prediction.shape} != target shape {target.shape}")
    t = target.data
    if not np.all((t == 0.0) | (t == 1.0)):
        raise LabelError("bce_loss: targets must be exactly 0 or 1")
    lo, hi = BCE_CLAMP, 1.0 - BCE_CLAMP
    phat = np.clip(prediction.data, lo, hi)
    n = phat.size
    data = np.asarray(-(t * np.log(phat) + (1.0 - t) * np.log1p(-phat)).mean())

    def bwd(g):
        if prediction.requires_grad:
            inside = (prediction.data > lo) & (prediction.data < hi)
            dp = np.where(inside, (phat - t) / (phat * (1.0 - phat)) / n, 0.0)
            prediction.accumulate_grad(g * dp.astype(prediction.dtype, copy=False))

    return _out("bce_loss", data, (prediction, target), bwd)
