"""Stateless forward/backward kernels on NHWC numpy arrays.

Each ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
consumes that cache.  Arithmetic happens in the dtype of the input, so tests
run everything in float64 simply by feeding float64 arrays.
"""
from __future__ import annotations

import contextlib
from collections import Counter
from typing import Iterator

import numpy as np

from ..errors import DegenerateBatch, ShapeMismatch

CONV_MODES = ("standard", "depthwise", "pointwise")

_mult_counter: Counter | None = None


@contextlib.contextmanager
def count_multiplies() -> Iterator[Counter]:
    """Tally scalar multiplications performed by the conv kernels.

    Counts are taken from the operand shapes at each multiply site, keyed by
    conv mode.
    """
    global _mult_counter
    prev, _mult_counter = _mult_counter, Counter()
    try:
        yield _mult_counter
    finally:
        _mult_counter = prev


def _tally(key: str, n: int) -> None:
    if _mult_counter is not None:
        _mult_counter[key] += int(n)


def _pad_amount(k: int, padding) -> int:
    if padding == "valid":
        return 0
    if padding == "same":
        if k % 2 == 0:
            raise ShapeMismatch(f"SAME padding needs an odd kernel, got {k}")
        return (k - 1) // 2
    if isinstance(padding, int) and padding >= 0:
        return padding
    raise ShapeMismatch(f"bad padding {padding!r}")


def out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _window(xp: np.ndarray, i: int, j: int, ho: int, wo: int, s: int) -> np.ndarray:
    return xp[:, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s, :]


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, stride: int = 1,
                   padding="same", mode: str = "standard"):
    """2-D cross-correlation on an NHWC batch.

    Kernel layouts: standard ``(kh, kw, c_in, c_out)``, depthwise
    ``(kh, kw, c)`` (channel multiplier 1), pointwise ``(1, 1, c_in, c_out)``.
    """
    if mode not in CONV_MODES:
        raise ShapeMismatch(f"unknown conv mode {mode!r}")
    if x.ndim != 4:
        raise ShapeMismatch(f"expected NHWC input, got shape {x.shape}")
    n, h, w, c = x.shape
    if mode == "depthwise":
        if kernel.ndim != 3 or kernel.shape[2] != c:
            raise ShapeMismatch(f"depthwise kernel {kernel.shape} vs {c} channels")
    else:
        if kernel.ndim != 4 or kernel.shape[2] != c:
            raise ShapeMismatch(f"kernel {kernel.shape} vs {c} input channels")
        if mode == "pointwise" and kernel.shape[:2] != (1, 1):
            raise ShapeMismatch(f"pointwise kernel must be 1x1, got {kernel.shape[:2]}")
    kh, kw = kernel.shape[:2]
    ph, pw = _pad_amount(kh, padding), _pad_amount(kw, padding)
    ho, wo = out_size(h, kh, stride, ph), out_size(w, kw, stride, pw)
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"input {h}x{w} too small for kernel {kh}x{kw}")

    if mode == "pointwise":
        xs = x[:, ::stride, ::stride, :][:, :ho, :wo, :]
        w2 = kernel.reshape(c, -1)
        flat = xs.reshape(-1, c)
        out = (flat @ w2).reshape(n, ho, wo, -1)
        _tally("pointwise", flat.shape[0] * c * w2.shape[1])
        return out, (mode, x.shape, kernel, stride, (0, 0), xs)

    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x
    if mode == "depthwise":
        out = np.zeros((n, ho, wo, c), dtype=np.result_type(x, kernel))
        for i in range(kh):
            for j in range(kw):
                out += _window(xp, i, j, ho, wo, stride) * kernel[i, j]
                _tally("depthwise", n * ho * wo * c)
        return out, (mode, x.shape, kernel, stride, (ph, pw), xp)

    cols = _im2col(xp, kh, kw, ho, wo, stride)  # (n*ho*wo, kh*kw*c)
    w2 = kernel.reshape(kh * kw * c, -1)
    out = (cols @ w2).reshape(n, ho, wo, -1)
    _tally("standard", cols.shape[0] * cols.shape[1] * w2.shape[1])
    return out, (mode, x.shape, kernel, stride, (ph, pw), cols)


def _im2col(xp, kh, kw, ho, wo, s):
    n, c = xp.shape[0], xp.shape[3]
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = _window(xp, i, j, ho, wo, s)
    return cols.reshape(n * ho * wo, kh * kw * c)


def conv2d_backward(grad_out: np.ndarray, cache):
    """Return ``(grad_x, grad_kernel)`` for a cached ``conv2d_forward``."""
    mode, xshape, kernel, s, (ph, pw), saved = cache
    n, h, w, c = xshape
    kh, kw = kernel.shape[:2]
    _, ho, wo, _ = grad_out.shape
    if grad_out.shape[0] != n or grad_out.ndim != 4:
        raise ShapeMismatch(f"grad_out {grad_out.shape} does not match cache")

    if mode == "pointwise":
        xs = saved
        cout = kernel.shape[3]
        g2 = grad_out.reshape(-1, cout)
        gk = (xs.reshape(-1, c).T @ g2).reshape(kernel.shape)
        gxs = (g2 @ kernel.reshape(c, cout).T).reshape(xs.shape)
        if s == 1:
            return gxs, gk
        gx = np.zeros(xshape, dtype=gxs.dtype)
        gx[:, ::s, ::s, :][:, :ho, :wo, :] = gxs
        return gx, gk

    gxp = np.zeros((n, h + 2 * ph, w + 2 * pw, c), dtype=np.result_type(grad_out, kernel))
    if mode == "depthwise":
        xp = saved
        gk = np.empty_like(kernel, dtype=gxp.dtype)
        for i in range(kh):
            for j in range(kw):
                gk[i, j] = np.einsum("nhwc,nhwc->c", _window(xp, i, j, ho, wo, s), grad_out)
                _window(gxp, i, j, ho, wo, s)[...] += grad_out * kernel[i, j]
    else:
        cols = saved
        cout = kernel.shape[3]
        g2 = grad_out.reshape(-1, cout)
        gk = (cols.T @ g2).reshape(kernel.shape)
        gcols = (g2 @ kernel.reshape(-1, cout).T).reshape(n, ho, wo, kh, kw, c)
        for i in range(kh):
            for j in range(kw):
                _window(gxp, i, j, ho, wo, s)[...] += gcols[:, :, :, i, j, :]
    gx = gxp[:, ph : ph + h, pw : pw + w, :]
    return gx, gk


def relu6_forward(x):
    return np.clip(x, 0.0, 6.0), x


def relu6_backward(grad_out, cache):
    x = cache
    return grad_out * ((x > 0) & (x < 6))


def batchnorm_forward(x, gamma, beta, running_mean, running_var, *, train: bool,
                      momentum: float = 0.9, eps: float = 1e-5):
    """Per-channel batch norm over every axis but the last.

    In train mode the running statistics are updated in place with
    ``r <- momentum * r + (1 - momentum) * batch_stat`` (biased variance).
    """
    axes = tuple(range(x.ndim - 1))
    if train:
        m = x.size // x.shape[-1]
        if m < 2:
            raise DegenerateBatch(f"batch norm needs >= 2 values per channel, got {m}")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    out = xhat * gamma + beta
    return out, (xhat, inv_std, gamma, train)


def batchnorm_backward(grad_out, cache):
    """Return ``(grad_x, grad_gamma, grad_beta)``."""
    xhat, inv_std, gamma, train = cache
    axes = tuple(range(grad_out.ndim - 1))
    g_beta = grad_out.sum(axis=axes)
    g_gamma = (grad_out * xhat).sum(axis=axes)
    dxhat = grad_out * gamma
    if not train:
        return dxhat * inv_std, g_gamma, g_beta
    m = grad_out.size // grad_out.shape[-1]
    gx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return gx, g_gamma, g_beta


def global_avgpool_forward(x):
    return x.mean(axis=(1, 2)), x.shape


def global_avgpool_backward(grad_out, cache):
    n, h, w, c = cache
    return np.broadcast_to(grad_out[:, None, None, :] / (h * w), cache).copy()


def fc_forward(x, weight, bias):
    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeMismatch(f"fc input {x.shape} vs weight {weight.shape}")
    return x @ weight + bias, x


def fc_backward(grad_out, cache, weight):
    """Return ``(grad_x, grad_weight, grad_bias)``."""
    x = cache
    return grad_out @ weight.T, x.T @ grad_out, grad_out.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, target):
    """Mean negative log-likelihood of one-hot ``target`` under ``probs``."""
    p = np.sum(probs * target, axis=-1)
    return float(-np.mean(np.log(np.maximum(p, np.finfo(probs.dtype).tiny))))


def softmax_cross_entropy_backward(probs, target):
    """Gradient of mean CE w.r.t. the logits feeding the softmax."""
    return (probs - target) / probs.shape[0]
