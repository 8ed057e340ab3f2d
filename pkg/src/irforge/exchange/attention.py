"""Channel attention producing per-channel exchange logits, with its exact gradient.

Forward pass for a ``(C, H, W)`` map ``X``::

    desc = [mean_c X, max_c X]                    (2, H, W)
    gate = sigmoid(conv7x7(desc) + s_bias)        (H, W)
    local = depthwise5x5(X) + f_bias              (C, H, W)
    m = sigmoid(mean_hw(X * local * gate))        (C,)

Convolutions are cross-correlations with zero "same" padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

SPATIAL_KERNEL = 7
LOCAL_KERNEL = 5


def sigmoid(x):
    # exp(-|x|) never overflows; pick the matching form by sign.
    x = np.asarray(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, e) / (1.0 + e)


@dataclass
class AttentionKernels:
    s_weight: np.ndarray  # (2, 7, 7)
    s_bias: np.ndarray    # scalar array
    f_weight: np.ndarray  # (C, 5, 5)
    f_bias: np.ndarray    # (C,)

    @property
    def channels(self) -> int:
        return self.f_weight.shape[0]

    @classmethod
    def zeros(cls, channels: int, dtype=np.float64) -> "AttentionKernels":
        return cls(
            np.zeros((2, SPATIAL_KERNEL, SPATIAL_KERNEL), dtype),
            np.zeros((), dtype),
            np.zeros((channels, LOCAL_KERNEL, LOCAL_KERNEL), dtype),
            np.zeros(channels, dtype),
        )

    @classmethod
    def random(cls, channels: int, rng: np.random.Generator, dtype=np.float64) -> "AttentionKernels":
        s_scale = 1.0 / np.sqrt(2 * SPATIAL_KERNEL ** 2)
        f_scale = 1.0 / LOCAL_KERNEL
        return cls(
            (rng.standard_normal((2, SPATIAL_KERNEL, SPATIAL_KERNEL)) * s_scale).astype(dtype),
            np.asarray(rng.standard_normal() * 0.1, dtype=dtype),
            (rng.standard_normal((channels, LOCAL_KERNEL, LOCAL_KERNEL)) * f_scale).astype(dtype),
            (rng.standard_normal(channels) * 0.1).astype(dtype),
        )

    def astype(self, dtype) -> "AttentionKernels":
        return AttentionKernels(*(np.asarray(a, dtype=dtype) for a in
                                  (self.s_weight, self.s_bias, self.f_weight, self.f_bias)))

    def permuted(self, perm) -> "AttentionKernels":
        """Kernels for an input whose channels were reordered as ``X[perm]``."""
        return AttentionKernels(self.s_weight, self.s_bias, self.f_weight[perm], self.f_bias[perm])


def _pad(x: np.ndarray, k: int) -> np.ndarray:
    r = k // 2
    h, w = x.shape[-2:]
    out = np.zeros(x.shape[:-2] + (h + 2 * r, w + 2 * r), dtype=x.dtype)
    out[..., r:r + h, r:r + w] = x
    return out


def _windows(x: np.ndarray, k: int) -> np.ndarray:
    """``(..., H, W, k, k)`` view of zero-padded neighbourhoods."""
    padded = _pad(x, k)
    h, w = x.shape[-2:]
    sy, sx = padded.strides[-2:]
    return as_strided(padded, padded.shape[:-2] + (h, w, k, k),
                      padded.strides[:-2] + (sy, sx, sy, sx), writeable=False)


def _scatter_windows(grad: np.ndarray, weight: np.ndarray, k: int) -> np.ndarray:
    """Adjoint of correlating with ``weight``: spread ``grad`` back onto the input.

    ``grad`` is ``(..., H, W)``; ``weight`` is ``(..., k, k)`` broadcast against it.
    """
    r = k // 2
    h, w = grad.shape[-2:]
    out = np.zeros(grad.shape[:-2] + (h + 2 * r, w + 2 * r), dtype=grad.dtype)
    for i in range(k):
        for j in range(k):
            out[..., i:i + h, j:j + w] += grad * weight[..., i, j][..., None, None]
    return out[..., r:r + h, r:r + w]


@dataclass
class AttentionCache:
    x: np.ndarray
    desc: np.ndarray
    gate: np.ndarray
    local: np.ndarray
    logits: np.ndarray
    kernels: AttentionKernels


def attention_forward(x: np.ndarray, k: AttentionKernels):
    """Return ``(m, cache)``; ``cache.gate`` is the ``(H, W)`` spatial gate."""
    c, h, w = x.shape
    if k.channels != c:
        raise ValueError(f"kernels built for {k.channels} channels, input has {c}")
    desc = np.empty((2, h, w), dtype=x.dtype)
    # Summing in sorted order makes the mean bitwise invariant to channel order.
    np.sum(np.sort(x, axis=0), axis=0, out=desc[0])
    desc[0] /= c
    np.max(x, axis=0, out=desc[1])
    s = np.einsum("chwij,cij->hw", _windows(desc, SPATIAL_KERNEL), k.s_weight) + k.s_bias
    gate = sigmoid(s)
    local = np.einsum("chwij,cij->chw", _windows(x, LOCAL_KERNEL), k.f_weight) \
        + k.f_bias[:, None, None]
    pooled = (x * local * gate).reshape(c, h * w).sum(axis=1) / (h * w)
    m = sigmoid(pooled)
    return m, AttentionCache(x, desc, gate, local, m, k)


def channel_attention(x: np.ndarray, k: AttentionKernels) -> np.ndarray:
    """Per-channel exchange logits in ``(0, 1)``."""
    return attention_forward(x, k)[0]


def attention_backward(cache: AttentionCache, dm: np.ndarray):
    """Gradients of ``sum(dm * m)`` w.r.t. the input and every kernel.

    Returns ``(dx, AttentionKernels)`` with the kernel gradients in the
    kernel fields.  The channel max routes its gradient to the first maximal
    channel.
    """
    x, gate, local, m = cache.x, cache.gate, cache.local, cache.logits
    c, h, w = x.shape
    dpool = np.asarray(dm) * m * (1 - m)
    dz = np.broadcast_to((dpool / (h * w))[:, None, None], x.shape)

    dx = dz * local * gate
    dlocal = dz * x * gate
    dgate = (dz * x * local).sum(axis=0)
    ds = dgate * gate * (1 - gate)

    ds_bias = ds.sum()
    ds_weight = np.einsum("hw,chwij->cij", ds, _windows(cache.desc, SPATIAL_KERNEL))
    k = cache.kernels
    ddesc = _scatter_windows(np.broadcast_to(ds, (2, h, w)), k.s_weight, SPATIAL_KERNEL)
    dx = dx + ddesc[0] / c
    argmax = np.argmax(x, axis=0)
    np.add.at(dx, (argmax, np.arange(h)[:, None], np.arange(w)[None, :]), ddesc[1])

    df_bias = dlocal.sum(axis=(1, 2))
    df_weight = np.einsum("chw,chwij->cij", dlocal, _windows(x, LOCAL_KERNEL))
    dx = dx + _scatter_windows(dlocal, k.f_weight, LOCAL_KERNEL)
    return dx, AttentionKernels(ds_weight, np.asarray(ds_bias), df_weight, df_bias)
