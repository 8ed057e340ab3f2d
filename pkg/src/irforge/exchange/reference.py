"""Explicit-loop reference for the exchange kernel.

Everything here is written with scalar Python loops and shares no code with
the vectorised path, so the two can check each other.  It is slow and only
meant for small shapes.
"""

from __future__ import annotations

import math

import numpy as np

from .core import MECHANISMS, ExchangeConfig, ExchangeParams


def _sig(v: float) -> float:
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def attention_reference(x, kernels):
    """Return ``(m, gate)`` computed pixel by pixel."""
    x = np.asarray(x, dtype=np.float64)
    c, h, w = x.shape
    avg = [[sum(x[ch, y, xx] for ch in range(c)) / c for xx in range(w)] for y in range(h)]
    mx = [[max(x[ch, y, xx] for ch in range(c)) for xx in range(w)] for y in range(h)]
    desc = (avg, mx)

    ks = kernels.s_weight.shape[-1]
    rs = ks // 2
    gate = [[0.0] * w for _ in range(h)]
    for y in range(h):
        for xx in range(w):
            acc = float(kernels.s_bias)
            for d in range(2):
                for i in range(ks):
                    for j in range(ks):
                        yy, xj = y + i - rs, xx + j - rs
                        if 0 <= yy < h and 0 <= xj < w:
                            acc += desc[d][yy][xj] * kernels.s_weight[d, i, j]
            gate[y][xx] = _sig(acc)

    kf = kernels.f_weight.shape[-1]
    rf = kf // 2
    m = []
    for ch in range(c):
        total = 0.0
        for y in range(h):
            for xx in range(w):
                local = float(kernels.f_bias[ch])
                for i in range(kf):
                    for j in range(kf):
                        yy, xj = y + i - rf, xx + j - rf
                        if 0 <= yy < h and 0 <= xj < w:
                            local += x[ch, yy, xj] * kernels.f_weight[ch, i, j]
                total += x[ch, y, xx] * local * gate[y][xx]
        m.append(_sig(total / (h * w)))
    return m, gate


def topk_reference(scores, k):
    """Indices of the ``k`` largest scores, lower index first on ties, sorted."""
    ranked = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return sorted(ranked[:k])


def adapter_reference(x, weights):
    x = np.asarray(x, dtype=np.float64)
    c, h, w = x.shape
    hidden = weights.w1.shape[1]
    out = np.zeros_like(x)
    for y in range(h):
        for xx in range(w):
            act = []
            for u in range(hidden):
                z = weights.b1[u]
                for ch in range(c):
                    z += x[ch, y, xx] * weights.w1[ch, u]
                act.append(z if z > 0 else 0.0)
            for ch in range(c):
                v = weights.b2[ch]
                for u in range(hidden):
                    v += act[u] * weights.w2[u, ch]
                out[ch, y, xx] = v
    return out


def _count(n, p):
    return int(math.floor(round(n * p, 9)))


def _stage_mask(kind, x, kernels, cfg, rng):
    c, h, w = x.shape
    m, gate = attention_reference(x, kernels)
    n = c if kind == "channel" else h * w
    k = _count(n, cfg.p)
    if k == 0:
        raise ValueError("nothing to exchange")
    if cfg.selection == "dynamic":
        scores = m if kind == "channel" else [gate[y][xx] for y in range(h) for xx in range(w)]
        chosen = topk_reference(scores, k)
    elif cfg.selection == "fixed":
        chosen = list(range(k))
    else:
        chosen = sorted(int(i) for i in rng.choice(n, size=k, replace=False))
    full = np.zeros((c, h, w))
    for ch in range(c):
        for y in range(h):
            for xx in range(w):
                pos = ch if kind == "channel" else y * w + xx
                full[ch, y, xx] = 1.0 if pos in chosen else 0.0
    return full


def exchange_reference(x1, x2, cfg: ExchangeConfig, params: ExchangeParams, rng=None):
    """Brute-force ``(Y1, Y2)`` for any mechanism and selection mode."""
    z1 = np.array(x1, dtype=np.float64)
    z2 = np.array(x2, dtype=np.float64)
    c, h, w = z1.shape
    for kind in MECHANISMS[cfg.mechanism]:
        e1 = _stage_mask(kind, z1, params.attn1, cfg, rng)
        e2 = _stage_mask(kind, z2, params.attn2, cfg, rng)
        send1 = np.zeros_like(z1)
        send2 = np.zeros_like(z2)
        for ch in range(c):
            for y in range(h):
                for xx in range(w):
                    send1[ch, y, xx] = z1[ch, y, xx] * e1[ch, y, xx]
                    send2[ch, y, xx] = z2[ch, y, xx] * e2[ch, y, xx]
        if cfg.adapter_enabled:
            recv1 = adapter_reference(send2, params.adapter1)
            recv2 = adapter_reference(send1, params.adapter2)
        else:
            recv1, recv2 = send2, send1
        y1 = np.zeros_like(z1)
        y2 = np.zeros_like(z2)
        for ch in range(c):
            for y in range(h):
                for xx in range(w):
                    y1[ch, y, xx] = z1[ch, y, xx] * (1 - e1[ch, y, xx]) + recv1[ch, y, xx]
                    y2[ch, y, xx] = z2[ch, y, xx] * (1 - e2[ch, y, xx]) + recv2[ch, y, xx]
        z1, z2 = y1, y2
    return z1, z2
