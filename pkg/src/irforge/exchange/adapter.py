"""Per-location two-layer perceptron applied to exchanged features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AdapterWeights:
    w1: np.ndarray  # (C, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, C)
    b2: np.ndarray  # (C,)

    @property
    def channels(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    def check(self) -> None:
        c, hidden = self.w1.shape
        if self.b1.shape != (hidden,) or self.w2.shape != (hidden, c) or self.b2.shape != (c,):
            raise ValueError(
                f"inconsistent adapter shapes: w1 {self.w1.shape}, b1 {self.b1.shape}, "
                f"w2 {self.w2.shape}, b2 {self.b2.shape}"
            )

    @classmethod
    def zeros(cls, channels: int, hidden: int = 64, dtype=np.float64) -> "AdapterWeights":
        return cls(np.zeros((channels, hidden), dtype), np.zeros(hidden, dtype),
                   np.zeros((hidden, channels), dtype), np.zeros(channels, dtype))

    @classmethod
    def random(cls, channels: int, hidden: int, rng: np.random.Generator,
               dtype=np.float64) -> "AdapterWeights":
        return cls(
            (rng.standard_normal((channels, hidden)) * np.sqrt(2.0 / channels)).astype(dtype),
            (rng.standard_normal(hidden) * 0.1).astype(dtype),
            (rng.standard_normal((hidden, channels)) / np.sqrt(hidden)).astype(dtype),
            (rng.standard_normal(channels) * 0.1).astype(dtype),
        )

    def astype(self, dtype) -> "AdapterWeights":
        return AdapterWeights(*(np.asarray(a, dtype=dtype) for a in (self.w1, self.b1, self.w2, self.b2)))

    def permuted(self, perm) -> "AdapterWeights":
        """Weights that commute with reordering channels as ``X[perm]``."""
        return AdapterWeights(self.w1[perm], self.b1, self.w2[:, perm], self.b2[perm])


@dataclass
class AdapterCache:
    x: np.ndarray       # (HW, C)
    pre: np.ndarray     # (HW, hidden)
    act: np.ndarray     # (HW, hidden)
    shape: tuple
    weights: AdapterWeights


def adapter_forward(x: np.ndarray, w: AdapterWeights):
    """Map every ``X[:, y, x]`` through dense -> ReLU -> dense.  Returns ``(out, cache)``."""
    w.check()
    c, h, wd = x.shape
    if w.channels != c:
        raise ValueError(f"adapter built for {w.channels} channels, input has {c}")
    flat = x.reshape(c, h * wd).T
    pre = flat @ w.w1 + w.b1
    act = np.maximum(pre, 0)
    out = act @ w.w2 + w.b2
    return out.T.reshape(c, h, wd), AdapterCache(flat, pre, act, x.shape, w)


def adapter_backward(cache: AdapterCache, dout: np.ndarray):
    """Returns ``(dx, AdapterWeights)`` holding the weight gradients."""
    w = cache.weights
    c = cache.shape[0]
    g = dout.reshape(c, -1).T
    dw2 = cache.act.T @ g
    db2 = g.sum(axis=0)
    dpre = (g @ w.w2.T) * (cache.pre > 0)
    dw1 = cache.x.T @ dpre
    db1 = dpre.sum(axis=0)
    dx = (dpre @ w.w1.T).T.reshape(cache.shape)
    return dx, AdapterWeights(dw1, db1, dw2, db2)
