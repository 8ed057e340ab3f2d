"""Cross-task hard feature exchange with cached forward and exact backward.

For two ``(C, H, W)`` maps and binary masks ``E1``, ``E2`` chosen from each
map's own attention::

    Y1 = X1 * (1 - E1) + A1(X2 * E2)
    Y2 = X2 * (1 - E2) + A2(X1 * E1)

``A1``/``A2`` are per-location adapters (identity when disabled).  Masks come
from channel selection, position selection, or both in sequence.  Selection
is discrete and treated as constant when differentiating.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from .adapter import AdapterCache, AdapterWeights, adapter_backward, adapter_forward
from .attention import AttentionCache, AttentionKernels, attention_backward, attention_forward
from .selection import (
    NEAR_TIE,
    ExchangeSelection,
    expand_mask,
    expand_spatial_mask,
    fixed_select,
    random_select,
    topk_select,
)

MECHANISMS = {
    "channel": ("channel",),
    "spatial": ("spatial",),
    "channel_then_spatial": ("channel", "spatial"),
    "spatial_then_channel": ("spatial", "channel"),
}
SELECTIONS = ("dynamic", "fixed", "random")
DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass(frozen=True)
class ExchangeConfig:
    p: float = 0.5
    mechanism: str = "channel"
    selection: str = "dynamic"
    adapter_hidden: int = 64
    adapter_enabled: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"mechanism must be one of {sorted(MECHANISMS)}, got {self.mechanism!r}")
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}, got {self.selection!r}")
        if self.adapter_hidden < 1:
            raise ValueError("adapter_hidden must be positive")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")


@dataclass
class ExchangeParams:
    """Attention kernels and adapters for both task branches.

    ``adapter1`` feeds ``Y1`` (it maps features received from ``X2``) and
    ``adapter2`` feeds ``Y2``.
    """

    attn1: AttentionKernels
    attn2: AttentionKernels
    adapter1: AdapterWeights
    adapter2: AdapterWeights

    @classmethod
    def random(cls, channels: int, hidden: int, rng: np.random.Generator,
               dtype=np.float64) -> "ExchangeParams":
        return cls(
            AttentionKernels.random(channels, rng, dtype),
            AttentionKernels.random(channels, rng, dtype),
            AdapterWeights.random(channels, hidden, rng, dtype),
            AdapterWeights.random(channels, hidden, rng, dtype),
        )

    def astype(self, dtype) -> "ExchangeParams":
        return ExchangeParams(self.attn1.astype(dtype), self.attn2.astype(dtype),
                              self.adapter1.astype(dtype), self.adapter2.astype(dtype))

    def named_arrays(self) -> List[Tuple[str, np.ndarray]]:
        out = []
        for prefix in ("attn1", "attn2"):
            k = getattr(self, prefix)
            out += [(f"{prefix}.s_weight", k.s_weight), (f"{prefix}.s_bias", k.s_bias),
                    (f"{prefix}.f_weight", k.f_weight), (f"{prefix}.f_bias", k.f_bias)]
        for prefix in ("adapter1", "adapter2"):
            a = getattr(self, prefix)
            out += [(f"{prefix}.w1", a.w1), (f"{prefix}.b1", a.b1),
                    (f"{prefix}.w2", a.w2), (f"{prefix}.b2", a.b2)]
        return out

    @classmethod
    def from_named_arrays(cls, arrays: dict) -> "ExchangeParams":
        def attn(p):
            return AttentionKernels(arrays[f"{p}.s_weight"], arrays[f"{p}.s_bias"],
                                    arrays[f"{p}.f_weight"], arrays[f"{p}.f_bias"])

        def adapter(p):
            return AdapterWeights(arrays[f"{p}.w1"], arrays[f"{p}.b1"],
                                  arrays[f"{p}.w2"], arrays[f"{p}.b2"])

        return cls(attn("attn1"), attn("attn2"), adapter("adapter1"), adapter("adapter2"))


@dataclass
class StageCache:
    kind: str
    mask1: np.ndarray  # full (C, H, W)
    mask2: np.ndarray
    selection1: Optional[ExchangeSelection]
    selection2: Optional[ExchangeSelection]
    adapter1: Optional[AdapterCache] = None
    adapter2: Optional[AdapterCache] = None


@dataclass
class ExchangeCache:
    config: ExchangeConfig
    attention1: AttentionCache
    attention2: AttentionCache
    stages: List[StageCache] = field(default_factory=list)

    @property
    def m1(self) -> np.ndarray:
        return self.attention1.logits

    @property
    def m2(self) -> np.ndarray:
        return self.attention2.logits

    @property
    def near_tie(self) -> bool:
        """True if a dynamic selection was decided by a margin under 1e-6."""
        if self.config.selection != "dynamic":
            return False
        return any(
            sel is not None and sel.margin < NEAR_TIE
            for st in self.stages for sel in (st.selection1, st.selection2)
        )


@dataclass
class ExchangeGrads:
    x1: np.ndarray
    x2: np.ndarray
    params: ExchangeParams


def check_feature_map(x, dtype=np.float64, name: str = "X") -> np.ndarray:
    x = np.asarray(x, dtype=dtype)
    if x.ndim != 3 or min(x.shape) < 1:
        raise ValueError(f"{name} must be a non-empty (C, H, W) array, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")
    return x


def _select(kind: str, attn: AttentionCache, cfg: ExchangeConfig, rng) -> ExchangeSelection:
    if kind == "channel":
        scores = attn.logits
    else:
        scores = attn.gate.ravel()
    n = scores.size
    if cfg.selection == "dynamic":
        return topk_select(scores, cfg.p)
    if cfg.selection == "fixed":
        return fixed_select(n, cfg.p, scores)
    if rng is None:
        raise ValueError("random selection needs a random generator")
    return random_select(n, cfg.p, rng, scores)


def _full_mask(kind: str, vec: np.ndarray, shape, dtype) -> np.ndarray:
    c, h, w = shape
    vec = np.asarray(vec, dtype=dtype)
    if vec.shape == shape:
        return vec
    if kind == "channel":
        if vec.shape != (c,):
            raise ValueError(f"channel mask must have shape ({c},), got {vec.shape}")
        return expand_mask(vec, h, w)
    vec = vec.reshape(h, w) if vec.size == h * w else vec
    if vec.shape != (h, w):
        raise ValueError(f"position mask must have shape ({h}, {w}), got {vec.shape}")
    return expand_spatial_mask(vec, c)


def _swap(x1, x2, e1, e2, params: ExchangeParams, cfg: ExchangeConfig, st: StageCache):
    keep1, keep2 = x1 * (1 - e1), x2 * (1 - e2)
    send1, send2 = x1 * e1, x2 * e2
    if cfg.adapter_enabled:
        recv1, st.adapter1 = adapter_forward(send2, params.adapter1)
        recv2, st.adapter2 = adapter_forward(send1, params.adapter2)
    else:
        recv1, recv2 = send2, send1
    return keep1 + recv1, keep2 + recv2


def exchange_forward(x1, x2, cfg: ExchangeConfig, params: ExchangeParams,
                     rng: Optional[np.random.Generator] = None, masks=None):
    """Run the exchange and keep what :func:`exchange_backward` needs.

    ``masks`` optionally forces the selection: a pair ``(mask1, mask2)`` of
    per-channel vectors (channel stages), ``(H, W)`` maps (spatial stages) or
    full ``(C, H, W)`` masks.  Returns ``(Y1, Y2, cache)``.
    """
    dtype = DTYPES[cfg.dtype]
    x1 = check_feature_map(x1, dtype, "X1")
    x2 = check_feature_map(x2, dtype, "X2")
    if x1.shape != x2.shape:
        raise ValueError(f"X1 {x1.shape} and X2 {x2.shape} differ in shape")
    if params.attn1.channels != x1.shape[0] or params.adapter1.channels != x1.shape[0]:
        raise ValueError(f"parameters do not match {x1.shape[0]} channels")

    _, a1 = attention_forward(x1, params.attn1)
    _, a2 = attention_forward(x2, params.attn2)
    cache = ExchangeCache(cfg, a1, a2)
    z1, z2 = x1, x2
    for i, kind in enumerate(MECHANISMS[cfg.mechanism]):
        if i == 0:
            s1_attn, s2_attn = a1, a2
        else:
            s1_attn = attention_forward(z1, params.attn1)[1]
            s2_attn = attention_forward(z2, params.attn2)[1]
        if masks is None:
            sel1 = _select(kind, s1_attn, cfg, rng)
            sel2 = _select(kind, s2_attn, cfg, rng)
            e1 = _full_mask(kind, sel1.mask, x1.shape, dtype)
            e2 = _full_mask(kind, sel2.mask, x1.shape, dtype)
        else:
            sel1 = sel2 = None
            e1 = _full_mask(kind, masks[0], x1.shape, dtype)
            e2 = _full_mask(kind, masks[1], x1.shape, dtype)
        st = StageCache(kind, e1, e2, sel1, sel2)
        z1, z2 = _swap(z1, z2, e1, e2, params, cfg, st)
        cache.stages.append(st)
    return z1, z2, cache


def exchange_backward(cache: ExchangeCache, dy1, dy2, dm1=None, dm2=None) -> ExchangeGrads:
    """Gradients of ``<dy1, Y1> + <dy2, Y2> + <dm1, m1> + <dm2, m2>``.

    ``m1``/``m2`` are the attention logits of the inputs.  Selection masks are
    held constant, so attention kernels receive gradient only through ``dm``.
    """
    cfg = cache.config
    dtype = DTYPES[cfg.dtype]
    g1 = np.asarray(dy1, dtype=dtype)
    g2 = np.asarray(dy2, dtype=dtype)
    c = cache.attention1.x.shape[0]
    hidden = cfg.adapter_hidden
    if cfg.adapter_enabled and cache.stages:
        hidden = cache.stages[0].adapter1.weights.hidden
    ad1 = AdapterWeights.zeros(c, hidden, dtype)
    ad2 = AdapterWeights.zeros(c, hidden, dtype)
    for st in reversed(cache.stages):
        e1, e2 = st.mask1, st.mask2
        if cfg.adapter_enabled:
            dsend2, w1g = adapter_backward(st.adapter1, g1)
            dsend1, w2g = adapter_backward(st.adapter2, g2)
            ad1 = _add_adapter(ad1, w1g)
            ad2 = _add_adapter(ad2, w2g)
        else:
            dsend2, dsend1 = g1, g2
        g1, g2 = g1 * (1 - e1) + dsend1 * e1, g2 * (1 - e2) + dsend2 * e2

    k1 = AttentionKernels.zeros(c, dtype)
    k2 = AttentionKernels.zeros(c, dtype)
    if dm1 is not None:
        dx, k1 = attention_backward(cache.attention1, np.asarray(dm1, dtype=dtype))
        g1 = g1 + dx
    if dm2 is not None:
        dx, k2 = attention_backward(cache.attention2, np.asarray(dm2, dtype=dtype))
        g2 = g2 + dx
    return ExchangeGrads(g1, g2, ExchangeParams(k1, k2, ad1, ad2))


def _add_adapter(a: AdapterWeights, b: AdapterWeights) -> AdapterWeights:
    return AdapterWeights(a.w1 + b.w1, a.b1 + b.b1, a.w2 + b.w2, a.b2 + b.b2)


def hard_exchange(x1, x2, cfg: ExchangeConfig, params: ExchangeParams,
                  rng: Optional[np.random.Generator] = None, masks=None):
    """``(Y1, Y2)`` under ``cfg.mechanism``."""
    y1, y2, _ = exchange_forward(x1, x2, cfg, params, rng, masks)
    return y1, y2


def channel_exchange(x1, x2, cfg: ExchangeConfig, params: ExchangeParams, rng=None, masks=None):
    return hard_exchange(x1, x2, replace(cfg, mechanism="channel"), params, rng, masks)


def spatial_exchange(x1, x2, cfg: ExchangeConfig, params: ExchangeParams, rng=None, masks=None):
    """Exchange over positions; composed mechanisms in ``cfg`` are kept as given."""
    if cfg.mechanism == "channel":
        cfg = replace(cfg, mechanism="spatial")
    return hard_exchange(x1, x2, cfg, params, rng, masks)
