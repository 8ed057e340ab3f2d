"""Top-K channel and position selection and the binary exchange masks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NEAR_TIE = 1e-6


def exchange_count(n: int, p: float) -> int:
    """``floor(n * p)``, with the product rounded to 9 decimals first.

    The rounding keeps cases such as ``100 * 0.29`` (28.999999999999996 in
    binary) at their exact value.
    """
    if not 0 < p < 1:
        raise ValueError(f"exchange fraction must lie in (0, 1), got {p}")
    return int(math.floor(round(n * p, 9)))


@dataclass(frozen=True)
class ExchangeSelection:
    k: int
    values: np.ndarray   # logits of the selected entries, in index order
    indices: np.ndarray  # strictly increasing
    mask: np.ndarray     # 0/1 vector over all entries
    scores: np.ndarray   # every score the selection was made from

    @property
    def margin(self) -> float:
        """Gap between the smallest selected and largest unselected score."""
        rest = np.delete(self.scores, self.indices)
        if rest.size == 0:
            return math.inf
        return float(self.values.min() - rest.max())


def _from_indices(scores: np.ndarray, indices) -> ExchangeSelection:
    idx = np.sort(np.asarray(indices, dtype=np.int64))
    mask = np.zeros(scores.shape[0], dtype=scores.dtype)
    mask[idx] = 1
    return ExchangeSelection(len(idx), scores[idx], idx, mask, scores)


def topk_select(m: np.ndarray, p: float) -> ExchangeSelection:
    """Select the ``floor(len(m) * p)`` largest scores; ties go to the lower index."""
    m = np.asarray(m).ravel()
    k = exchange_count(m.size, p)
    if k == 0:
        raise ValueError(f"floor({m.size} * {p}) == 0: nothing to exchange")
    order = np.argsort(-m, kind="stable")
    return _from_indices(m, order[:k])


def fixed_select(n: int, p: float, scores=None) -> ExchangeSelection:
    """The first ``floor(n * p)`` entries, ignoring the scores."""
    k = exchange_count(n, p)
    if k == 0:
        raise ValueError(f"floor({n} * {p}) == 0: nothing to exchange")
    scores = np.zeros(n) if scores is None else np.asarray(scores).ravel()
    return _from_indices(scores, np.arange(k))


def random_select(n: int, p: float, rng: np.random.Generator, scores=None) -> ExchangeSelection:
    """``floor(n * p)`` entries drawn uniformly without replacement."""
    k = exchange_count(n, p)
    if k == 0:
        raise ValueError(f"floor({n} * {p}) == 0: nothing to exchange")
    scores = np.zeros(n) if scores is None else np.asarray(scores).ravel()
    return _from_indices(scores, rng.choice(n, size=k, replace=False))


def expand_mask(e: np.ndarray, h: int, w: int) -> np.ndarray:
    """Broadcast a per-channel mask to ``(C, H, W)``."""
    e = np.asarray(e)
    return np.repeat(np.repeat(e[:, None, None], h, axis=1), w, axis=2)


def expand_spatial_mask(s: np.ndarray, c: int) -> np.ndarray:
    """Broadcast an ``(H, W)`` position mask across ``c`` channels."""
    s = np.asarray(s)
    return np.repeat(s[None], c, axis=0)
