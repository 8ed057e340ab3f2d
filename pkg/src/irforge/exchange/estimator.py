"""scikit-learn wrapper around the exchange kernel."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..rng import derive_stream
from .core import DTYPES, ExchangeConfig, ExchangeParams, exchange_forward

_PARAM_STREAM = 0
_SELECT_STREAM = 1


def _as_pairs(X, dtype):
    X = np.asarray(X, dtype=dtype)
    if X.ndim == 4:
        X = X[None]
    if X.ndim != 5 or X.shape[1] != 2:
        raise ValueError(
            f"expected (2, C, H, W) or (n_samples, 2, C, H, W) feature pairs, got shape {X.shape}"
        )
    if not np.isfinite(X).all():
        raise ValueError("feature maps contain non-finite values")
    return X


class FeatureExchange(TransformerMixin, BaseEstimator):
    """Cross-task hard feature exchange between paired feature maps.

    ``X`` holds feature pairs as ``(n_samples, 2, C, H, W)`` (a single
    ``(2, C, H, W)`` pair is also accepted); ``transform`` returns the
    exchanged pairs ``(Y1, Y2)`` in the same layout.  ``fit`` only draws
    initial weights for the observed channel count; assign ``params_`` to
    use trained weights.
    """

    def __init__(self, p=0.5, mechanism="channel", selection="dynamic",
                 adapter_hidden=64, adapter_enabled=True, dtype="float64", random_state=0):
        self.p = p
        self.mechanism = mechanism
        self.selection = selection
        self.adapter_hidden = adapter_hidden
        self.adapter_enabled = adapter_enabled
        self.dtype = dtype
        self.random_state = random_state

    def _config(self) -> ExchangeConfig:
        return ExchangeConfig(self.p, self.mechanism, self.selection,
                              self.adapter_hidden, self.adapter_enabled, self.dtype)

    def fit(self, X, y=None):
        cfg = self._config()
        X = _as_pairs(X, DTYPES[cfg.dtype])
        self.n_channels_ = X.shape[2]
        rng = derive_stream(int(self.random_state), _PARAM_STREAM)
        self.params_ = ExchangeParams.random(self.n_channels_, cfg.adapter_hidden, rng,
                                             DTYPES[cfg.dtype])
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        cfg = self._config()
        X = _as_pairs(X, DTYPES[cfg.dtype])
        if X.shape[2] != self.n_channels_:
            raise ValueError(f"fitted for {self.n_channels_} channels, got {X.shape[2]}")
        rng = derive_stream(int(self.random_state), _SELECT_STREAM)
        out = np.empty_like(X)
        self.last_caches_ = []
        for i, (x1, x2) in enumerate(X):
            y1, y2, cache = exchange_forward(x1, x2, cfg, self.params_, rng)
            out[i, 0], out[i, 1] = y1, y2
            self.last_caches_.append(cache)
        return out

    def selected_channels(self, X):
        """Top-K indices chosen for each sample's two maps in the first stage."""
        self.transform(X)
        return [(c.stages[0].selection1.indices, c.stages[0].selection2.indices)
                for c in self.last_caches_]
