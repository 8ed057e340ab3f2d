"""Dynamic cross-task feature hard exchange: attention, Top-K selection, adapters."""

from .adapter import AdapterWeights, adapter_backward, adapter_forward
from .attention import AttentionKernels, attention_backward, attention_forward, channel_attention
from .core import (
    ExchangeCache,
    ExchangeConfig,
    ExchangeGrads,
    ExchangeParams,
    channel_exchange,
    exchange_backward,
    exchange_forward,
    hard_exchange,
    spatial_exchange,
)
from .estimator import FeatureExchange
from .io import load_params, save_params
from .selection import ExchangeSelection, exchange_count, expand_mask, topk_select

__all__ = [
    "AdapterWeights", "AttentionKernels", "ExchangeCache", "ExchangeConfig", "ExchangeGrads",
    "ExchangeParams", "ExchangeSelection", "FeatureExchange", "adapter_backward",
    "adapter_forward", "attention_backward", "attention_forward", "channel_attention",
    "channel_exchange", "exchange_backward", "exchange_count", "exchange_forward",
    "expand_mask", "hard_exchange", "load_params", "save_params", "spatial_exchange",
    "topk_select",
]
