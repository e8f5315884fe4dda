"""Chronological, classification and probe losses on top of the tensor core.

Chronological values arrive either as a 1-D sequence ``(T',)`` or a batch
``(B, T')``; batched losses are computed per row and averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    lambda_crl: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.lambda_crl) and self.lambda_crl >= 0):
            raise ValueError(f"lambda_crl must be finite and >= 0, got {self.lambda_crl}")


def _as_tensor(v) -> Tensor:
    return v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=np.float64))


def _adjacent_drops(v: Tensor) -> Tensor:
    """``v_t - v_{t+1}`` along the last axis."""
    T = v.shape[-1]
    if T < 2:
        raise ValueError(f"need at least 2 chronological values, got {T}")
    lead = (slice(None),) * (v.data.ndim - 1)
    return tc.sub(tc.take(v, lead + (slice(0, T - 1),)), tc.take(v, lead + (slice(1, T),)))


def _sum_then_batch_mean(x: Tensor) -> Tensor:
    s = tc.reduce(x, axis=-1, kind="sum")
    return tc.reduce(s, axis=0, kind="mean") if s.data.ndim == 1 else s


def crl_loss(v) -> Tensor:
    """``sum_t relu(v_t - v_{t+1})``: zero exactly when ``v`` never decreases."""
    return _sum_then_batch_mean(tc.relu(_adjacent_drops(_as_tensor(v))))


def naive_chron_loss(v) -> Tensor:
    """Plain sum of adjacent differences; telescopes to ``v_first - v_last``."""
    return _sum_then_batch_mean(_adjacent_drops(_as_tensor(v)))


def probe_order_loss(v) -> Tensor:
    return crl_loss(v)


def cross_entropy(logits, label) -> Tensor:
    """Mean ``-log softmax(logits)[label]``; accepts (K,) with an int or (B, K) with B labels."""
    logits = _as_tensor(logits)
    if logits.data.ndim == 1:
        logits = tc.reshape(logits, (1, -1))
    per_row = tc.softmax_cross_entropy(logits, np.atleast_1d(label))
    return tc.reduce(per_row, axis=0, kind="mean")


def combined_loss(cls: Tensor, crl: Tensor, w: LossWeights = LossWeights()) -> Tensor:
    if not (np.all(np.isfinite(cls.data)) and np.all(np.isfinite(crl.data))):
        raise ValueError("combined_loss received a non-finite term")
    if w.lambda_crl == 0:
        return cls
    return tc.add(cls, tc.scale(crl, w.lambda_crl))
