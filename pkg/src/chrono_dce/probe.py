"""Chronological-order probe: does an input encoding let a network tell time?

A BKB-mini backbone keeps its temporal axis, a per-frame perceptron maps each
frame embedding to a scalar, and min-max normalization squeezes the curve into
[0, 1].  Training minimizes the adjacent-drop hinge on the normalized curve;
the score is the share of adjacent frame pairs that do not decrease.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import losses
from . import tensor as tc
from .dct import dce_encode, DceConfig
from .model import ModelConfig, RecognizerModel, frozen_copy, backbone, chron_head, init_model
from .skeleton import DEFAULT_GRAPH, Dataset, normalize_translate, pad_repeat
from .training import TrainingDiverged, mix_seed, clip_grad_norm, sgd_step

logger = logging.getLogger(__name__)

PROBE_KINDS = ("none", "random", "tte")
MONOTONE_TOL = 1e-12


@dataclass(frozen=True)
class ProbeConfig:
    kind: str = "tte"
    K: int = 3
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 16
    frames: int = 300
    seed: int = 0
    include_original: bool = False
    grad_clip: Optional[float] = 1.0

    def __post_init__(self):
        if self.kind not in PROBE_KINDS:
            raise ValueError(f"probe kind must be one of {PROBE_KINDS}, got {self.kind!r}")
        if self.kind == "tte" and self.K < 1:
            raise ValueError("tte probe needs K >= 1")

    @property
    def channels(self) -> int:
        if self.kind == "none":
            return 3
        return (self.K + int(self.include_original)) * 3


def minmax_norm(v) -> Tuple[np.ndarray, bool]:
    """``(v - min) / (max - min)``; a constant input gives zeros and ``True``."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("minmax_norm needs at least one value")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v), True
    return (v - lo) / (hi - lo), False


def monotonicity_fraction(v) -> float:
    v = np.asarray(v, dtype=np.float64)
    if v.size < 2:
        raise ValueError("monotonicity_fraction needs at least 2 values")
    return float(np.mean(v[1:] >= v[:-1] - MONOTONE_TOL))


def probe_input(seq, cfg: ProbeConfig, sample_seed: int) -> np.ndarray:
    """Encode one sequence for the probe; the random gains are frozen per sequence."""
    x = pad_repeat(normalize_translate(seq, DEFAULT_GRAPH), cfg.frames).coords
    if cfg.kind == "none":
        return x.copy()
    if cfg.kind == "tte":
        return dce_encode(x, DceConfig(K=cfg.K, include_original=cfg.include_original))
    reps = cfg.K + int(cfg.include_original)
    gains = np.random.default_rng(sample_seed).uniform(0.0, 1.0, size=(reps,) + x.shape)
    return (gains * x[None]).reshape(-1, *x.shape[1:])


def probe_inputs(dataset: Dataset, cfg: ProbeConfig) -> np.ndarray:
    return np.stack([probe_input(s, cfg, mix_seed(cfg.seed + 7919, i)) for i, s in enumerate(dataset.sequences)])


def probe_model_config(cfg: ProbeConfig, **overrides) -> ModelConfig:
    # the classification head is unused; one class keeps it minimal
    return ModelConfig(in_channels=cfg.channels, num_classes=1, **overrides)


def probe_forward(model: RecognizerModel, inputs) -> Tuple[tc.Tensor, np.ndarray]:
    """Normalized per-frame values ``(B, T')`` and per-sample degenerate flags."""
    values = chron_head(model, backbone(model, inputs))
    return tc.minmax_normalize(values, axis=1)


@dataclass
class ProbeResult:
    kind: str
    curves: np.ndarray  # (S, T') normalized held-out curves
    fractions: List[float]
    mean_fraction: float
    untrained_mean_fraction: float
    degenerate: int
    epoch_losses: List[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("curves")
        return d


def _curves(model, inputs, batch_size=32):
    frozen = frozen_copy(model)
    outs, flags = [], []
    for i in range(0, len(inputs), batch_size):
        v, deg = probe_forward(frozen, inputs[i:i + batch_size])
        outs.append(v.data)
        flags.append(deg)
    return np.concatenate(outs), np.concatenate(flags)


def probe_train(train_set: Dataset, heldout: Dataset, cfg: ProbeConfig,
                model_overrides: Optional[dict] = None) -> Tuple[RecognizerModel, ProbeResult]:
    if len(train_set) == 0 or len(heldout) == 0:
        raise ValueError("probe needs non-empty training and held-out sets")
    X = probe_inputs(train_set, cfg)
    Xh = probe_inputs(heldout, cfg)
    model = init_model(probe_model_config(cfg, **(model_overrides or {})), seed=cfg.seed)
    model.fit_input_normalization(X)
    curves0, _ = _curves(model, Xh)
    untrained = float(np.mean([monotonicity_fraction(c) for c in curves0]))
    params = model.parameters()
    velocity: list = []
    rng = np.random.default_rng([cfg.seed, 2])
    epoch_losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for b0 in range(0, len(order), cfg.batch_size):
            idx = order[b0:b0 + cfg.batch_size]
            v, _ = probe_forward(model, X[idx])
            loss = losses.probe_order_loss(v)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"probe loss became non-finite at epoch {epoch}")
            model.zero_grad()
            tc.backward(loss)
            grads = [p.grad for p in params]
            clip_grad_norm(grads, cfg.grad_clip)
            sgd_step(params, grads, velocity, cfg.lr, cfg.momentum)
            total += value * len(idx)
        epoch_losses.append(total / len(X))
        logger.info("probe %s epoch %d loss %.5f", cfg.kind, epoch, epoch_losses[-1])
    curves, deg = _curves(model, Xh)
    fractions = [monotonicity_fraction(c) for c in curves]
    result = ProbeResult(
        kind=cfg.kind,
        curves=curves,
        fractions=fractions,
        mean_fraction=float(np.mean(fractions)),
        untrained_mean_fraction=untrained,
        degenerate=int(deg.sum()),
        epoch_losses=epoch_losses,
        config=asdict(cfg),
    )
    return model, result


def curves_csv_rows(result: ProbeResult, sample: int = 0):
    """Rows of (frame, value, kind) for one held-out curve."""
    return [(t, float(v), result.kind) for t, v in enumerate(result.curves[sample])]
