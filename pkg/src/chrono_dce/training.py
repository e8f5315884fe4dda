"""SGD-with-momentum training, evaluation and softmax ensembling for BKB-mini."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import losses
from . import tensor as tc
from .dct import encode, encoded_channels
from .model import (ModelConfig, RecognizerModel, chron_head, forward, init_model, param_count,
                    predict_proba)
from .skeleton import (DEFAULT_GRAPH, Dataset, NoiseSpec, SkeletonGraph, add_noise, bones,
                       normalize_translate, pad_repeat)

logger = logging.getLogger(__name__)

FULL_EPOCHS = 60
FULL_DECAY_EPOCHS = (28, 36, 44, 52)


class TrainingDiverged(RuntimeError):
    pass


def scaled_decay_epochs(epochs: int) -> Tuple[int, ...]:
    """The 60-epoch decay milestones rescaled to ``epochs`` (nearest integer).

    Milestones that collide or fall outside ``[1, epochs)`` on very short runs are dropped.
    """
    if epochs == FULL_EPOCHS:
        return FULL_DECAY_EPOCHS
    scaled = (int(round(e * epochs / FULL_EPOCHS)) for e in FULL_DECAY_EPOCHS)
    return tuple(sorted({e for e in scaled if 1 <= e < epochs}))


@dataclass(frozen=True)
class FeatureConfig:
    """How raw sequences become network inputs."""

    features: str = "joint"  # joint | bone
    encoding: str = "dce"  # none | dce | tte | rand_pm1 | repeat
    K: int = 8
    frames: int = 300
    encoding_seed: int = 0

    def __post_init__(self):
        if self.features not in ("joint", "bone"):
            raise ValueError(f"features must be 'joint' or 'bone', got {self.features!r}")
        encoded_channels(self.encoding, self.K)  # validates the name

    @property
    def channels(self) -> int:
        return encoded_channels(self.encoding, self.K)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.05
    momentum: float = 0.9
    epochs: int = 20
    decay_epochs: Optional[Tuple[int, ...]] = None
    decay_factor: float = 0.1
    batch_size: int = 16
    seed: int = 0
    lambda_crl: float = 1.0
    # stop once validation accuracy reaches this value (needs validation data)
    target_val_acc: Optional[float] = None
    # rescale the whole gradient when its L2 norm exceeds this; None disables
    grad_clip: Optional[float] = 1.0

    def __post_init__(self):
        if self.decay_epochs is None:
            object.__setattr__(self, "decay_epochs", scaled_decay_epochs(self.epochs))
        d = tuple(int(e) for e in self.decay_epochs)
        object.__setattr__(self, "decay_epochs", d)
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"decay epochs must be strictly increasing, got {d}")
        if d and d[-1] >= self.epochs:
            raise ValueError(f"decay epochs {d} must be < epochs={self.epochs}")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError(f"grad_clip must be positive or None, got {self.grad_clip}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")

    @property
    def weights(self) -> losses.LossWeights:
        return losses.LossWeights(self.lambda_crl)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    n = sum(1 for e in cfg.decay_epochs if e <= epoch)
    return cfg.lr0 * cfg.decay_factor ** n


def sgd_step(params: Sequence[tc.Tensor], grads: Sequence[Optional[np.ndarray]], state: List[np.ndarray],
             lr: float, momentum: float) -> List[np.ndarray]:
    """``v <- momentum * v + g``; ``p <- p - lr * v``.  Missing grads count as zero."""
    if not state:
        state.extend(np.zeros(p.shape) for p in params)
    if not len(params) == len(grads) == len(state):
        raise ValueError("params, grads and velocity state must have equal length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros(p.shape)
        if g.shape != p.shape or state[i].shape != p.shape:
            raise ValueError(f"shape mismatch for parameter {i}: {p.shape}, grad {g.shape}, state {state[i].shape}")
        state[i] = momentum * state[i] + g
        p.data = p.data - lr * state[i]
    return state


def clip_grad_norm(grads: Sequence[Optional[np.ndarray]], max_norm: Optional[float]) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``; returns the raw norm."""
    present = [g for g in grads if g is not None]
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in present))
    if max_norm is not None and norm > max_norm:
        for g in present:
            g *= max_norm / norm
    return norm


# ---------------------------------------------------------------- inputs


def preprocess(seq, feat: FeatureConfig, graph: SkeletonGraph = DEFAULT_GRAPH,
               noise: Optional[NoiseSpec] = None) -> np.ndarray:
    """normalize/translate -> repeat-pad -> optional noise -> bones -> encoding."""
    s = pad_repeat(normalize_translate(seq, graph), feat.frames)
    if noise is not None:
        s = add_noise(s, noise)
    if feat.features == "bone":
        s = bones(s, graph)
    return encode(s.coords, feat.encoding, feat.K, rng_seed=feat.encoding_seed)


def prepare_inputs(dataset: Dataset, feat: FeatureConfig, graph: SkeletonGraph = DEFAULT_GRAPH,
                   noise_eps: float = 0.0, noise_seed: int = 0) -> np.ndarray:
    """Stack preprocessed inputs ``(S, C', T, N, M)``.

    Noise for sample ``i`` is seeded by ``(noise_seed, i)`` so every model in a
    comparison sees identical perturbations.  Random control encodings draw
    per-sample gains from ``(encoding_seed, i)``.
    """
    out = []
    for i, seq in enumerate(dataset.sequences):
        noise = NoiseSpec(noise_eps, seed=mix_seed(noise_seed, i)) if noise_eps > 0 else None
        f = replace(feat, encoding_seed=mix_seed(feat.encoding_seed, i))
        out.append(preprocess(seq, f, graph, noise))
    return np.stack(out) if out else np.zeros((0, feat.channels, feat.frames, graph.N, 1))


def mix_seed(base: int, i: int) -> int:
    return int(np.random.SeedSequence([int(base), int(i)]).generate_state(1)[0])


# ---------------------------------------------------------------- runs


@dataclass
class EvalResult:
    accuracy: float
    per_class: List[float]
    confusion: np.ndarray
    most_confused: List[Optional[int]]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": self.per_class,
            "confusion": self.confusion.tolist(),
            "most_confused": self.most_confused,
        }


@dataclass
class TrainRun:
    config: dict
    epochs: List[dict] = field(default_factory=list)
    final_val_accuracy: Optional[float] = None
    per_class_accuracy: List[float] = field(default_factory=list)
    confusion: List[List[int]] = field(default_factory=list)
    most_confused: List[Optional[int]] = field(default_factory=list)
    wall_time: float = 0.0
    param_count: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def confusion_from_predictions(pred: np.ndarray, labels: np.ndarray, num_classes: int) -> EvalResult:
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels outside [0, {num_classes})")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (labels, pred), 1)
    rows = conf.sum(axis=1)
    per_class = [float(conf[c, c] / rows[c]) if rows[c] else float("nan") for c in range(num_classes)]
    most = []
    for c in range(num_classes):
        off = conf[c].copy()
        off[c] = -1
        most.append(int(np.argmax(off)) if off.max() > 0 else None)
    return EvalResult(float(np.trace(conf) / conf.sum()), per_class, conf, most)


def evaluate(model: RecognizerModel, inputs: np.ndarray, labels) -> EvalResult:
    probs = predict_proba(model, inputs)
    return confusion_from_predictions(np.argmax(probs, axis=1), np.asarray(labels), model.config.num_classes)


def ensemble_eval(models: Sequence[RecognizerModel], inputs: Sequence[np.ndarray], labels) -> EvalResult:
    """Average per-model softmax vectors, then argmax.

    ``inputs[i]`` holds the samples preprocessed the way ``models[i]`` expects.
    """
    if not models:
        raise ValueError("need at least one model")
    n_cls = {m.config.num_classes for m in models}
    if len(n_cls) != 1:
        raise ValueError(f"models disagree on class count: {sorted(n_cls)}")
    if len(inputs) != len(models):
        raise ValueError("one input array per model is required")
    return ensemble_from_probs([predict_proba(m, x) for m, x in zip(models, inputs)], labels)


def ensemble_from_probs(probs: Sequence[np.ndarray], labels) -> EvalResult:
    """Average ``(S, classes)`` probability arrays and score the argmax."""
    if not probs:
        raise ValueError("need at least one probability array")
    shapes = {p.shape for p in probs}
    if len(shapes) != 1:
        raise ValueError(f"probability arrays disagree in shape: {sorted(shapes)}")
    mean = sum(probs) / len(probs)
    return confusion_from_predictions(np.argmax(mean, axis=1), np.asarray(labels), mean.shape[1])


def model_config_for(feat: FeatureConfig, num_classes: int, **overrides) -> ModelConfig:
    return ModelConfig(in_channels=feat.channels, num_classes=num_classes, **overrides)


def train(model_cfg: ModelConfig, inputs: np.ndarray, labels, cfg: TrainConfig,
          val: Optional[Tuple[np.ndarray, np.ndarray]] = None,
          model: Optional[RecognizerModel] = None) -> Tuple[RecognizerModel, TrainRun]:
    """Train from a fixed seed; returns the model and its per-epoch record.

    ``inputs`` are already preprocessed ``(S, C', T, N, M)`` arrays.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(inputs) == 0:
        raise ValueError("training set is empty")
    if inputs.shape[1] != model_cfg.in_channels:
        raise ValueError(f"inputs have {inputs.shape[1]} channels but the model expects {model_cfg.in_channels}")
    if not np.all(np.isfinite(inputs)):
        raise ValueError("training inputs contain non-finite values")
    start = time.perf_counter()
    if model is None:
        model = init_model(model_cfg, seed=cfg.seed)
        model.fit_input_normalization(inputs)
    params = model.parameters()
    velocity: List[np.ndarray] = []
    rng = np.random.default_rng([cfg.seed, 1])
    run = TrainRun(config={"model": model_cfg.to_dict(), "train": asdict(cfg)}, param_count=param_count(model))
    use_crl = cfg.lambda_crl > 0
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = rng.permutation(len(inputs))
        tot_loss = tot_crl = 0.0
        correct = 0
        for b0 in range(0, len(order), cfg.batch_size):
            idx = order[b0:b0 + cfg.batch_size]
            emb, logits = forward(model, inputs[idx])
            cls = losses.cross_entropy(logits, labels[idx])
            crl = losses.crl_loss(chron_head(model, emb)) if use_crl else None
            if not (math.isfinite(cls.item()) and (crl is None or math.isfinite(crl.item()))):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} (lr={lr:g})")
            if crl is None:
                loss = cls
            else:
                loss = losses.combined_loss(cls, crl, cfg.weights)
                tot_crl += crl.item() * len(idx)
            value = loss.item()
            model.zero_grad()
            tc.backward(loss)
            grads = [p.grad for p in params]
            clip_grad_norm(grads, cfg.grad_clip)
            sgd_step(params, grads, velocity, lr, cfg.momentum)
            tot_loss += value * len(idx)
            correct += int((np.argmax(logits.data, axis=1) == labels[idx]).sum())
        rec = {
            "epoch": epoch,
            "lr": lr,
            "loss": tot_loss / len(inputs),
            "crl": tot_crl / len(inputs),
            "train_accuracy": correct / len(inputs),
        }
        if val is not None:
            rec["val_accuracy"] = evaluate(model, *val).accuracy
        run.epochs.append(rec)
        logger.info("epoch %d %s", epoch, rec)
        if cfg.target_val_acc is not None and val is not None and rec["val_accuracy"] >= cfg.target_val_acc:
            break
    if val is not None:
        res = evaluate(model, *val)
        run.final_val_accuracy = res.accuracy
        run.per_class_accuracy = res.per_class
        run.confusion = res.confusion.tolist()
        run.most_confused = res.most_confused
    run.wall_time = time.perf_counter() - start
    return model, run
