"""BKB-mini: graph + dilated temporal convolution backbone with two heads.

Layout inside the network is channel-first ``(C, B, T, N)`` so every channel
mix is one BLAS matmul.  Inputs arrive as ``(B, C, T, N, M)`` and persons are
max-pooled away before the first unit.
"""

from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from . import tensor as tc
from .skeleton import DEFAULT_GRAPH, SkeletonGraph
from .tensor import Tensor

CHECKPOINT_FORMAT = "chrono-dce-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 27
    num_classes: int = 8
    num_joints: int = 9
    widths: Tuple[int, ...] = (16, 32, 48)
    kernel_size: int = 3
    dilations: Tuple[int, ...] = (1, 2, 3)
    strides: Tuple[int, ...] = (2, 2, 1)
    chron_hidden: int = 32
    edges: Tuple[Tuple[int, int], ...] = DEFAULT_GRAPH.edges

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        object.__setattr__(self, "edges", tuple((int(p), int(c)) for p, c in self.edges))
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if any(d < 1 for d in self.dilations) or not self.dilations:
            raise ValueError(f"dilations must be positive, got {self.dilations}")
        if len(self.strides) != len(self.widths):
            raise ValueError(f"need one stride per unit: {len(self.widths)} widths, {len(self.strides)} strides")
        if any(s < 1 for s in self.strides):
            raise ValueError(f"strides must be positive, got {self.strides}")

    @property
    def num_stus(self) -> int:
        return len(self.widths)

    @property
    def embed_dim(self) -> int:
        return self.widths[-1]

    def graph(self) -> SkeletonGraph:
        return SkeletonGraph(N=self.num_joints, edges=self.edges)

    def output_frames(self, T: int) -> int:
        for s in self.strides:
            T = -(-T // s)
        return T

    def receptive_field(self) -> int:
        return 1 + sum((self.kernel_size - 1) * d for d in self.dilations)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["edges"] = [list(e) for e in self.edges]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        d["dilations"] = tuple(d["dilations"])
        d["strides"] = tuple(d["strides"])
        d["edges"] = tuple(tuple(e) for e in d["edges"])
        return cls(**d)


def normalized_adjacency(A: np.ndarray) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with D the degree matrix of ``A + I``."""
    A_hat = np.asarray(A, dtype=np.float64) + np.eye(A.shape[0])
    d = 1.0 / np.sqrt(A_hat.sum(axis=1))
    return d[:, None] * A_hat * d[None, :]


@dataclass
class RecognizerModel:
    config: ModelConfig
    params: "OrderedDict[str, Tensor]"
    adjacency: np.ndarray = field(repr=False, default=None)
    # fixed per-(channel, joint) input standardization, fitted on training data
    input_shift: Optional[np.ndarray] = field(repr=False, default=None)
    input_scale: Optional[np.ndarray] = field(repr=False, default=None)

    def __post_init__(self):
        if self.adjacency is None:
            self.adjacency = normalized_adjacency(self.config.graph().adjacency())
        shape = (self.config.in_channels, self.config.num_joints)
        if self.input_shift is None:
            self.input_shift = np.zeros(shape)
        if self.input_scale is None:
            self.input_scale = np.ones(shape)

    def fit_input_normalization(self, inputs: np.ndarray, floor: float = 1e-3) -> None:
        """Per channel: subtract the mean, divide by the std (at least ``floor``).

        Statistics pool over samples, frames and joints.  Per-joint statistics
        would blow up near-constant joints (the root sits at the origin).
        """
        pooled = np.asarray(inputs).max(axis=4)  # (S, C, T, N)
        shape = (self.config.in_channels, self.config.num_joints)
        mean = pooled.mean(axis=(0, 2, 3))
        std = np.maximum(pooled.std(axis=(0, 2, 3)), floor)
        self.input_shift = np.broadcast_to(mean[:, None], shape).copy()
        self.input_scale = np.broadcast_to(std[:, None], shape).copy()

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self) -> None:
        tc.zero_grad(self.parameters())

    def state(self) -> Dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            p = self.params[k]
            if p.shape != v.shape:
                raise ValueError(f"parameter {k}: expected shape {p.shape}, got {v.shape}")
            p.data = np.array(v, dtype=np.float64)

    def copy(self) -> "RecognizerModel":
        params = OrderedDict((k, Tensor(v.data.copy(), requires_grad=True)) for k, v in self.params.items())
        return RecognizerModel(self.config, params, self.adjacency.copy(),
                               self.input_shift.copy(), self.input_scale.copy())


def init_model(config: ModelConfig, seed: int = 0) -> RecognizerModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    rng = np.random.default_rng(seed)
    params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(name, shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    c_in = config.in_channels
    k = config.kernel_size
    for s, width in enumerate(config.widths):
        add(f"stu{s}.sfe.weight", (width, c_in), c_in)
        add(f"stu{s}.sfe.bias", (width,), c_in)
        for i, _ in enumerate(config.dilations):
            add(f"stu{s}.tpe{i}.weight", (width, width, k), width * k)
            add(f"stu{s}.tpe{i}.bias", (width,), width * k)
        c_in = width
    D = config.embed_dim
    add("cls.weight", (config.num_classes, D), D)
    add("cls.bias", (config.num_classes,), D)
    add("chron.fc1.weight", (config.chron_hidden, D), D)
    add("chron.fc1.bias", (config.chron_hidden,), D)
    add("chron.fc2.weight", (1, config.chron_hidden), config.chron_hidden)
    add("chron.fc2.bias", (1,), config.chron_hidden)
    return RecognizerModel(config, params)


# ---------------------------------------------------------------- layers


def channel_linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Mix axis 0 of a channel-first tensor with ``w`` of shape (C_out, C_in)."""
    rest = x.shape[1:]
    y = tc.matmul(w, tc.reshape(x, (x.shape[0], -1)))
    y = tc.reshape(y, (w.shape[0],) + rest)
    return tc.add_channel_bias(y, b) if b is not None else y


def sfe_forward(x: Tensor, weight: Tensor, bias: Optional[Tensor], adjacency: np.ndarray) -> Tensor:
    """Spatial feature extractor: ``relu(W x A_hat (+ b))`` for every frame.

    ``x`` is ``(C_in, B, T, N)``.
    """
    C, B, T, N = x.shape
    if adjacency.shape != (N, N):
        raise ValueError(f"adjacency {adjacency.shape} does not match {N} joints")
    y = tc.matmul(weight, tc.reshape(x, (C, -1)))
    y = tc.matmul(tc.reshape(y, (-1, N)), Tensor(adjacency))
    y = tc.reshape(y, (weight.shape[0], B, T, N))
    if bias is not None:
        y = tc.add_channel_bias(y, bias)
    return tc.relu(y)


def tpe_forward(x: Tensor, weight: Tensor, bias: Optional[Tensor], dilation: int, stride: int = 1) -> Tensor:
    """Temporal pattern extractor: dilated conv + relu with a residual path."""
    y = tc.relu(tc.temporal_conv(x, weight, dilation=dilation, stride=stride, bias=bias))
    if y.shape[0] == x.shape[0]:
        skip = x if stride == 1 else tc.take(x, (slice(None), slice(None), slice(None, None, stride)))
        y = tc.add(y, skip)
    return y


def _as_input(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def backbone(model: RecognizerModel, x) -> Tensor:
    """Encoded input ``(B, C, T, N, M)`` -> frame embeddings ``(D, B, T')``."""
    x = _as_input(x)
    if x.data.ndim == 4:
        x = tc.reshape(x, (1,) + x.shape)
    cfg = model.config
    if x.data.ndim != 5:
        raise ValueError(f"expected input (B, C, T, N, M), got {x.shape}")
    if x.shape[1] != cfg.in_channels:
        raise ValueError(
            f"input has {x.shape[1]} channels but the model expects {cfg.in_channels}; "
            "check that the encoding and K match the model")
    if x.shape[3] != cfg.num_joints:
        raise ValueError(f"input has {x.shape[3]} joints, model expects {cfg.num_joints}")
    h = tc.reduce(x, axis=4, kind="max")  # persons
    h = tc.transpose(h, (1, 0, 2, 3))  # (C, B, T, N)
    shift = model.input_shift[:, None, None, :]
    inv = 1.0 / model.input_scale[:, None, None, :]
    if h.requires_grad:
        h = tc.mul(tc.sub(h, Tensor(np.broadcast_to(shift, h.shape))), Tensor(np.broadcast_to(inv, h.shape)))
    else:
        h = Tensor((h.data - shift) * inv)
    p = model.params
    for s, stride in enumerate(cfg.strides):
        h = sfe_forward(h, p[f"stu{s}.sfe.weight"], p[f"stu{s}.sfe.bias"], model.adjacency)
        last = len(cfg.dilations) - 1
        for i, d in enumerate(cfg.dilations):
            h = tpe_forward(h, p[f"stu{s}.tpe{i}.weight"], p[f"stu{s}.tpe{i}.bias"], d,
                            stride=stride if i == last else 1)
    return tc.reduce(h, axis=3, kind="mean")  # spatial pooling over joints


def classify(model: RecognizerModel, emb: Tensor) -> Tensor:
    """Mean over frames then a linear layer; returns logits ``(B, classes)``."""
    pooled = tc.reduce(emb, axis=2, kind="mean")  # (D, B)
    logits = channel_linear(pooled, model.params["cls.weight"], model.params["cls.bias"])
    return tc.transpose(logits, (1, 0))


def forward(model: RecognizerModel, x) -> Tuple[Tensor, Tensor]:
    emb = backbone(model, x)
    return emb, classify(model, emb)


def chron_head(model: RecognizerModel, emb: Tensor) -> Tensor:
    """Per-frame two-layer perceptron; ``(D, B, T')`` -> chronological values ``(B, T')``."""
    D, B, T = emb.shape
    p = model.params
    h = tc.relu(channel_linear(tc.reshape(emb, (D, B * T)), p["chron.fc1.weight"], p["chron.fc1.bias"]))
    v = channel_linear(h, p["chron.fc2.weight"], p["chron.fc2.bias"])
    return tc.reshape(v, (B, T))


def param_count(model_or_config) -> Dict[str, int]:
    """Scalar parameter counts split into backbone, classification head and chron head."""
    params = model_or_config.params if isinstance(model_or_config, RecognizerModel) else \
        init_model(model_or_config).params
    counts = {"backbone": 0, "cls_head": 0, "chron_head": 0}
    for name, t in params.items():
        key = "cls_head" if name.startswith("cls.") else "chron_head" if name.startswith("chron.") else "backbone"
        counts[key] += int(t.data.size)
    counts["total"] = sum(counts.values())
    return counts


def predict_proba(model: RecognizerModel, inputs: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Softmax class probabilities for ``(S, C, T, N, M)`` inputs, no graph kept."""
    frozen = frozen_copy(model)
    out = []
    for i in range(0, len(inputs), batch_size):
        _, logits = forward(frozen, inputs[i:i + batch_size])
        z = logits.data - logits.data.max(axis=1, keepdims=True)
        e = np.exp(z)
        out.append(e / e.sum(axis=1, keepdims=True))
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.config.num_classes))


def frozen_copy(model: RecognizerModel) -> RecognizerModel:
    """Same weights wrapped as constants so forward passes record no graph."""
    params = OrderedDict((k, Tensor(v.data)) for k, v in model.params.items())
    return RecognizerModel(model.config, params, model.adjacency, model.input_shift, model.input_scale)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: RecognizerModel, path, extra: Optional[dict] = None) -> Path:
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (little-endian float64 payload)."""
    base = Path(path)
    if base.suffix in (".json", ".bin"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    tensors = list(model.params.items()) + [("buffer.input_shift", Tensor(model.input_shift)),
                                            ("buffer.input_scale", Tensor(model.input_scale))]
    for name, t in tensors:
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.nbytes
    payload = b"".join(chunks)
    bin_path = base.with_suffix(".bin")
    bin_path.write_bytes(payload)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "layout": "parameters concatenated in listed order; each C-order, little-endian IEEE-754 float64; "
                  "offset is in bytes from the start of the payload",
        "dtype": "<f8",
        "payload": bin_path.name,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "params": entries,
    }
    if extra:
        manifest["extra"] = extra
    json_path = base.with_suffix(".json")
    json_path.write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return json_path


def load_checkpoint(path) -> Tuple[RecognizerModel, dict]:
    base = Path(path)
    if base.suffix in (".json", ".bin"):
        base = base.with_suffix("")
    manifest = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{base}.json is not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} manifest")
    payload = (base.parent / manifest["payload"]).read_bytes()
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise ValueError(f"checkpoint payload {manifest['payload']} does not match its recorded hash")
    config = ModelConfig.from_dict(manifest["config"])
    model = init_model(config, seed=0)
    for entry in manifest["params"]:
        arr = np.frombuffer(payload, dtype="<f8", count=entry["count"], offset=entry["offset"])
        arr = arr.astype(np.float64).reshape(entry["shape"])
        if entry["name"].startswith("buffer."):
            setattr(model, entry["name"][len("buffer."):], arr)
        else:
            model.params[entry["name"]].data = arr
    return model, manifest.get("extra", {})
