"""Unnormalized DCT-2 basis, transforms, and the cosine channel encoding.

The basis row ``b_k[t] = cos(pi / T * (t + 1/2) * k)`` carries no scaling, so
``B @ B.T`` is ``diag(T, T/2, ..., T/2)`` and the inverse has to put the
``1/T`` and ``2/T`` factors back.

Encodings operate on coordinate tensors shaped ``(C, T, N, M)`` and return
``(blocks * C, T, N, M)`` with blocks stacked along the channel axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DctBasis",
    "DceConfig",
    "basis",
    "dct2",
    "idct2",
    "lowpass_revert",
    "dce_encode",
    "control_encoding",
    "encode",
    "encoded_channels",
]


@dataclass(frozen=True)
class DctBasis:
    T: int
    K: int
    B: np.ndarray  # (K, T)


@dataclass(frozen=True)
class DceConfig:
    K: int = 8
    include_original: bool = True

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be positive, got {self.K}")


def basis(T: int, K: int) -> DctBasis:
    if T < 1:
        raise ValueError(f"sequence length must be positive, got T={T}")
    if not 1 <= K <= T:
        raise ValueError(f"need 1 <= K <= T, got K={K}, T={T}")
    t = np.arange(T, dtype=np.float64) + 0.5
    k = np.arange(K, dtype=np.float64)
    B = np.cos((np.pi / T) * np.outer(k, t))
    B.setflags(write=False)
    return DctBasis(T=T, K=K, B=B)


def dct2(x) -> np.ndarray:
    """Coefficients ``d_k = sum_t x_t b_k[t]`` for ``k = 0 .. T-1``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError(f"dct2 expects a non-empty 1-D series, got shape {x.shape}")
    return basis(x.size, x.size).B @ x


def idct2(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 1 or d.size == 0:
        raise ValueError(f"idct2 expects a non-empty 1-D series, got shape {d.shape}")
    T = d.size
    w = np.full(T, 2.0 / T)
    w[0] = 1.0 / T
    return basis(T, T).B.T @ (w * d)


def lowpass_revert(x, keep: int) -> np.ndarray:
    """Drop every coefficient with index >= ``keep`` and transform back."""
    x = np.asarray(x, dtype=np.float64)
    T = x.size
    if not 1 <= keep <= T:
        raise ValueError(f"keep must lie in [1, {T}], got {keep}")
    d = dct2(x)
    d[keep:] = 0.0
    return idct2(d)


def _check_coords(coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 4:
        raise ValueError(f"expected a (C, T, N, M) array, got shape {coords.shape}")
    return coords


def _coords_of(seq) -> np.ndarray:
    return _check_coords(getattr(seq, "coords", seq))


def dce_encode(seq, cfg: DceConfig = DceConfig()) -> np.ndarray:
    """Stack ``[x, b_0*x, ..., b_{K-1}*x]`` along channels (``x`` only if included)."""
    x = _coords_of(seq)
    C, T, N, M = x.shape
    if cfg.K > T:
        raise ValueError(f"K={cfg.K} exceeds sequence length T={T}")
    B = basis(T, cfg.K).B
    blocks = B[:, None, :, None, None] * x[None]  # (K, C, T, N, M)
    if cfg.include_original:
        blocks = np.concatenate([x[None], blocks], axis=0)
    return blocks.reshape(-1, T, N, M)


def control_encoding(seq, kind: str, K: int, rng_seed: int) -> np.ndarray:
    """Same-shaped stand-ins for the DCE: random [-1, 1] gains or plain copies."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    x = _coords_of(seq)
    if kind == "repeat":
        extra = np.broadcast_to(x, (K,) + x.shape)
    elif kind == "rand_pm1":
        rng = np.random.default_rng(rng_seed)
        extra = rng.uniform(-1.0, 1.0, size=(K,) + x.shape) * x[None]
    else:
        raise ValueError(f"unknown control encoding {kind!r}")
    return np.concatenate([x[None], extra], axis=0).reshape(-1, *x.shape[1:])


def encoded_channels(encoding: str, K: int, C: int = 3) -> int:
    if encoding == "none":
        return C
    if encoding in ("dce", "rand_pm1", "repeat"):
        return (K + 1) * C
    if encoding == "tte":
        return K * C
    raise ValueError(f"unknown encoding {encoding!r}")


def encode(coords, encoding: str, K: int = 8, rng_seed: int = 0) -> np.ndarray:
    """Apply an encoding by name: none, dce, tte (no original), rand_pm1, repeat."""
    x = _check_coords(coords)
    if encoding == "none":
        return x.copy()
    if encoding == "dce":
        return dce_encode(x, DceConfig(K=K, include_original=True))
    if encoding == "tte":
        return dce_encode(x, DceConfig(K=K, include_original=False))
    if encoding in ("rand_pm1", "repeat"):
        return control_encoding(x, encoding, K, rng_seed)
    raise ValueError(f"unknown encoding {encoding!r}")
