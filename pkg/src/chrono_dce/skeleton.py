"""Skeleton sequences: preprocessing, bone features, file format, synthesis, noise.

Coordinates are stored as ``(C, T, N, M)`` float64 arrays with ``C = 3``.
The default desk-scale skeleton has nine joints and a single person slot::

    0 root (spine base)   1 neck   2 head
    3 left elbow   4 left hand   5 right elbow   6 right hand
    7 left foot    8 right foot
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

FORMAT_VERSION = 1

__all__ = [
    "SkeletonSequence",
    "SkeletonGraph",
    "NoiseSpec",
    "ClassProgram",
    "SyntheticSpec",
    "Dataset",
    "DEFAULT_GRAPH",
    "save",
    "load",
    "pad_repeat",
    "normalize_translate",
    "bones",
    "add_noise",
    "time_reverse",
    "synth_generate",
    "reversal_pair_spec",
    "mixed_spec",
    "save_dataset",
    "load_dataset",
]


class SequenceFormatError(ValueError):
    pass


@dataclass
class SkeletonSequence:
    coords: np.ndarray
    label: int = 0
    valid_len: Optional[int] = None
    persons: int = 1

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 4 or self.coords.shape[0] != 3:
            raise ValueError(f"coords must be (3, T, N, M), got {self.coords.shape}")
        T = self.coords.shape[1]
        if self.valid_len is None:
            self.valid_len = T
        if not 1 <= self.valid_len <= T:
            raise ValueError(f"valid_len {self.valid_len} outside [1, {T}]")
        if not 0 <= self.persons <= self.coords.shape[3]:
            raise ValueError(f"persons {self.persons} exceeds M={self.coords.shape[3]}")
        if self.label < 0:
            raise ValueError(f"label must be non-negative, got {self.label}")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("coordinates must be finite")

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return self.coords.shape

    @property
    def T(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True)
class SkeletonGraph:
    N: int
    edges: Tuple[Tuple[int, int], ...]
    root: int = 0
    names: Tuple[str, ...] = ()

    def __post_init__(self):
        children = [c for _, c in self.edges]
        if len(set(children)) != len(children):
            raise ValueError("each child joint may have only one parent")
        if self.root in children:
            raise ValueError("root joint cannot be a child")
        if len(self.edges) != self.N - 1:
            raise ValueError(f"a spanning tree on {self.N} joints needs {self.N - 1} edges, got {len(self.edges)}")
        for p, c in self.edges:
            if not (0 <= p < self.N and 0 <= c < self.N):
                raise ValueError(f"edge ({p}, {c}) references a joint outside [0, {self.N})")
        reached = {self.root}
        frontier = [self.root]
        while frontier:
            j = frontier.pop()
            for p, c in self.edges:
                if p == j and c not in reached:
                    reached.add(c)
                    frontier.append(c)
        if len(reached) != self.N:
            raise ValueError("edges do not connect every joint to the root")

    def parent(self) -> np.ndarray:
        par = np.full(self.N, -1, dtype=np.int64)
        for p, c in self.edges:
            par[c] = p
        return par

    def reference_child(self) -> int:
        """First child of the root in edge order; root->child is the scale bone."""
        for p, c in self.edges:
            if p == self.root:
                return c
        raise ValueError("root has no children")

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.N, self.N))
        for p, c in self.edges:
            A[p, c] = A[c, p] = 1.0
        return A

    def path_to_root(self, j: int) -> List[int]:
        par = self.parent()
        path = [j]
        while path[-1] != self.root:
            path.append(int(par[path[-1]]))
        return path


DEFAULT_GRAPH = SkeletonGraph(
    N=9,
    edges=((0, 1), (1, 2), (1, 3), (3, 4), (1, 5), (5, 6), (0, 7), (0, 8)),
    root=0,
    names=("root", "neck", "head", "l_elbow", "l_hand", "r_elbow", "r_hand", "l_foot", "r_foot"),
)


@dataclass(frozen=True)
class NoiseSpec:
    epsilon: float
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")


# ---------------------------------------------------------------- file format


def _to_document(seq: SkeletonSequence) -> dict:
    C, T, N, M = seq.shape
    return {
        "version": FORMAT_VERSION,
        "C": C,
        "T": T,
        "N": N,
        "M": M,
        "label": int(seq.label),
        "valid_len": int(seq.valid_len),
        "persons": int(seq.persons),
        "data": seq.coords.reshape(-1).tolist(),
    }


def dumps(seq: SkeletonSequence) -> str:
    # json writes floats with repr(), which round-trips float64 exactly
    return json.dumps(_to_document(seq), allow_nan=False, separators=(",", ":"))


def loads(text: str) -> SkeletonSequence:
    doc = json.loads(text)
    if doc.get("version") != FORMAT_VERSION:
        raise SequenceFormatError(f"unsupported sequence file version {doc.get('version')!r}; expected {FORMAT_VERSION}")
    C, T, N, M = (int(doc[k]) for k in ("C", "T", "N", "M"))
    data = doc["data"]
    if len(data) != C * T * N * M:
        raise SequenceFormatError(f"data has {len(data)} values but shape {C}x{T}x{N}x{M} needs {C * T * N * M}")
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise SequenceFormatError("data contains non-finite values")
    return SkeletonSequence(arr.reshape(C, T, N, M), label=int(doc["label"]),
                            valid_len=int(doc["valid_len"]), persons=int(doc.get("persons", M)))


def save(seq: SkeletonSequence, path) -> None:
    Path(path).write_text(dumps(seq), encoding="utf-8")


def load(path) -> SkeletonSequence:
    return loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- preprocessing


def pad_repeat(seq: SkeletonSequence, target_T: int = 300) -> SkeletonSequence:
    L = seq.valid_len
    if target_T < L:
        raise ValueError(f"target length {target_T} is shorter than valid_len {L}; truncation is not supported")
    idx = np.arange(target_T) % L
    return replace(seq, coords=seq.coords[:, idx].copy(), valid_len=L)


def time_reverse(seq: SkeletonSequence) -> SkeletonSequence:
    L = seq.valid_len
    rev = seq.coords[:, :L][:, ::-1]
    idx = np.arange(seq.T) % L
    return replace(seq, coords=np.ascontiguousarray(rev[:, idx]))


def normalize_translate(seq: SkeletonSequence, graph: SkeletonGraph = DEFAULT_GRAPH) -> SkeletonSequence:
    """Move person 0's frame-0 root to the origin and make the reference bone unit length."""
    if seq.shape[2] != graph.N:
        raise ValueError(f"sequence has {seq.shape[2]} joints, graph has {graph.N}")
    root = graph.root
    ref = graph.reference_child()
    origin = seq.coords[:, 0, root, 0]
    length = float(np.linalg.norm(seq.coords[:, 0, ref, 0] - origin))
    if not length > 0:
        raise ValueError(f"reference bone (joint {root} -> {ref}) has zero length in frame 0; cannot normalize")
    out = seq.coords.copy()
    active = max(seq.persons, 1)
    out[..., :active] = (out[..., :active] - origin[:, None, None, None]) / length
    return replace(seq, coords=out)


def bones(seq: SkeletonSequence, graph: SkeletonGraph = DEFAULT_GRAPH) -> SkeletonSequence:
    if seq.shape[2] != graph.N:
        raise ValueError(f"sequence has {seq.shape[2]} joints, graph has {graph.N}")
    par = graph.parent()
    out = np.zeros_like(seq.coords)
    child = np.flatnonzero(par >= 0)
    out[:, :, child] = seq.coords[:, :, child] - seq.coords[:, :, par[child]]
    return replace(seq, coords=out)


def add_noise(seq: SkeletonSequence, spec: NoiseSpec) -> SkeletonSequence:
    if spec.epsilon == 0:
        return replace(seq, coords=seq.coords.copy())
    rng = np.random.default_rng(spec.seed)
    n = rng.standard_normal(seq.coords.shape)
    return replace(seq, coords=seq.coords + spec.epsilon * n)


# ---------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class ClassProgram:
    """One synthetic action.

    ``kind`` is ``"ramp"`` (a one-way movement of the listed angles) or
    ``"oscillate"`` (a limb swinging at ``cycles`` oscillations per clip).
    ``reverse_of`` names the class whose samples this one time-reverses.
    """

    name: str
    kind: str
    angles: Tuple[Tuple[str, float, float], ...] = ()
    cycles: float = 0.0
    reverse_of: Optional[str] = None


@dataclass(frozen=True)
class SyntheticSpec:
    classes: Tuple[ClassProgram, ...]
    T: int = 300
    N: int = 9
    persons: int = 1
    samples_per_class: int = 100
    seed: int = 0
    sensor_noise: float = 0.01

    def __post_init__(self):
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        for c in self.classes:
            if c.reverse_of is not None and c.reverse_of not in names:
                raise ValueError(f"class {c.name!r} reverses missing class {c.reverse_of!r}")
            if c.kind not in ("ramp", "oscillate"):
                raise ValueError(f"unknown motion kind {c.kind!r}")
        if self.T < 1 or self.samples_per_class < 1 or self.persons < 1:
            raise ValueError("T, samples_per_class and persons must be positive")
        if self.N != DEFAULT_GRAPH.N:
            raise ValueError(f"the synthetic body has {DEFAULT_GRAPH.N} joints, got N={self.N}")


@dataclass
class Dataset:
    sequences: List[SkeletonSequence]
    class_names: List[str]
    # sample index within its class; reversal partners share it
    sample_ids: List[int] = field(default_factory=list)

    def __len__(self):
        return len(self.sequences)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.sequences], dtype=np.int64)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        indices = list(indices)
        ids = [self.sample_ids[i] for i in indices] if self.sample_ids else []
        return Dataset([self.sequences[i] for i in indices], list(self.class_names), ids)

    def split(self, val_fraction: float = 0.2) -> Tuple["Dataset", "Dataset"]:
        """Deterministic split by sample id so reversal partners land together."""
        ids = np.array(self.sample_ids if self.sample_ids else range(len(self)))
        n_ids = int(ids.max()) + 1
        cut = n_ids - max(1, int(round(n_ids * val_fraction)))
        train = [i for i in range(len(self)) if ids[i] < cut]
        val = [i for i in range(len(self)) if ids[i] >= cut]
        return self.subset(train), self.subset(val)


_ANGLE_NAMES = ("torso", "l_abduct", "l_flex", "l_elbow", "r_abduct", "r_flex", "r_elbow", "l_leg", "r_leg")


def _forward_kinematics(angles: dict, lengths: dict) -> np.ndarray:
    """Joint positions (3, T, 9) from per-frame angle tracks (radians)."""
    T = angles["torso"].shape[0]
    P = np.zeros((3, T, 9))
    torso = angles["torso"]
    up = np.stack([np.zeros(T), np.cos(torso), np.sin(torso)])
    P[:, :, 1] = lengths["spine"] * up
    P[:, :, 2] = P[:, :, 1] + lengths["head"] * up

    def limb(side, abduct, flex):
        return np.stack([side * np.sin(abduct), -np.cos(abduct) * np.cos(flex), np.cos(abduct) * np.sin(flex)])

    for side, prefix, elbow, hand in ((-1.0, "l", 3, 4), (1.0, "r", 5, 6)):
        ab, fl, bend = angles[prefix + "_abduct"], angles[prefix + "_flex"], angles[prefix + "_elbow"]
        P[:, :, elbow] = P[:, :, 1] + lengths["upper"] * limb(side, ab, fl)
        P[:, :, hand] = P[:, :, elbow] + lengths["fore"] * limb(side, ab + bend, fl)
    for side, key, foot in ((-1.0, "l_leg", 7), (1.0, "r_leg", 8)):
        psi = angles[key]
        d = np.stack([np.full(T, 0.2 * side), -np.cos(psi), np.sin(psi)])
        P[:, :, foot] = lengths["leg"] * d / np.linalg.norm(d, axis=0)
    return P


def _smoothstep(u, start, end):
    s = np.clip((u - start) / (end - start), 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _sample_motion(prog: ClassProgram, T: int, rng: np.random.Generator) -> dict:
    u = (np.arange(T) + 0.5) / T
    rest = {
        "torso": 0.05, "l_abduct": 0.15, "l_flex": 0.05, "l_elbow": 0.1,
        "r_abduct": 0.15, "r_flex": 0.05, "r_elbow": 0.1, "l_leg": 0.0, "r_leg": 0.0,
    }
    angles = {k: np.full(T, v + rng.normal(0.0, 0.05)) for k, v in rest.items()}
    # idle sway keeps every class from having frozen frames
    sway_f = rng.uniform(0.5, 1.5)
    sway_p = rng.uniform(0, 2 * math.pi)
    angles["torso"] = angles["torso"] + 0.03 * np.sin(2 * math.pi * sway_f * u + sway_p)
    if prog.kind == "ramp":
        dur = rng.uniform(0.35, 0.7)
        start = rng.uniform(0.05, 0.95 - dur)
        gain = rng.uniform(0.8, 1.2)
        for name, a0, a1 in prog.angles:
            angles[name] = angles[name] + gain * (a0 + (a1 - a0) * _smoothstep(u, start, start + dur))
    else:
        f = prog.cycles * rng.uniform(0.85, 1.15)
        phase = rng.uniform(0, 2 * math.pi)
        gain = rng.uniform(0.8, 1.2)
        wave = np.sin(2 * math.pi * f * u + phase)
        for name, a0, a1 in prog.angles:
            angles[name] = angles[name] + gain * (0.5 * (a0 + a1) + 0.5 * (a1 - a0) * wave)
    return angles


def _sample_body(rng: np.random.Generator) -> dict:
    size = rng.uniform(0.85, 1.15)
    return {
        "spine": 0.5 * size, "head": 0.2 * size, "upper": 0.3 * size,
        "fore": 0.28 * size, "leg": 0.9 * size,
    }


def synth_generate(spec: SyntheticSpec) -> Dataset:
    """Generate ``samples_per_class`` sequences for every class, deterministically.

    Sample ``j`` of a reversal class is the time reversal of sample ``j`` of its
    partner, so both carry the same body, jitter and sensor noise.
    """
    names = [c.name for c in spec.classes]
    by_name = {c.name: i for i, c in enumerate(spec.classes)}
    M = spec.persons
    base = {}
    for ci, prog in enumerate(spec.classes):
        if prog.reverse_of is not None:
            continue
        rng = np.random.default_rng([spec.seed, ci])
        samples = []
        for _ in range(spec.samples_per_class):
            motion = _sample_motion(prog, spec.T, rng)
            P = _forward_kinematics(motion, _sample_body(rng))
            jitter = spec.sensor_noise * rng.standard_normal(P.shape)
            # root and neck stay clean: the scale bone must not depend on the frame
            jitter[:, :, :2] = 0.0
            P = P + jitter
            coords = np.zeros((3, spec.T, spec.N, M))
            coords[..., 0] = P
            for m in range(1, M):
                coords[..., m] = P
            samples.append(coords)
        base[ci] = samples
    seqs, ids = [], []
    for ci, prog in enumerate(spec.classes):
        for j in range(spec.samples_per_class):
            if prog.reverse_of is None:
                seq = SkeletonSequence(base[ci][j], label=ci, persons=M)
            else:
                src = SkeletonSequence(base[by_name[prog.reverse_of]][j], label=ci, persons=M)
                seq = time_reverse(src)
            seqs.append(seq)
            ids.append(j)
    return Dataset(seqs, names, ids)


_REVERSAL_PAIRS = (
    ("raise_right_arm", (("r_abduct", 0.0, 2.4),)),
    ("reach_left_forward", (("l_flex", 0.0, 1.9), ("l_elbow", 0.6, 0.0))),
    ("bend_down", (("torso", 0.0, 0.9), ("r_flex", 0.0, 0.6), ("l_flex", 0.0, 0.6))),
    ("lift_right_leg", (("r_leg", 0.0, 1.1), ("torso", 0.0, -0.15))),
)

_REVERSED_NAMES = ("lower_right_arm", "retract_left_arm", "stand_up", "lower_right_leg")


def reversal_pair_spec(pairs: int = 4, samples_per_class: int = 100, T: int = 300, seed: int = 0) -> SyntheticSpec:
    """Classes ``2i`` / ``2i + 1`` are a motion and its exact time reversal."""
    if not 1 <= pairs <= len(_REVERSAL_PAIRS):
        raise ValueError(f"pairs must lie in [1, {len(_REVERSAL_PAIRS)}]")
    classes = []
    for (name, angles), rev in zip(_REVERSAL_PAIRS[:pairs], _REVERSED_NAMES):
        classes.append(ClassProgram(name, "ramp", angles))
        classes.append(ClassProgram(rev, "ramp", angles, reverse_of=name))
    return SyntheticSpec(tuple(classes), T=T, samples_per_class=samples_per_class, seed=seed)


def frequency_classes(cycles: Sequence[float] = (2.0, 4.0, 7.0)) -> Tuple[ClassProgram, ...]:
    """Right-forearm waving that differs only in oscillation rate."""
    return tuple(
        ClassProgram(f"wave_{c:g}", "oscillate", (("r_abduct", 1.2, 1.2), ("r_elbow", -0.2, 1.2)), cycles=c)
        for c in cycles
    )


def mixed_spec(pairs: int = 4, cycles: Sequence[float] = (2.0, 4.0, 7.0), samples_per_class: int = 100,
               T: int = 300, seed: int = 0) -> SyntheticSpec:
    rev = reversal_pair_spec(pairs, samples_per_class, T, seed)
    return replace(rev, classes=rev.classes + frequency_classes(cycles))


# ---------------------------------------------------------------- dataset files


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_dataset(ds: Dataset, out_dir, extra: Optional[dict] = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, seq in enumerate(ds.sequences):
        fname = f"seq_{i:05d}.json"
        save(seq, out / fname)
        entry = {"file": fname, "label": int(seq.label), "sha256": _sha256(out / fname)}
        if ds.sample_ids:
            entry["sample_id"] = int(ds.sample_ids[i])
        entries.append(entry)
    manifest = {"version": FORMAT_VERSION, "classes": list(ds.class_names), "files": entries}
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return path


def load_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no manifest.json in {root}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    seqs, ids = [], []
    for entry in manifest["files"]:
        path = root / entry["file"]
        if "sha256" in entry and _sha256(path) != entry["sha256"]:
            raise SequenceFormatError(f"{entry['file']}: sha256 does not match the manifest")
        seq = load(path)
        if seq.label != entry["label"]:
            raise SequenceFormatError(f"{entry['file']}: label {seq.label} disagrees with manifest {entry['label']}")
        seqs.append(seq)
        ids.append(int(entry.get("sample_id", len(ids))))
    return Dataset(seqs, list(manifest["classes"]), ids)


def env_threads(default: Optional[int] = None) -> int:
    """Worker cap from CHRONO_DCE_THREADS (falls back to the CPU count)."""
    raw = os.environ.get("CHRONO_DCE_THREADS")
    if raw:
        return max(1, int(raw))
    return default or os.cpu_count() or 1
