"""Skeleton sequences, the ``.skel`` container, modality views and synthetic data."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MAGIC = b"SKEL"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")
_RECORD = struct.Struct("<II")

MODALITIES = ("joint", "bone", "joint-motion", "bone-motion")


class SkeletonFormatError(ValueError):
    """Base class for ``.skel`` parsing failures."""


class HeaderError(SkeletonFormatError):
    pass


class TruncatedError(SkeletonFormatError):
    pass


class NonFiniteError(SkeletonFormatError):
    pass


class LabelRangeError(SkeletonFormatError):
    pass


@dataclass
class SkeletonSequence:
    coords: np.ndarray  # (N, T, C_in)
    label: int
    subject_id: int = 0

    def __post_init__(self):
        self.coords = np.asarray(self.coords)
        if self.coords.ndim != 3:
            raise ValueError(f"coords must be (N, T, C), got {self.coords.shape}")
        if self.coords.shape[0] < 2 or self.coords.shape[1] < 1:
            raise ValueError(f"need N >= 2 joints and T >= 1 frames, got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise NonFiniteError("coordinates contain non-finite values")

    @property
    def joints(self) -> int:
        return self.coords.shape[0]

    @property
    def frames(self) -> int:
        return self.coords.shape[1]


@dataclass
class Dataset:
    sequences: list
    num_classes: int

    def __post_init__(self):
        for s in self.sequences:
            if not 0 <= s.label < self.num_classes:
                raise LabelRangeError(f"label {s.label} outside [0, {self.num_classes})")
        if self.sequences:
            shapes = {s.coords.shape for s in self.sequences}
            if len(shapes) != 1:
                raise ValueError(f"sequences have mixed shapes {sorted(shapes)}")

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    @property
    def shape(self) -> tuple:
        return self.sequences[0].coords.shape

    def arrays(self, dtype=np.float64):
        x = np.stack([s.coords for s in self.sequences]).astype(dtype)
        y = np.array([s.label for s in self.sequences], dtype=np.int64)
        return x, y


class SkeletonGraph:
    """Tree over joints given by a parent map (``-1`` marks the root)."""

    def __init__(self, parents: Sequence[int]):
        self.parents = [int(p) for p in parents]
        n = len(self.parents)
        roots = [j for j, p in enumerate(self.parents) if p < 0]
        if len(roots) != 1:
            raise ValueError(f"parent map needs exactly one root, found {len(roots)}")
        for j in range(n):
            seen, k = set(), j
            while self.parents[k] >= 0:
                if k in seen or self.parents[k] >= n:
                    raise ValueError(f"parent map is not a tree at joint {j}")
                seen.add(k)
                k = self.parents[k]
        self.root = roots[0]

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    @property
    def edges(self) -> list:
        return [(j, p) for j, p in enumerate(self.parents) if p >= 0]

    @classmethod
    def default(cls, n: int = 5) -> "SkeletonGraph":
        """Root joint 0 with two arms; joints 1..ceil((n-1)/2) form the first arm."""
        if n < 2:
            raise ValueError("need at least two joints")
        first = (n - 1 + 1) // 2
        parents = [-1]
        for j in range(1, n):
            if j == 1 or j == first + 1:
                parents.append(0)
            else:
                parents.append(j - 1)
        return cls(parents)


def to_modality(coords: np.ndarray, kind: str, graph: Optional[SkeletonGraph] = None) -> np.ndarray:
    """Derive a modality view of ``(N, T, C)`` or batched ``(B, N, T, C)`` coordinates."""
    if kind not in MODALITIES:
        raise ValueError(f"unknown modality {kind!r}; expected one of {MODALITIES}")
    x = np.asarray(coords)
    j_ax = x.ndim - 3
    if kind.startswith("bone"):
        if graph is None:
            raise ValueError("bone modalities need a skeleton graph")
        if graph.num_joints != x.shape[j_ax]:
            raise ValueError(f"graph has {graph.num_joints} joints, data has {x.shape[j_ax]}")
        parent_idx = np.array([p if p >= 0 else j for j, p in enumerate(graph.parents)])
        x = x - np.take(x, parent_idx, axis=j_ax)
    if kind.endswith("motion"):
        t_ax = j_ax + 1
        diff = np.diff(x, axis=t_ax)
        pad = np.zeros_like(np.take(x, [0], axis=t_ax))
        x = np.concatenate([diff, pad], axis=t_ax)
    return x


# ------------------------------------------------------------------- file I/O


def save_dataset(path, dataset: Dataset):
    seqs = dataset.sequences
    N, T, C = dataset.shape if seqs else (0, 0, 0)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, N, T, C, dataset.num_classes, len(seqs)))
        for s in seqs:
            fh.write(_RECORD.pack(s.subject_id, s.label))
            fh.write(np.ascontiguousarray(s.coords, dtype="<f4").tobytes())


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise HeaderError(f"{path}: file shorter than header")
    magic, version, N, T, C, c, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise HeaderError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise HeaderError(f"{path}: unsupported version {version}")
    payload = N * T * C * 4
    expected = _HEADER.size + count * (_RECORD.size + payload)
    if len(raw) < expected:
        raise TruncatedError(f"{path}: expected {expected} bytes, found {len(raw)}")
    seqs, off = [], _HEADER.size
    for _ in range(count):
        subject, label = _RECORD.unpack_from(raw, off)
        off += _RECORD.size
        coords = np.frombuffer(raw, dtype="<f4", count=N * T * C, offset=off).reshape(N, T, C)
        off += payload
        if not np.all(np.isfinite(coords)):
            raise NonFiniteError(f"{path}: non-finite coordinate in record {len(seqs)}")
        if label >= c:
            raise LabelRangeError(f"{path}: label {label} outside [0, {c})")
        seqs.append(SkeletonSequence(coords.astype(np.float32), int(label), int(subject)))
    return Dataset(seqs, c)


def export_csv(dataset: Dataset, out_dir):
    """Write one CSV per sequence with columns joint, frame, channel values."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(dataset.sequences):
        with open(out / f"seq{i:05d}_label{s.label}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["joint", "frame"] + [f"c{k}" for k in range(s.coords.shape[2])])
            for j in range(s.joints):
                for t in range(s.frames):
                    w.writerow([j, t] + [repr(float(v)) for v in s.coords[j, t]])


# -------------------------------------------------------------------- splits


def split(dataset: Dataset, ratio: float, by_subject: bool = False, seed: int = 0):
    """Deterministic train/test split.

    With ``by_subject`` whole subjects go to one side; otherwise the split is
    stratified per class so each class contributes ``round(ratio * n_k)``
    training sequences.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    seqs = dataset.sequences
    if by_subject:
        subjects = sorted({s.subject_id for s in seqs})
        if len(subjects) < 2:
            raise ValueError(f"subject split needs at least 2 subjects, found {len(subjects)}")
        order = rng.permutation(len(subjects))
        n_train = min(max(1, int(round(ratio * len(subjects)))), len(subjects) - 1)
        train_subj = {subjects[i] for i in order[:n_train]}
        train_idx = [i for i, s in enumerate(seqs) if s.subject_id in train_subj]
    else:
        train_idx = []
        for k in range(dataset.num_classes):
            members = [i for i, s in enumerate(seqs) if s.label == k]
            perm = rng.permutation(len(members))
            take = int(round(ratio * len(members)))
            train_idx.extend(members[p] for p in perm[:take])
        train_idx.sort()
    chosen = set(train_idx)
    train = [seqs[i] for i in train_idx]
    test = [s for i, s in enumerate(seqs) if i not in chosen]
    return Dataset(train, dataset.num_classes), Dataset(test, dataset.num_classes)


# ----------------------------------------------------------------- synthetic


def _rest_pose(graph: SkeletonGraph, rng) -> np.ndarray:
    n = graph.num_joints
    directions = rng.normal(size=(n, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    pose = np.full((n, 3), np.nan)
    pose[graph.root] = 0.0
    while np.isnan(pose).any():
        for j, p in enumerate(graph.parents):
            if p >= 0 and np.isnan(pose[j, 0]) and not np.isnan(pose[p, 0]):
                pose[j] = pose[p] + directions[j]
    return pose


def synth_generate(
    seed: int,
    num_classes: int,
    per_class: int,
    joints: int = 5,
    frames: int = 16,
    similarity: float = 0.0,
    noise: float = 0.05,
    num_subjects: int = 10,
    graph: Optional[SkeletonGraph] = None,
) -> Dataset:
    """Generate oscillating joint trajectories, one parametric family per class.

    Every joint follows ``rest + amp * sin(2 pi t / T + phase)`` per axis.
    Classes share a base (amp, phase) and add a class-specific offset on the
    active (non-root) joints, scaled by ``1 - similarity``; at
    ``similarity=1`` all classes coincide. Samples get a subject-dependent
    body scale, a small global phase jitter and Gaussian coordinate noise.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if per_class < 1 or frames < 1 or joints < 2:
        raise ValueError("per_class, frames must be >= 1 and joints >= 2")
    if not 0.0 <= similarity <= 1.0:
        raise ValueError(f"similarity must lie in [0, 1], got {similarity}")
    if num_subjects < 1:
        raise ValueError("need at least one subject")
    graph = graph or SkeletonGraph.default(joints)
    if graph.num_joints != joints:
        raise ValueError("graph size does not match joints")

    rng = np.random.default_rng(seed)
    rest = _rest_pose(graph, rng)
    base_amp = rng.uniform(0.2, 0.5, size=(joints, 3))
    base_phase = rng.uniform(0, 2 * np.pi, size=(joints, 3))
    active = np.ones((joints, 1))
    active[graph.root] = 0.0
    spread = 1.0 - similarity
    class_amp = base_amp + spread * active * rng.normal(0.0, 0.3, size=(num_classes, joints, 3))
    class_phase = base_phase + spread * active * rng.normal(0.0, 1.0, size=(num_classes, joints, 3))
    subject_scale = rng.uniform(0.9, 1.1, size=num_subjects)

    t = np.arange(frames) / frames
    seqs = []
    for k in range(num_classes):
        for i in range(per_class):
            subject = int(rng.integers(num_subjects))
            jitter = rng.uniform(-0.2, 0.2)
            arg = 2 * np.pi * t[None, :, None] + class_phase[k][:, None, :] + jitter
            motion = class_amp[k][:, None, :] * np.sin(arg)
            coords = subject_scale[subject] * (rest[:, None, :] + motion)
            coords = coords + rng.normal(0.0, noise, size=coords.shape)
            seqs.append(SkeletonSequence(coords.astype(np.float32), k, subject))
    return Dataset(seqs, num_classes)


def nearest_centroid_accuracy(train: Dataset, test: Dataset) -> float:
    """Accuracy of a Euclidean nearest-class-mean classifier on raw coordinates."""
    xtr, ytr = train.arrays()
    xte, yte = test.arrays()
    xtr = xtr.reshape(len(xtr), -1)
    xte = xte.reshape(len(xte), -1)
    classes = np.unique(ytr)
    centroids = np.stack([xtr[ytr == k].mean(axis=0) for k in classes])
    d = ((xte[:, None, :] - centroids[None]) ** 2).sum(-1)
    pred = classes[np.argmin(d, axis=1)]
    return float(np.mean(pred == yte))
