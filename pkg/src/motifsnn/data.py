"""Yin-Yang benchmark generation and Bernoulli rate coding.

Points live in the unit square inside the disk of radius 0.5 around
(0.5, 0.5).  Each point carries four features ``(x, y, 1-x, 1-y)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CLASSES = ("yin", "yang", "dot")
YIN, YANG, DOT = 0, 1, 2

R_BIG = 0.5
R_SMALL = 0.1
CENTER = (0.5, 0.5)
LEFT_DOT = (0.25, 0.5)
RIGHT_DOT = (0.75, 0.5)

DEFAULT_SIZES = {"training": 5000, "validation": 1000, "test": 1000}
DEFAULT_SEEDS = {"training": 42, "validation": 41, "test": 40}


def _dist(x, y, c):
    return np.hypot(np.asarray(x, dtype=np.float64) - c[0], np.asarray(y, dtype=np.float64) - c[1])


def class_of(x, y) -> np.ndarray:
    """Vectorized class rule; callers guarantee points lie in the big disk.

    Dots override everything.  Otherwise a point is yin inside the right
    half-size disk, or below the horizontal midline and outside the left
    half-size disk; all other points are yang.  Boundaries belong to the
    outside (strict-interior membership).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d_left = _dist(x, y, LEFT_DOT)
    d_right = _dist(x, y, RIGHT_DOT)
    half = R_BIG / 2
    yin = (d_right < half) | ((y < CENTER[1]) & ~(d_left < half))
    dot = (d_left < R_SMALL) | (d_right < R_SMALL)
    return np.where(dot, DOT, np.where(yin, YIN, YANG))


def which_class(x: float, y: float) -> int:
    if _dist(x, y, CENTER) > R_BIG:
        raise ValueError(f"point ({x}, {y}) lies outside the big disk")
    return int(class_of(x, y))


def features_of(xy: np.ndarray) -> np.ndarray:
    xy = np.asarray(xy, dtype=np.float64)
    return np.column_stack([xy[:, 0], xy[:, 1], 1.0 - xy[:, 0], 1.0 - xy[:, 1]])


@dataclass
class DatasetSplit:
    name: str
    features: np.ndarray
    labels: np.ndarray
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(CLASSES))

    def subset(self, idx) -> "DatasetSplit":
        return DatasetSplit(self.name, self.features[idx], self.labels[idx], self.seed)

    def __eq__(self, other) -> bool:
        return (isinstance(other, DatasetSplit) and self.name == other.name
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))


def generate_split(size: int, seed: int, balanced: bool = True, name: str = "training") -> DatasetSplit:
    """Rejection-sample ``size`` points uniformly inside the big disk.

    When balanced, candidates of classes that already hold their quota are
    discarded; quotas are ``size // 3`` with the remainder going to the
    first classes.
    """
    if size < 3:
        raise ValueError(f"split size must be >= 3, got {size}")
    rng = np.random.default_rng(seed)
    quota = np.full(len(CLASSES), size // 3)
    quota[: size % 3] += 1
    counts = np.zeros(len(CLASSES), dtype=int)
    xs: list[float] = []
    ys: list[float] = []
    labels: list[int] = []
    while len(labels) < size:
        cand = rng.random((max(64, 2 * (size - len(labels))), 2))
        inside = _dist(cand[:, 0], cand[:, 1], CENTER) < R_BIG
        cand = cand[inside]
        for (x, y), c in zip(cand, class_of(cand[:, 0], cand[:, 1])):
            if balanced and counts[c] >= quota[c]:
                continue
            counts[c] += 1
            xs.append(x)
            ys.append(y)
            labels.append(int(c))
            if len(labels) == size:
                break
    feats = features_of(np.column_stack([xs, ys]))
    return DatasetSplit(name, feats, np.asarray(labels, dtype=np.int64), seed)


def default_splits(sizes=None, seeds=None, balanced: bool = True) -> dict[str, DatasetSplit]:
    sizes = {**DEFAULT_SIZES, **(sizes or {})}
    seeds = {**DEFAULT_SEEDS, **(seeds or {})}
    return {name: generate_split(sizes[name], seeds[name], balanced, name) for name in DEFAULT_SIZES}


def rate_encode(features, steps: int, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli spike trains, one independent draw per feature and step.

    ``features`` of shape ``(n,)`` give a ``(T, n)`` train; a batch of shape
    ``(B, n)`` gives ``(T, B, n)``.
    """
    if steps < 1:
        raise ValueError(f"need at least one time step, got {steps}")
    p = np.asarray(features, dtype=np.float64)
    if (p < 0).any() or (p > 1).any():
        raise ValueError("features must lie in [0, 1] to be used as spike probabilities")
    return (rng.random((steps,) + p.shape) < p).astype(np.float64)


def rate_decode(train) -> np.ndarray:
    """Per-feature firing rate, the mean over the time axis."""
    train = np.asarray(train, dtype=np.float64)
    if train.shape[0] < 1:
        raise ValueError("empty spike train")
    return train.sum(axis=0) / train.shape[0]


CSV_HEADER = ("x", "y", "x_mirror", "y_mirror", "label")


def write_csv(split: DatasetSplit, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for feats, label in zip(split.features, split.labels):
            w.writerow([f"{v:.17g}" for v in feats] + [CLASSES[label]])


def read_csv(path, name: str | None = None) -> DatasetSplit:
    path = Path(path)
    feats, labels = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                feats.append([float(v) for v in row[:4]])
                labels.append(CLASSES.index(row[4]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return DatasetSplit(name or path.stem, np.asarray(feats).reshape(-1, 4),
                        np.asarray(labels, dtype=np.int64))
