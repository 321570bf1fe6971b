"""Long-tailed dataset synthesis, CSV ingestion, and deterministic batching.

Class counts follow the exponential profile n_j = n_max * IF^(-j/(K-1)), so
class 0 is the largest and the largest/smallest ratio equals the imbalance
factor up to rounding. Datasets are immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    EmptyDatasetError,
    IngestionError,
    ParameterError,
    ProfileError,
)

__all__ = [
    "LabeledDataset",
    "LongTailProfile",
    "longtail_profile",
    "synth_longtail_gaussians",
    "ingest_csv",
    "export_csv",
    "make_longtail_subset",
    "split_head_medium_tail",
    "HeadMediumTailSplit",
    "batch_iterator",
    "dataset_summary",
]

SPHERE_RADIUS = 3.0


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray          # (m, d) float64
    labels: np.ndarray            # (m,) int
    k: int
    class_counts: np.ndarray      # (k,) int
    b_max: float                  # largest row l2 norm
    provenance: str = "synthetic"

    @property
    def m(self) -> int:
        return self.labels.size

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def frequencies(self) -> np.ndarray:
        return self.class_counts / max(self.m, 1)

    def validate(self) -> None:
        hist = np.bincount(self.labels, minlength=self.k)
        if not np.array_equal(hist, self.class_counts):
            raise DimensionError("class_counts disagree with the label histogram")
        b = float(np.linalg.norm(self.features, axis=1).max()) if self.m else 0.0
        if abs(b - self.b_max) > 1e-12:
            raise DimensionError(f"stored b_max {self.b_max} vs recomputed {b}")


def _make_dataset(features, labels, k, provenance) -> LabeledDataset:
    features = np.ascontiguousarray(features, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.intp)
    counts = np.bincount(labels, minlength=k)
    b_max = float(np.linalg.norm(features, axis=1).max()) if labels.size else 0.0
    return LabeledDataset(
        features=features,
        labels=labels,
        k=k,
        class_counts=counts,
        b_max=b_max,
        provenance=provenance,
    )


@dataclass(frozen=True)
class LongTailProfile:
    imbalance_factor: float
    counts: tuple[int, ...]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def longtail_profile(k: int, n_max: int, imbalance_factor: float) -> LongTailProfile:
    """Exponential per-class target counts, class 0 largest."""
    if k < 2:
        raise ParameterError("profile needs at least 2 classes")
    if imbalance_factor < 1:
        raise ParameterError("imbalance factor must be >= 1")
    if n_max < 1:
        raise ParameterError("n_max must be >= 1")
    counts = tuple(
        _round_half_up(n_max * imbalance_factor ** (-j / (k - 1))) for j in range(k)
    )
    if counts[-1] < 1:
        raise ProfileError(
            f"smallest class rounds to zero (n_max={n_max}, IF={imbalance_factor})"
        )
    return LongTailProfile(imbalance_factor=float(imbalance_factor), counts=counts)


def synth_longtail_gaussians(
    k: int,
    d: int,
    n_max: int,
    imbalance_factor: float,
    cluster_spread: float,
    seed: int,
    mean_seed: int | None = None,
) -> LabeledDataset:
    """Gaussian clusters with means on a radius-3 sphere and exponential counts.

    ``mean_seed`` pins the cluster means independently of the sample draws so
    a matched balanced test set can be synthesized with a different ``seed``.
    """
    if k < 2:
        raise ParameterError("need at least 2 classes")
    if n_max < k:
        raise ParameterError("n_max must be at least k")
    if cluster_spread <= 0:
        raise ParameterError("cluster spread must be positive")
    profile = longtail_profile(k, n_max, imbalance_factor)
    mean_rng = np.random.Generator(np.random.PCG64(seed if mean_seed is None else mean_seed))
    sample_rng = (
        mean_rng if mean_seed is None else np.random.Generator(np.random.PCG64(seed))
    )
    directions = mean_rng.normal(size=(k, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = SPHERE_RADIUS * directions
    feats = []
    labels = []
    for j, nj in enumerate(profile.counts):
        feats.append(means[j] + cluster_spread * sample_rng.normal(size=(nj, d)))
        labels.append(np.full(nj, j, dtype=np.intp))
    return _make_dataset(np.vstack(feats), np.concatenate(labels), k, "synthetic")


def export_csv(ds: LabeledDataset, path) -> None:
    """Write "label,f1..fd" rows with lossless float formatting."""
    header = "label," + ",".join(f"f{i + 1}" for i in range(ds.d))
    lines = [header]
    for y, row in zip(ds.labels, ds.features):
        lines.append(str(int(y)) + "," + ",".join(f"{x:.17g}" for x in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def ingest_csv(path) -> LabeledDataset:
    """Parse a "label,f1..fd" file; labels must be contiguous ints from 0."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise EmptyDatasetError(f"{path}: file is empty")
    header = lines[0].split(",")
    if header[0].strip().lower() != "label":
        raise IngestionError(f"{path}: first column of header must be 'label'", line=1)
    d = len(header) - 1
    if d < 1:
        raise IngestionError(f"{path}: no feature columns", line=1)
    if len(lines) == 1:
        raise EmptyDatasetError(f"{path}: no data rows")
    labels = []
    rows = []
    first_line_of = {}
    for lineno, ln in enumerate(lines[1:], start=2):
        toks = ln.split(",")
        if len(toks) != d + 1:
            raise IngestionError(
                f"{path}:{lineno}: expected {d + 1} columns, found {len(toks)}",
                line=lineno,
            )
        try:
            y = int(toks[0])
            feats = [float(t) for t in toks[1:]]
        except ValueError as exc:
            raise IngestionError(f"{path}:{lineno}: non-numeric field ({exc})", line=lineno)
        if y < 0:
            raise IngestionError(f"{path}:{lineno}: negative label {y}", line=lineno)
        first_line_of.setdefault(y, lineno)
        labels.append(y)
        rows.append(feats)
    present = sorted(set(labels))
    k = present[-1] + 1
    missing = [c for c in range(k) if c not in first_line_of]
    if missing:
        witness = min(first_line_of[c] for c in first_line_of if c > missing[0])
        raise IngestionError(
            f"{path}:{witness}: labels are not contiguous, class {missing[0]} missing",
            line=witness,
        )
    return _make_dataset(np.array(rows), np.array(labels), k, "ingested")


def make_longtail_subset(ds: LabeledDataset, imbalance_factor: float, seed: int) -> LabeledDataset:
    """Subsample to the exponential profile, largest original class first.

    The largest class keeps its full count (n_max); the class ranked j gets
    the profile target for rank j. Sampling is without replacement and
    deterministic given the seed.
    """
    order = sorted(range(ds.k), key=lambda j: (-ds.class_counts[j], j))
    n_max = int(ds.class_counts[order[0]])
    profile = longtail_profile(ds.k, n_max, imbalance_factor)
    rng = np.random.Generator(np.random.PCG64(seed))
    keep = []
    for rank, cls in enumerate(order):
        target = profile.counts[rank]
        idx = np.flatnonzero(ds.labels == cls)
        if idx.size < target:
            raise ProfileError(
                f"class {cls} has {idx.size} samples, profile needs {target}"
            )
        keep.append(np.sort(rng.choice(idx, size=target, replace=False)))
    keep = np.sort(np.concatenate(keep))
    return _make_dataset(ds.features[keep], ds.labels[keep], ds.k, ds.provenance)


@dataclass(frozen=True)
class HeadMediumTailSplit:
    head: tuple[int, ...]
    medium: tuple[int, ...]
    tail: tuple[int, ...]


def split_head_medium_tail(
    class_counts, head_min: int = 100, tail_max: int = 20
) -> HeadMediumTailSplit:
    """Partition classes by training count: > head_min / in between / < tail_max.

    Boundary counts (exactly head_min or exactly tail_max) land in medium.
    """
    if not head_min > tail_max >= 1:
        raise ParameterError("need head_min > tail_max >= 1")
    counts = np.asarray(class_counts)
    head = tuple(int(j) for j in np.flatnonzero(counts > head_min))
    tail = tuple(int(j) for j in np.flatnonzero(counts < tail_max))
    medium = tuple(
        int(j) for j in range(counts.size) if j not in head and j not in tail
    )
    return HeadMediumTailSplit(head=head, medium=medium, tail=tail)


def batch_iterator(ds: LabeledDataset, batch_size: int, epoch_seed: int):
    """Seeded shuffle of all indices, yielded in batch_size slices.

    The final short batch is kept. Identical epoch_seed gives an identical
    order; every index appears exactly once per epoch.
    """
    if batch_size < 1:
        raise ParameterError("batch size must be >= 1")
    perm = np.random.Generator(np.random.PCG64(epoch_seed)).permutation(ds.m)
    for start in range(0, ds.m, batch_size):
        yield perm[start : start + batch_size]


def dataset_summary(ds: LabeledDataset) -> dict:
    counts = ds.class_counts
    observed_if = float(counts.max() / counts.min()) if counts.min() > 0 else None
    return {
        "k": ds.k,
        "m": int(ds.m),
        "imbalance_factor": observed_if,
        "counts": [int(c) for c in counts],
        "b_max": ds.b_max,
    }
