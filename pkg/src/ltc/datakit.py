"""Data provisioning: synthetic mixtures, embedding CSVs, splits, streams.

The synthetic benchmark draws class means on a sphere of configurable radius
and adds isotropic Gaussian noise, giving a knob (separation vs. noise) for
how hard the discovery problem is.  Real embeddings produced offline can be
ingested from CSV with header ``label,f0,f1,...``.

A split keeps a per-class fraction of the seen classes as the labeled
support set; everything else (held-out seen + all novel samples) becomes the
query stream, shuffled once per seed.  Stream consumers see item ids and
vectors only; labels stay behind for evaluation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np


class CsvFormatError(ValueError):
    pass


@dataclass
class DatasetSpec:
    source: str = "synthetic"          # "synthetic" | "csv"
    csv_path: str = ""
    dim: int = 16
    known_classes: int = 5
    novel_classes: int = 5
    samples_per_class: int = 100
    separation: float = 3.0
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.source not in ("synthetic", "csv"):
            raise ValueError(f"unknown dataset source {self.source!r}")
        if self.known_classes < 2:
            raise ValueError("need at least 2 known classes")
        if self.source == "synthetic":
            if self.dim < 2:
                raise ValueError("dim must be >= 2")
            if self.samples_per_class < 2:
                raise ValueError("samples_per_class must be >= 2")


@dataclass
class Dataset:
    features: np.ndarray   # (n, dim) float64
    labels: np.ndarray     # (n,) int64

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(np.unique(self.labels).size)

    def __len__(self) -> int:
        return self.features.shape[0]


def synth_mixture(spec: DatasetSpec, rng: np.random.Generator) -> Dataset:
    """Gaussian mixture with class means on a sphere of radius ``separation``."""
    n_classes = spec.known_classes + spec.novel_classes
    means = rng.standard_normal((n_classes, spec.dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    means *= spec.separation
    feats, labels = [], []
    for c in range(n_classes):
        feats.append(means[c] + spec.noise_scale
                     * rng.standard_normal((spec.samples_per_class, spec.dim)))
        labels.append(np.full(spec.samples_per_class, c, dtype=np.int64))
    return Dataset(np.vstack(feats), np.concatenate(labels))


def load_embeddings_csv(path) -> Dataset:
    """Parse ``label,f0,...,fD-1`` rows; malformed input errors name the line."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CsvFormatError(f"{path}: file is empty")
    header = lines[0].split(",")
    if header[0] != "label" or len(header) < 2 or \
            any(h != f"f{i}" for i, h in enumerate(header[1:])):
        raise CsvFormatError(f"{path}:1: header must be label,f0,f1,...")
    width = len(header)
    labels, feats = [], []
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != width:
            raise CsvFormatError(f"{path}:{ln}: expected {width} fields, got {len(parts)}")
        try:
            labels.append(int(parts[0]))
            feats.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise CsvFormatError(f"{path}:{ln}: {exc}") from None
    if not feats:
        raise CsvFormatError(f"{path}: no data rows")
    return Dataset(np.array(feats), np.array(labels))


def save_embeddings_csv(path, dataset: Dataset) -> None:
    """Inverse of load_embeddings_csv; floats are written shortest-round-trip,
    so save -> load is value-exact."""
    lines = ["label," + ",".join(f"f{i}" for i in range(dataset.dim))]
    for label, row in zip(dataset.labels, dataset.features):
        lines.append(f"{int(label)}," + ",".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class OcdSplit:
    dataset: Dataset
    support_indices: np.ndarray       # labeled training items, known classes only
    query_order: np.ndarray           # stream order over the query items
    seen_labels: tuple[int, ...]
    k_known: int
    train_fraction: float
    seed: int

    @property
    def support_features(self) -> np.ndarray:
        return self.dataset.features[self.support_indices]

    @property
    def support_labels(self) -> np.ndarray:
        # labels are remapped so the seen classes are 0..k_known-1
        return self.remap_label(self.dataset.labels[self.support_indices])

    def remap_label(self, labels):
        """Map raw dataset labels onto 0..k_known-1 for the seen classes."""
        lut = {lab: i for i, lab in enumerate(self.seen_labels)}
        return np.array([lut[int(v)] for v in np.atleast_1d(labels)], dtype=np.int64)

    def query_labels(self) -> np.ndarray:
        return self.dataset.labels[self.query_order]

    def old_mask(self) -> np.ndarray:
        return np.isin(self.query_labels(), self.seen_labels)

    def __len__(self) -> int:
        return len(self.query_order)


def make_split(dataset: Dataset, k_known: int, train_fraction: float, seed: int) -> OcdSplit:
    """Stratified support/query split.

    The k_known smallest label values are the seen classes; each contributes
    floor(train_fraction * n_c) samples (at least 1) to the support set.
    All remaining items, including every novel-class sample, form the query
    stream, shuffled once by the split seed.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    classes = np.unique(dataset.labels)
    if k_known >= classes.size:
        raise ValueError(f"k_known={k_known} must be < total classes {classes.size}")
    seen = tuple(int(c) for c in classes[:k_known])
    rng = np.random.default_rng(seed)
    support = []
    for c in seen:
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size < 2:
            raise ValueError(f"seen class {c} has fewer than 2 samples")
        n_train = max(1, int(train_fraction * idx.size))
        support.append(rng.permutation(idx)[:n_train])
    support_indices = np.sort(np.concatenate(support))
    in_support = np.zeros(len(dataset), dtype=bool)
    in_support[support_indices] = True
    query = np.flatnonzero(~in_support)
    query_order = rng.permutation(query)
    return OcdSplit(dataset=dataset, support_indices=support_indices,
                    query_order=query_order, seen_labels=seen, k_known=k_known,
                    train_fraction=train_fraction, seed=seed)


def stream_iter(split: OcdSplit) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (item_id, vector) in stream order; no label field is exposed."""
    for idx in split.query_order:
        yield int(idx), split.dataset.features[idx]


def split_manifest(split: OcdSplit) -> dict:
    return {
        "seed": split.seed,
        "train_fraction": split.train_fraction,
        "k_known": split.k_known,
        "seen_labels": list(split.seen_labels),
        "support_indices": [int(i) for i in split.support_indices],
        "query_order": [int(i) for i in split.query_order],
    }


def write_split_manifest(path, split: OcdSplit) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(split_manifest(split), fh, sort_keys=True, indent=2)
        fh.write("\n")


def split_from_manifest(dataset: Dataset, manifest: dict) -> OcdSplit:
    split = OcdSplit(
        dataset=dataset,
        support_indices=np.array(manifest["support_indices"], dtype=np.int64),
        query_order=np.array(manifest["query_order"], dtype=np.int64),
        seen_labels=tuple(manifest["seen_labels"]),
        k_known=int(manifest["k_known"]),
        train_fraction=float(manifest["train_fraction"]),
        seed=int(manifest["seed"]),
    )
    n = len(dataset)
    for idx in (split.support_indices, split.query_order):
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ValueError("manifest indices fall outside the dataset")
    return split
