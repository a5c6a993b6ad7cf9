"""Labeled feature-vector datasets: CSV I/O, synthetic mixtures, class splits."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dataset",
    "DatasetError",
    "SyntheticSpec",
    "load_dataset",
    "save_dataset",
    "generate_gaussian_mixture",
    "split_by_class",
]


class DatasetError(ValueError):
    """Raised for invalid datasets or malformed feature files."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ground set of samples: unique ids, dense integer labels and features.

    Arrays are made read-only on construction; ``features`` has shape (n, d).
    """

    ids: np.ndarray
    labels: np.ndarray
    features: np.ndarray
    num_classes: int

    def __post_init__(self):
        ids = np.asarray(self.ids)
        labels = np.asarray(self.labels)
        feats = np.asarray(self.features, dtype=np.float64)
        if ids.ndim != 1 or labels.ndim != 1:
            raise DatasetError("ids and labels must be one-dimensional")
        if feats.ndim != 2:
            raise DatasetError("features must be a 2-d array (n, d)")
        n = ids.shape[0]
        if n < 1:
            raise DatasetError("dataset must contain at least one sample")
        if labels.shape[0] != n or feats.shape[0] != n:
            raise DatasetError("ids, labels and features must have equal length")
        if feats.shape[1] < 1:
            raise DatasetError("feature dimension must be >= 1")
        if not (np.issubdtype(ids.dtype, np.integer) and np.issubdtype(labels.dtype, np.integer)):
            raise DatasetError("ids and labels must be integers")
        if np.any(ids < 0):
            raise DatasetError("ids must be non-negative")
        if np.unique(ids).shape[0] != n:
            raise DatasetError("ids must be pairwise distinct")
        L = int(self.num_classes)
        if L < 1:
            raise DatasetError("num_classes must be positive")
        if np.any(labels < 0) or np.any(labels >= L):
            raise DatasetError(f"labels must lie in [0, {L})")
        counts = np.bincount(labels, minlength=L)
        if np.any(counts == 0):
            missing = np.flatnonzero(counts == 0).tolist()
            raise DatasetError(f"classes {missing} have no samples; labels must be dense 0..L-1")
        if not np.all(np.isfinite(feats)):
            raise DatasetError("features must be finite")
        object.__setattr__(self, "ids", _frozen(ids.astype(np.int64)))
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int64)))
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "num_classes", L)

    @property
    def n(self):
        return self.ids.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def __len__(self):
        return self.n

    def class_sizes(self):
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, positions):
        """Dataset restricted to ``positions`` (keeps ids and class count)."""
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(self.ids[positions], self.labels[positions],
                       self.features[positions], self.num_classes)

    def equals(self, other):
        return (self.num_classes == other.num_classes
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.features, other.features))


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int
    samples_per_class: int
    dim: int
    center_separation: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.center_separation >= 0:
            raise ValueError("center_separation must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def generate_gaussian_mixture(spec: SyntheticSpec, stream: int = 0) -> Dataset:
    """Isotropic unit-variance Gaussian classes with means spaced on axis 0.

    Class ``c`` is centred at ``c * center_separation`` along the first axis.
    Samples are stored class by class. ``stream`` selects an independent
    random stream for the same spec (used for held-out splits).
    """
    L, m, d = spec.num_classes, spec.samples_per_class, spec.dim
    rng = np.random.default_rng([spec.seed, stream])
    X = rng.standard_normal((L * m, d))
    labels = np.repeat(np.arange(L), m)
    X[:, 0] += labels * float(spec.center_separation)
    return Dataset(np.arange(L * m), labels, X, L)


def split_by_class(ds: Dataset) -> list[np.ndarray]:
    """Positions of each class, in dataset order."""
    return [np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)]


def _atomic_write_text(path, text):
    path = os.fspath(path)
    tmp = f"{path}.tmp-{os.getpid()}"
    try:
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def save_dataset(ds: Dataset, path) -> None:
    """Write ``ds`` as a features CSV (17 significant digits, lossless)."""
    header = ["id", "label"] + [f"f{i}" for i in range(ds.dim)]
    lines = [",".join(header)]
    for i, lab, row in zip(ds.ids.tolist(), ds.labels.tolist(), ds.features):
        lines.append(",".join([str(i), str(lab)] + ["%.17g" % v for v in row]))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def load_dataset(path, num_classes: int | None = None) -> Dataset:
    """Read a features CSV with header ``id,label,f0,...,f{d-1}``.

    When ``num_classes`` is omitted it is inferred as ``max(label) + 1`` and
    every class below it must be present. Errors carry 1-based line numbers.
    """
    if not os.path.isfile(path):
        raise DatasetError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("empty file, expected header", line=1) from None
        header = [h.strip() for h in header]
        d = len(header) - 2
        expected = ["id", "label"] + [f"f{i}" for i in range(d)]
        if d < 1 or header != expected:
            raise DatasetError(
                "malformed header, expected 'id,label,f0,...,f{d-1}'", line=1)

        ids, labels, rows = [], [], []
        first_seen = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != d + 2:
                raise DatasetError(
                    f"expected {d + 2} columns, found {len(row)}", line=lineno)
            try:
                sid = int(row[0])
            except ValueError:
                raise DatasetError(f"non-integer id {row[0]!r}", line=lineno) from None
            if sid < 0:
                raise DatasetError(f"negative id {sid}", line=lineno)
            if sid in first_seen:
                raise DatasetError(
                    f"duplicate id {sid} (first seen on line {first_seen[sid]})",
                    line=lineno)
            first_seen[sid] = lineno
            try:
                lab = int(row[1])
            except ValueError:
                raise DatasetError(f"non-integer label {row[1]!r}", line=lineno) from None
            if lab < 0:
                raise DatasetError(f"negative label {lab}", line=lineno)
            if num_classes is not None and lab >= num_classes:
                raise DatasetError(
                    f"label {lab} >= declared class count {num_classes}", line=lineno)
            feats = []
            for col, cell in enumerate(row[2:]):
                try:
                    v = float(cell)
                except ValueError:
                    raise DatasetError(
                        f"non-numeric feature f{col} {cell!r}", line=lineno) from None
                if not np.isfinite(v):
                    raise DatasetError(f"non-finite feature f{col}", line=lineno)
                feats.append(v)
            ids.append(sid)
            labels.append(lab)
            rows.append(feats)

    if not ids:
        raise DatasetError("file contains no samples", line=2)
    L = num_classes if num_classes is not None else max(labels) + 1
    return Dataset(np.array(ids, dtype=np.int64), np.array(labels, dtype=np.int64),
                   np.array(rows, dtype=np.float64).reshape(len(ids), d), L)
