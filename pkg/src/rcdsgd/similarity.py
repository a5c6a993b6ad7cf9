"""Pairwise similarities and per-class similarity matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .dataset import Dataset

__all__ = [
    "KernelSpec",
    "SimilarityMatrix",
    "ZeroBandwidthError",
    "EXACT_SIGMA_LIMIT",
    "DEFAULT_PAIR_SAMPLES",
    "bandwidth_sigma",
    "gaussian_similarity",
    "cosine_similarity",
    "build_class_similarity",
    "resolve_kernel",
]

# Exact bandwidth below this many samples, pair sampling above it.
EXACT_SIGMA_LIMIT = 2000
DEFAULT_PAIR_SAMPLES = 100_000

KERNELS = ("gaussian_l2", "cosine")


class ZeroBandwidthError(ValueError):
    """All feature vectors coincide, so the Gaussian bandwidth is zero."""


@dataclass(frozen=True)
class KernelSpec:
    """Similarity kernel choice.

    ``sigma=None`` means "estimate from the data" (see :func:`resolve_kernel`);
    ``pair_sample_size`` is ``"exact"``, a positive int, or ``None`` for the
    size-dependent default.
    """

    kind: str = "gaussian_l2"
    sigma: float | None = None
    pair_sample_size: int | str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KERNELS}")
        if self.kind == "gaussian_l2" and self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be > 0 for the gaussian_l2 kernel")
        p = self.pair_sample_size
        if p is not None and p != "exact" and not (isinstance(p, (int, np.integer)) and p >= 1):
            raise ValueError("pair_sample_size must be 'exact' or a positive integer")


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    class_index: int
    member_positions: np.ndarray
    values: np.ndarray
    eval_count: int

    @property
    def size(self):
        return self.values.shape[0]


def _check_vec(v, w):
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if v.ndim != 1 or v.shape != w.shape:
        raise ValueError(f"dimension mismatch: {v.shape} vs {w.shape}")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
        raise ValueError("non-finite input vector")
    return v, w


def _gauss_from_sqdist(d2, sigma):
    # shared by the scalar and the matrix paths so both round identically
    return np.exp(-np.asarray(d2, dtype=np.float64) / (2.0 * sigma * sigma))


def gaussian_similarity(v, w, sigma: float) -> float:
    """``exp(-||v - w||^2 / (2 sigma^2))``."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    v, w = _check_vec(v, w)
    diff = v - w
    d2 = (diff * diff).sum()
    return float(_gauss_from_sqdist(np.array([d2]), sigma)[0])


def cosine_similarity(v, w) -> float:
    v, w = _check_vec(v, w)
    nv, nw = np.linalg.norm(v), np.linalg.norm(w)
    if nv == 0 or nw == 0:
        raise ValueError("cosine similarity is undefined for a zero-norm vector")
    return float(np.clip(np.dot(v, w) / (nv * nw), -1.0, 1.0))


def bandwidth_sigma(ds: Dataset, sample="exact", seed: int = 0) -> float:
    """Mean L2 distance over ordered pairs, self-pairs included.

    With ``sample="exact"`` this is ``sum_{v,v'} ||v - v'|| / n**2``; with an
    integer it is the mean over that many uniformly drawn ordered pairs.
    """
    X = ds.features
    n = X.shape[0]
    if sample == "exact":
        total = 2.0 * pdist(X).sum() if n > 1 else 0.0
        sigma = total / (n * n)
    else:
        k = int(sample)
        if k < 1:
            raise ValueError("sample must be 'exact' or a positive integer")
        rng = np.random.default_rng(seed)
        a = rng.integers(0, n, size=k)
        b = rng.integers(0, n, size=k)
        sigma = float(np.linalg.norm(X[a] - X[b], axis=1).mean())
    if not sigma > 0:
        raise ZeroBandwidthError(
            "bandwidth is zero: all feature vectors are identical, the Gaussian kernel is undefined")
    return float(sigma)


def resolve_kernel(ds: Dataset, spec: KernelSpec) -> KernelSpec:
    """Fill in ``sigma`` from the whole dataset when it is not given."""
    if spec.kind != "gaussian_l2" or spec.sigma is not None:
        return spec
    sample = spec.pair_sample_size
    if sample is None:
        sample = "exact" if ds.n <= EXACT_SIGMA_LIMIT else DEFAULT_PAIR_SAMPLES
    sigma = bandwidth_sigma(ds, sample, spec.seed)
    return KernelSpec(spec.kind, sigma, spec.pair_sample_size, spec.seed)


def build_class_similarity(ds: Dataset, class_index: int, spec: KernelSpec) -> SimilarityMatrix:
    """Dense kernel matrix over one class.

    The upper triangle (diagonal included) is evaluated once and mirrored, so
    ``eval_count == m * (m + 1) // 2``.
    """
    if not 0 <= class_index < ds.num_classes:
        raise ValueError(f"class index {class_index} out of range")
    if spec.kind == "gaussian_l2" and spec.sigma is None:
        raise ValueError("gaussian_l2 kernel needs sigma; call resolve_kernel first")
    pos = np.flatnonzero(ds.labels == class_index)
    m = pos.shape[0]
    if m == 0:
        raise ValueError(f"class {class_index} is empty")
    X = ds.features[pos]
    S = np.empty((m, m))
    if spec.kind == "cosine":
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms == 0):
            raise ValueError("cosine similarity is undefined for a zero-norm vector")
    for a in range(m):
        rest = X[a:]
        if spec.kind == "gaussian_l2":
            diff = X[a] - rest
            row = _gauss_from_sqdist((diff * diff).sum(axis=1), spec.sigma)
        else:
            row = np.clip(rest @ X[a] / (norms[a:] * norms[a]), -1.0, 1.0)
        S[a, a:] = row
        S[a:, a] = row
    S.setflags(write=False)
    pos.setflags(write=False)
    return SimilarityMatrix(class_index, pos, S, m * (m + 1) // 2)
