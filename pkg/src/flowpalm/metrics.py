"""Embedding-space distribution metrics: Frechet distance and pairwise
inter-/intra-class cosine distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seeding import rng

MAX_PAIRS = 10**6


@dataclass
class EmbeddingSet:
    vectors: np.ndarray  # (n, d)
    labels: list

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        self.labels = list(self.labels)
        if len(self.labels) != len(self.vectors):
            raise ValueError("labels and vectors differ in length")

    def check_unit(self, tol: float = 1e-6) -> None:
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.any(np.abs(norms - 1.0) > tol):
            raise ValueError("embedding vectors must be unit norm")


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (mat + mat.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def gaussian_frechet(mu_a, cov_a, mu_b, cov_b) -> float:
    """2-Wasserstein distance between N(mu_a, cov_a) and N(mu_b, cov_b)."""
    root_a = _psd_sqrt(cov_a)
    cross = _psd_sqrt(root_a @ cov_b @ root_a)
    d2 = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    return float(np.sqrt(max(d2, 0.0)))


def frechet_distance(a, b, reduce_dim: int | None = None) -> float:
    """Frechet distance between Gaussians fitted to two sample sets.

    ``a``/``b`` are :class:`EmbeddingSet` or ``(n, d)`` arrays (1-D arrays are
    treated as scalar samples). With ``reduce_dim`` both sets are first
    projected onto the leading principal components of their union.
    """
    xa = np.asarray(a.vectors if isinstance(a, EmbeddingSet) else a, dtype=np.float64)
    xb = np.asarray(b.vectors if isinstance(b, EmbeddingSet) else b, dtype=np.float64)
    xa = xa.reshape(len(xa), -1)
    xb = xb.reshape(len(xb), -1)
    if xa.shape[1] != xb.shape[1]:
        raise ValueError(f"dimension mismatch: {xa.shape[1]} vs {xb.shape[1]}")
    if reduce_dim is not None and reduce_dim < xa.shape[1]:
        union = np.vstack([xa, xb])
        centre = union.mean(axis=0)
        _, _, vt = np.linalg.svd(union - centre, full_matrices=False)
        basis = vt[:reduce_dim].T
        xa, xb = (xa - centre) @ basis, (xb - centre) @ basis
    d = xa.shape[1]
    if len(xa) < d + 1 or len(xb) < d + 1:
        raise ValueError(f"need at least {d + 1} samples per set in {d} dimensions")
    cov_a = np.atleast_2d(np.cov(xa, rowvar=False))
    cov_b = np.atleast_2d(np.cov(xb, rowvar=False))
    if not (np.all(np.isfinite(cov_a)) and np.all(np.isfinite(cov_b))):
        raise ValueError("non-finite covariance")
    return gaussian_frechet(xa.mean(axis=0), cov_a, xb.mean(axis=0), cov_b)


def _pairs(n: int, seed: int):
    total = n * (n - 1) // 2
    if total <= MAX_PAIRS:
        return np.triu_indices(n, k=1)
    g = rng(seed, "pairs")
    i = g.integers(n, size=MAX_PAIRS)
    j = (i + g.integers(1, n, size=MAX_PAIRS)) % n
    return i, j


def class_distances(e: EmbeddingSet, seed: int = 0) -> tuple[float | None, float | None]:
    """Mean ``1 - cos`` over different-label pairs (inter) and same-label pairs (intra).

    A statistic with no contributing pairs is returned as ``None``.
    Above 10^6 pairs a seeded uniform subsample of pairs is used.
    """
    x = np.asarray(e.vectors, dtype=np.float64)
    unit = x / np.linalg.norm(x, axis=1, keepdims=True)
    _, codes = np.unique(np.asarray(e.labels, dtype=object).astype(str), return_inverse=True)
    i, j = _pairs(len(x), seed)
    dist = 1.0 - np.einsum("ij,ij->i", unit[i], unit[j])
    same = codes[i] == codes[j]
    inter = float(dist[~same].mean()) if np.any(~same) else None
    intra = float(dist[same].mean()) if np.any(same) else None
    return inter, intra
