"""Dense vector arithmetic, similarity measures, and exact nearest-slot search.

Everything here is a pure function over float64 numpy arrays; the rest of the
package builds on these primitives.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np


class Similarity(Enum):
    """Supported similarity measures. Higher score means more similar."""

    COSINE = "cosine"
    NEGATIVE_EUCLIDEAN = "negative-euclidean"

    @classmethod
    def parse(cls, name: str) -> "Similarity":
        """Parse a config string; accepts "euclidean" as an alias."""
        normalized = name.strip().lower().replace("_", "-")
        if normalized == "euclidean":
            normalized = "negative-euclidean"
        for kind in cls:
            if kind.value == normalized:
                return kind
        raise ValueError(f"unknown similarity kind: {name!r}")


def as_vector(x, dim: int | None = None) -> np.ndarray:
    """Validate and convert to a finite 1-D float64 vector."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite elements")
    return v


def as_matrix(x, dim: int | None = None) -> np.ndarray:
    """Validate and convert to a finite 2-D (n, dim) float64 array."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1) if m.size else m.reshape(0, 0)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {m.shape}")
    if dim is not None and m.shape[0] > 0 and m.shape[1] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise ValueError("array contains non-finite elements")
    return m


def similarity(a, b, kind: Similarity = Similarity.COSINE) -> float:
    """Similarity score between two vectors.

    Cosine returns dot(a,b)/(|a||b|) in [-1, 1]; negative euclidean returns
    -|a-b| in (-inf, 0]. Bitwise-identical inputs score exactly 1.0 / 0.0
    so that exact duplicates always clear any threshold R <= 1.
    """
    va = as_vector(a)
    vb = as_vector(b, dim=va.shape[0])
    if kind is Similarity.NEGATIVE_EUCLIDEAN:
        return -float(np.linalg.norm(va - vb))
    if np.array_equal(va, vb):
        return 1.0
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for zero vectors")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def batched_similarity(keys: np.ndarray, query: np.ndarray, kind: Similarity) -> np.ndarray:
    """Similarity of one query against every row of ``keys``; returns (n,) scores.

    Rows bitwise-equal to the query get the exact maximal score (1.0 for
    cosine, 0.0 for negative euclidean) regardless of rounding.
    """
    q = as_vector(query)
    k = as_matrix(keys, dim=q.shape[0])
    if k.shape[0] == 0:
        return np.empty(0, dtype=np.float64)
    exact = np.all(k == q, axis=1)
    if kind is Similarity.NEGATIVE_EUCLIDEAN:
        scores = -np.linalg.norm(k - q, axis=1)
        scores[exact] = 0.0
        return scores
    qn = np.linalg.norm(q)
    if qn == 0.0:
        raise ValueError("cosine similarity is undefined for zero vectors")
    norms = np.linalg.norm(k, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("cosine similarity is undefined for zero vectors")
    scores = np.clip((k @ q) / (norms * qn), -1.0, 1.0)
    scores[exact] = 1.0
    return scores


def nearest_slot(
    keys: np.ndarray,
    occupied: np.ndarray,
    query: np.ndarray,
    kind: Similarity = Similarity.COSINE,
) -> tuple[int, float]:
    """Exact top-1 search over the occupied rows of ``keys``.

    Returns (index, score) of the occupied row with maximal similarity to
    ``query``; ties resolve to the lowest index. Raises ValueError when no
    row is occupied (callers decide what an empty bank means).
    """
    occ = np.asarray(occupied, dtype=bool)
    k = as_matrix(keys)
    if occ.shape != (k.shape[0],):
        raise ValueError("occupied mask length must match number of keys")
    if not occ.any():
        raise ValueError("nearest_slot requires at least one occupied entry")
    scores = batched_similarity(k, query, kind)
    masked = np.where(occ, scores, -np.inf)
    idx = int(np.argmax(masked))  # argmax returns the first (lowest) index on ties
    return idx, float(scores[idx])


def threshold_to_radius(r: float) -> float:
    """Chord length R_hat = sqrt(2(1-R)) matching a cosine threshold R.

    For unit vectors a, b: cos(a,b) >= R  <=>  |a-b| <= R_hat.
    """
    if not -1.0 <= r <= 1.0:
        raise ValueError(f"threshold must lie in [-1, 1], got {r}")
    return math.sqrt(2.0 * (1.0 - r))
