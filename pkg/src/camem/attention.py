"""Prefix-augmented multi-head causal attention.

Retrieved memory entries are prepended to a window's native keys/values and
every query attends to the full prefix plus the causal part of the native
window, in a single softmax. All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bank import ReadResult
from .vectors import as_matrix


@dataclass
class KvWindow:
    """One context window's per-head projections, each shaped (heads, L, dim)."""

    queries: np.ndarray
    keys: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if not (self.queries.shape == self.keys.shape == self.values.shape):
            raise ValueError("queries/keys/values must share one (heads, L, dim) shape")
        if self.queries.ndim != 3:
            raise ValueError(f"expected (heads, L, dim) arrays, got shape {self.queries.shape}")

    @property
    def heads(self) -> int:
        return self.queries.shape[0]

    @property
    def length(self) -> int:
        return self.queries.shape[1]


@dataclass
class AugmentedKv:
    """Keys/values of length P+L: retrieved prefix first, native window after."""

    keys: np.ndarray
    values: np.ndarray
    prefix_len: int


def augment(keys, values, read: ReadResult | None = None) -> AugmentedKv:
    """Concatenate retrieved entries, then native ones; no reorder, no dedup."""
    k = as_matrix(keys)
    v = as_matrix(values, dim=k.shape[1])
    if k.shape[0] != v.shape[0]:
        raise ValueError("native keys and values disagree in length")
    if read is None or len(read) == 0:
        return AugmentedKv(keys=k.copy(), values=v.copy(), prefix_len=0)
    if read.keys.shape[1] != k.shape[1]:
        raise ValueError(
            f"retrieved dim {read.keys.shape[1]} does not match native dim {k.shape[1]}"
        )
    return AugmentedKv(
        keys=np.concatenate([read.keys, k], axis=0),
        values=np.concatenate([read.values, v], axis=0),
        prefix_len=len(read),
    )


def prefix_causal_attention(queries, kv: AugmentedKv, scale: float) -> np.ndarray:
    """Causal attention where every query also sees the full retrieved prefix.

    Query i attends to all ``prefix_len`` prefix entries plus native entries
    j <= i. Logits are scale * <q, k>; masked entries are excluded before a
    max-subtracted softmax. Returns (L, dim_v) outputs.
    """
    q = as_matrix(queries)
    if scale <= 0.0:
        raise ValueError(f"scale must be positive, got {scale}")
    p = kv.prefix_len
    total = kv.keys.shape[0]
    n = q.shape[0]
    if total - p != n:
        raise ValueError(f"native span {total - p} does not match query count {n}")
    if kv.keys.shape[1] != q.shape[1]:
        raise ValueError("query dim does not match key dim")

    logits = scale * (q @ kv.keys.T)  # (n, p + n)
    native_cols = np.arange(total - p)
    visible = np.ones((n, total), dtype=bool)
    visible[:, p:] = native_cols[None, :] <= np.arange(n)[:, None]
    logits[~visible] = -np.inf

    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights @ kv.values


def attend_heads(
    window: KvWindow,
    reads: list[ReadResult | None],
    scale: float | None = None,
) -> np.ndarray:
    """Run prefix attention per head and concatenate outputs in head order.

    ``reads`` supplies one optional retrieval result per head (None or an
    empty result means plain causal attention for that head). Default scale
    is 1/sqrt(head dim). Returns (L, heads * dim).
    """
    if len(reads) != window.heads:
        raise ValueError(f"expected {window.heads} read results, got {len(reads)}")
    if scale is None:
        scale = 1.0 / np.sqrt(window.queries.shape[2])
    outputs = []
    for h in range(window.heads):
        kv = augment(window.keys[h], window.values[h], reads[h])
        outputs.append(prefix_causal_attention(window.queries[h], kv, scale))
    return np.concatenate(outputs, axis=1)
