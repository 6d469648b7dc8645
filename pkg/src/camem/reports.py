"""Evaluation reports: aggregation, frequency buckets, and file output."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .lm import ClmEval


def canonical_json(obj) -> str:
    """Deterministic JSON encoding (sorted keys, no whitespace)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(obj) -> str:
    """Stable 16-hex-char digest of a canonicalized config object."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


@dataclass
class WindowRow:
    index: int
    tokens: int  # scored tokens in the window, the weight of its mean NLL
    nll: float


@dataclass
class EvalReport:
    """Serializable summary of one CLM evaluation run."""

    config_digest: str
    ablation: str
    perplexity: float
    per_window: list[WindowRow]
    buckets: dict[str, float] | None = None
    generated_at: str | None = None
    token_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64),
                                  repr=False)
    token_nlls: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    @classmethod
    def from_eval(cls, result: ClmEval, digest: str, ablation: str,
                  buckets: dict[str, float] | None = None) -> "EvalReport":
        rows = [
            WindowRow(index=i, tokens=t, nll=n)
            for i, (t, n) in enumerate(zip(result.window_tokens, result.window_nlls))
        ]
        return cls(
            config_digest=digest,
            ablation=ablation,
            perplexity=result.perplexity,
            per_window=rows,
            buckets=buckets,
            token_ids=result.token_ids,
            token_nlls=result.token_nlls,
        )

    def to_json_dict(self) -> dict:
        doc = {
            "config_digest": self.config_digest,
            "ablation": self.ablation,
            "perplexity": self.perplexity,
            "per_window": [
                {"index": r.index, "tokens": r.tokens, "nll": r.nll} for r in self.per_window
            ],
            "buckets": self.buckets,
        }
        if self.generated_at is not None:
            doc["generated_at"] = self.generated_at
        return doc

    def csv_rows(self) -> list[list]:
        rows: list[list] = [["index", "tokens", "nll"]]
        rows.extend([r.index, r.tokens, repr(r.nll)] for r in self.per_window)
        return rows


DEFAULT_BUCKET_EDGES = (10_000, 1_000, 100)


def bucket_labels(edges) -> list[str]:
    labels = [f">{edges[0]}"]
    labels.extend(f"{lo}-{hi}" for hi, lo in zip(edges, edges[1:]))
    labels.append(f"<{edges[-1]}")
    return labels


def token_frequencies(token_ids) -> dict[int, int]:
    """Occurrence count per token id, typically over the training split."""
    ids, counts = np.unique(np.asarray(token_ids, dtype=np.int64), return_counts=True)
    return {int(i): int(c) for i, c in zip(ids, counts)}


def freq_bucket_report(
    token_ids,
    token_nlls,
    freq_table: dict[int, int],
    edges=DEFAULT_BUCKET_EDGES,
) -> dict[str, float]:
    """Per-bucket perplexity, bucketing test tokens by training frequency.

    ``edges`` must be strictly decreasing positive thresholds; bucket j
    covers frequencies in (edges[j], edges[j-1]] and the last bucket keeps
    everything at or below the smallest edge, including tokens missing from
    the table (frequency 0). Empty buckets are omitted.
    """
    edges = tuple(int(e) for e in edges)
    if not edges or any(e <= 0 for e in edges) or list(edges) != sorted(edges, reverse=True) \
            or len(set(edges)) != len(edges):
        raise ValueError(f"bucket edges must be strictly decreasing positives, got {edges}")
    token_ids = np.asarray(token_ids, dtype=np.int64)
    token_nlls = np.asarray(token_nlls, dtype=np.float64)
    if token_ids.shape != token_nlls.shape:
        raise ValueError("token ids and NLLs must align")

    labels = bucket_labels(edges)
    sums = np.zeros(len(labels))
    counts = np.zeros(len(labels), dtype=np.int64)
    for tid, nll in zip(token_ids, token_nlls):
        freq = freq_table.get(int(tid), 0)
        bucket = len(edges)  # lowest bucket by default
        for j, edge in enumerate(edges):
            if freq > edge:
                bucket = j
                break
        sums[bucket] += nll
        counts[bucket] += 1
    return {
        labels[j]: float(np.exp(sums[j] / counts[j]))
        for j in range(len(labels))
        if counts[j] > 0
    }


def write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh).writerows(rows)
