"""Fixed-capacity associative memory bank with consolidation, novelty, and recency.

A bank holds M slots, each with a consolidated key/value pair, an instance
count, and an age measured in write batches. Reads retrieve the best-matching
slot per query token; writes either fold a token into its nearest slot
(running arithmetic mean) or claim a slot for a novel concept, evicting the
oldest slot when the bank is full.

Banks are single-writer: at most one write may be in flight, and reads must be
externally ordered against writes. Distinct banks are fully independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .vectors import Similarity, as_matrix, batched_similarity


class Ablation(Enum):
    """Write/read policy variants used for component knock-out runs."""

    FULL = "full"
    NO_READ = "no-read"
    NO_RECENCY = "no-recency"
    NO_NOVELTY = "no-novelty"
    NO_CONSOLIDATION = "no-consolidation"

    @classmethod
    def parse(cls, name: str) -> "Ablation":
        normalized = name.strip().lower().replace("_", "-")
        for mode in cls:
            if mode.value == normalized:
                return mode
        raise ValueError(f"unknown ablation mode: {name!r}")


@dataclass(frozen=True)
class BankConfig:
    """Static configuration of one memory bank.

    ``threshold`` is the novelty cutoff R: an incoming token consolidates into
    its best-matching slot when similarity >= R, otherwise it is novel.
    ``seed`` feeds the generator used by the randomized ablations.
    """

    capacity: int
    dim: int
    threshold: float = 0.93
    similarity: Similarity = Similarity.COSINE
    ablation: Ablation = Ablation.FULL
    seed: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"capacity must be positive, got {self.capacity}")
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if not -1.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in [-1, 1], got {self.threshold}")

    @property
    def effective_threshold(self) -> float:
        """Threshold actually applied at write time.

        no-novelty pins R to -1 (everything consolidates once the bank is
        non-empty); no-consolidation pins R to +1 (only exact duplicates
        consolidate, giving FIFO slot turnover).
        """
        if self.ablation is Ablation.NO_NOVELTY:
            return -1.0
        if self.ablation is Ablation.NO_CONSOLIDATION:
            return 1.0
        return self.threshold


@dataclass
class ReadResult:
    """Per-token retrieval: one (key, value, slot, score) entry per query.

    All arrays share length P; P == 0 iff the bank was empty at read time.
    """

    keys: np.ndarray
    values: np.ndarray
    slot_indices: np.ndarray
    scores: np.ndarray

    @classmethod
    def empty(cls, dim: int) -> "ReadResult":
        return cls(
            keys=np.empty((0, dim)),
            values=np.empty((0, dim)),
            slot_indices=np.empty(0, dtype=np.int64),
            scores=np.empty(0),
        )

    def __len__(self) -> int:
        return self.keys.shape[0]


@dataclass(frozen=True)
class TokenWrite:
    """Outcome of writing one token: which slot it touched and how.

    ``action`` is "consolidate", "insert" (novel token filling a free slot)
    or "evict" (novel token replacing the oldest slot). ``similarity`` is the
    best-slot score before the write and ``nearest`` that slot's index; both
    are None when the bank was empty.
    """

    position: int
    slot: int
    action: str
    similarity: float | None
    nearest: int | None = None


@dataclass
class WriteReport:
    """Summary of one write call; consolidated + novel_inserted == tokens written."""

    consolidated: int = 0
    novel_inserted: int = 0
    evicted_slot_indices: list[int] = field(default_factory=list)
    per_token_slot: list[TokenWrite] = field(default_factory=list)


@dataclass
class BankStats:
    occupancy: int
    count_hist: dict[int, int]
    age_hist: dict[int, int]
    total_count: int


@dataclass
class Slot:
    """Read-only view of one slot's state."""

    index: int
    occupied: bool
    key: np.ndarray
    value: np.ndarray
    count: int
    age: int


class MemoryBank:
    """Associative memory over ``config.capacity`` slots of dim ``config.dim``."""

    def __init__(self, config: BankConfig):
        self.config = config
        m, d = config.capacity, config.dim
        self.keys = np.zeros((m, d))
        self.values = np.zeros((m, d))
        self.counts = np.zeros(m, dtype=np.int64)
        self.ages = np.zeros(m, dtype=np.int64)
        self.occupied = np.zeros(m, dtype=bool)
        self.rng = np.random.default_rng(config.seed)
        self._histories: list[list[tuple[str, str]]] = [[] for _ in range(m)]

    @property
    def occupancy(self) -> int:
        return int(self.occupied.sum())

    def slot(self, index: int) -> Slot:
        return Slot(
            index=index,
            occupied=bool(self.occupied[index]),
            key=self.keys[index].copy(),
            value=self.values[index].copy(),
            count=int(self.counts[index]),
            age=int(self.ages[index]),
        )

    # ------------------------------------------------------------------ read

    def read(self, keys, dedupe: bool = False) -> ReadResult:
        """Retrieve the best-matching slot for each query key, in token order.

        Never mutates slot state; duplicates are kept (one entry per query)
        unless ``dedupe`` is set, which drops repeated slot hits. An empty
        bank yields an empty result. Under the no-read ablation the slot
        choice is uniform-random over occupied slots (seeded generator).
        """
        queries = as_matrix(keys, dim=self.config.dim)
        n = queries.shape[0]
        if n == 0 or self.occupancy == 0:
            return ReadResult.empty(self.config.dim)

        occ_idx = np.flatnonzero(self.occupied)
        if self.config.ablation is Ablation.NO_READ:
            chosen = occ_idx[self.rng.integers(0, occ_idx.size, size=n)]
            scores = np.array(
                [
                    batched_similarity(self.keys[s : s + 1], queries[i], self.config.similarity)[0]
                    for i, s in enumerate(chosen)
                ]
            )
        else:
            chosen, scores = self._argmax_slots(queries)

        if dedupe:
            _, first = np.unique(chosen, return_index=True)
            keep = np.sort(first)
            chosen, scores = chosen[keep], scores[keep]

        return ReadResult(
            keys=self.keys[chosen].copy(),
            values=self.values[chosen].copy(),
            slot_indices=chosen.astype(np.int64),
            scores=scores.astype(np.float64),
        )

    def _argmax_slots(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized top-1 slot per query row; ties go to the lowest index."""
        if self.config.similarity is Similarity.COSINE:
            qn = np.linalg.norm(queries, axis=1)
            kn = np.linalg.norm(self.keys, axis=1)
            if np.any(qn == 0.0) or np.any(kn[self.occupied] == 0.0):
                raise ValueError("cosine similarity is undefined for zero vectors")
            kn = np.where(kn == 0.0, 1.0, kn)
            scores = np.clip((self.keys @ queries.T) / np.outer(kn, qn), -1.0, 1.0)
        else:
            # |k - q|^2 expanded to avoid materializing an (M, L, d) cube
            k2 = np.sum(self.keys**2, axis=1)
            q2 = np.sum(queries**2, axis=1)
            sq = np.maximum(k2[:, None] + q2[None, :] - 2.0 * (self.keys @ queries.T), 0.0)
            scores = -np.sqrt(sq)
        scores[~self.occupied, :] = -np.inf
        chosen = np.argmax(scores, axis=0)
        return chosen, scores[chosen, np.arange(queries.shape[0])]

    # ----------------------------------------------------------------- write

    def write(self, keys, values, labels: list[str] | None = None) -> WriteReport:
        """Fold one window of tokens into the bank, strictly in token order.

        Each token consolidates into its best-matching occupied slot when
        similarity >= R (running mean of keys/values, count + 1), else claims
        the lowest free slot, or evicts the occupied slot with maximal age
        (ties to the lowest index; uniform-random under no-recency). Slots
        touched by this call end with age 0; every other occupied slot ages
        by exactly 1 when the call completes.
        """
        kmat = as_matrix(keys, dim=self.config.dim)
        vmat = as_matrix(values, dim=self.config.dim)
        if kmat.shape[0] != vmat.shape[0]:
            raise ValueError(
                f"keys and values disagree in length: {kmat.shape[0]} vs {vmat.shape[0]}"
            )
        if labels is not None and len(labels) != kmat.shape[0]:
            raise ValueError("labels must match the number of tokens written")

        r = self.config.effective_threshold
        report = WriteReport()
        touched: set[int] = set()

        for i in range(kmat.shape[0]):
            k, v = kmat[i], vmat[i]
            best = best_score = None
            occ_idx = np.flatnonzero(self.occupied)
            if occ_idx.size > 0:
                scores = batched_similarity(self.keys[occ_idx], k, self.config.similarity)
                winner = int(np.argmax(scores))  # occ_idx ascending, so ties stay lowest
                best = int(occ_idx[winner])
                best_score = float(scores[winner])

            if best is not None and best_score >= r:
                c = int(self.counts[best])
                self.keys[best] = (k + c * self.keys[best]) / (c + 1)
                self.values[best] = (v + c * self.values[best]) / (c + 1)
                self.counts[best] = c + 1
                self.ages[best] = 0
                slot, action = best, "consolidate"
                report.consolidated += 1
            else:
                slot, action = self._claim_slot()
                if action == "evict":
                    report.evicted_slot_indices.append(slot)
                    self._histories[slot].clear()
                self.keys[slot] = k
                self.values[slot] = v
                self.counts[slot] = 1
                self.ages[slot] = 0
                self.occupied[slot] = True
                report.novel_inserted += 1

            touched.add(slot)
            if labels is not None:
                self._histories[slot].append((labels[i], action))
            report.per_token_slot.append(TokenWrite(i, slot, action, best_score, best))

        if report.per_token_slot:
            stale = self.occupied.copy()
            stale[list(touched)] = False
            self.ages[stale] += 1
        return report

    def _claim_slot(self) -> tuple[int, str]:
        """Pick the slot a novel token takes: lowest free slot, else evict."""
        if self.occupancy < self.config.capacity:
            return int(np.argmax(~self.occupied)), "insert"
        if self.config.ablation is Ablation.NO_RECENCY:
            occ_idx = np.flatnonzero(self.occupied)
            return int(occ_idx[self.rng.integers(0, occ_idx.size)]), "evict"
        masked_ages = np.where(self.occupied, self.ages, -1)
        return int(np.argmax(masked_ages)), "evict"

    # ------------------------------------------------------------- reporting

    def stats(self) -> BankStats:
        """Read-only occupancy/count/age summary; total_count is sum of c over slots."""
        occ = self.occupied
        count_hist: dict[int, int] = {}
        age_hist: dict[int, int] = {}
        for c in self.counts[occ]:
            count_hist[int(c)] = count_hist.get(int(c), 0) + 1
        for a in self.ages[occ]:
            age_hist[int(a)] = age_hist.get(int(a), 0) + 1
        return BankStats(
            occupancy=int(occ.sum()),
            count_hist=count_hist,
            age_hist=age_hist,
            total_count=int(self.counts[occ].sum()),
        )

    def slot_log(self) -> list[list[tuple[str, str]]]:
        """Per-slot (label, action) history for tokens written with labels.

        Eviction clears the slot's history and restarts it with the evicting
        token; unoccupied slots have empty histories.
        """
        return [list(h) for h in self._histories]


def create_bank(config: BankConfig) -> MemoryBank:
    """Create an empty bank: all slots unoccupied, counts and ages zero."""
    return MemoryBank(config)


def stats_csv_rows(stats: BankStats) -> list[list]:
    """Flatten a BankStats into CSV rows with a header."""
    rows: list[list] = [["metric", "key", "value"]]
    rows.append(["occupancy", "", stats.occupancy])
    rows.append(["total_count", "", stats.total_count])
    for c in sorted(stats.count_hist):
        rows.append(["count_hist", c, stats.count_hist[c]])
    for a in sorted(stats.age_hist):
        rows.append(["age_hist", a, stats.age_hist[a]])
    return rows


def slot_log_csv_rows(bank: MemoryBank) -> list[list]:
    """Flatten slot label histories into CSV rows with a header."""
    rows: list[list] = [["slot", "seq", "label", "action"]]
    for slot, history in enumerate(bank.slot_log()):
        for seq, (label, action) in enumerate(history):
            rows.append([slot, seq, label, action])
    return rows
