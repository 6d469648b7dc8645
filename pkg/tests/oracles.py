"""Independent oracles shared by the unit tests and the acceptance gate.

Everything here recomputes expectations from first principles (pure-python
scans, explicit mask matrices, instance ledgers, FIFO deques) so the library
code under test never checks itself.
"""

from __future__ import annotations

import math

import numpy as np

from camem.bank import MemoryBank
from camem.stream import MixtureSpec, Phase
from camem.vectors import Similarity


# --------------------------------------------------------- similarity scans

def cosine_oracle(a, b) -> float:
    if list(a) == list(b):
        return 1.0
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return max(-1.0, min(1.0, dot / (na * nb)))


def neg_euclid_oracle(a, b) -> float:
    if list(a) == list(b):
        return 0.0
    return -math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def scan_oracle(keys, occupied, query, kind: Similarity):
    """Linear top-1 scan with first-wins tie handling."""
    score_fn = cosine_oracle if kind is Similarity.COSINE else neg_euclid_oracle
    best_idx, best_score = None, -math.inf
    for i, (key, occ) in enumerate(zip(keys, occupied)):
        if not occ:
            continue
        score = score_fn(key, query)
        if score > best_score:
            best_idx, best_score = i, score
    return best_idx, best_score


# ------------------------------------------------------------- attention

def dense_mask_oracle(queries, keys, values, prefix_len, scale):
    """Attention via an explicit (L, P+L) visibility matrix."""
    n, total = queries.shape[0], keys.shape[0]
    mask = np.zeros((n, total), dtype=bool)
    for i in range(n):
        for t in range(total):
            mask[i, t] = t < prefix_len or (t - prefix_len) <= i
    logits = scale * queries @ keys.T
    logits = np.where(mask, logits, -np.inf)
    weights = np.exp(logits - logits.max(axis=1, keepdims=True))
    weights /= weights.sum(axis=1, keepdims=True)
    return weights @ values


# --------------------------------------------------------- write accounting

class RecordingOracle:
    """Independent ledger of every instance routed to every slot.

    Maintains per-slot instance lists from the write reports, so stored
    means, counts, and ages can be checked against first principles.
    """

    def __init__(self):
        self.instances: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
        self.ages: dict[int, int] = {}
        self.destroyed = 0
        self.tokens_written = 0

    def apply(self, report, keys, values):
        touched = set()
        for tw in report.per_token_slot:
            k = np.asarray(keys[tw.position], dtype=float)
            v = np.asarray(values[tw.position], dtype=float)
            if tw.action == "consolidate":
                self.instances[tw.slot].append((k, v))
            else:
                if tw.action == "evict":
                    self.destroyed += len(self.instances[tw.slot])
                self.instances[tw.slot] = [(k, v)]
            self.ages[tw.slot] = 0
            touched.add(tw.slot)
            self.tokens_written += 1
        for slot in self.instances:
            if slot not in touched:
                self.ages[slot] += 1

    def check(self, bank: MemoryBank, rtol=1e-9):
        for slot, instances in self.instances.items():
            assert bank.occupied[slot]
            mean_key = np.mean([k for k, _ in instances], axis=0)
            mean_value = np.mean([v for _, v in instances], axis=0)
            np.testing.assert_allclose(bank.keys[slot], mean_key, rtol=rtol, atol=1e-12)
            np.testing.assert_allclose(bank.values[slot], mean_value, rtol=rtol, atol=1e-12)
            assert int(bank.counts[slot]) == len(instances)
            assert int(bank.ages[slot]) == self.ages[slot]
        assert bank.occupancy == len(self.instances)
        assert self.tokens_written == int(bank.counts[bank.occupied].sum()) + self.destroyed


def random_write_stream(rng, bank, n_events, window=8):
    """Yield (keys, values) windows mixing novel and near-duplicate tokens."""
    d = bank.config.dim
    emitted = 0
    while emitted < n_events:
        size = min(window, n_events - emitted)
        keys, values = [], []
        for _ in range(size):
            occ = np.flatnonzero(bank.occupied)
            if occ.size > 0 and rng.random() < 0.5:
                base = bank.keys[occ[rng.integers(occ.size)]]
                key = base + rng.normal(scale=0.01, size=d)
            else:
                key = rng.normal(size=d)
            keys.append(key)
            values.append(rng.normal(size=d))
        emitted += size
        yield np.array(keys), np.array(values)


# ------------------------------------------------------------ FIFO streams

def distinct_key_spec(n_keys: int, dim: int = 6, seed: int = 0) -> MixtureSpec:
    """A stream of pairwise-distinct random keys, one per position."""
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(n_keys, dim))
    return MixtureSpec(
        phases=[Phase(means=means[i : i + 1], weights=[1.0], sigma=0.0, length=1)
                for i in range(n_keys)],
        seed=seed,
    )
