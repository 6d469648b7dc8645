"""Synthetic key/value streams and oracles for the consolidation dynamics.

Streams are drawn from a phased Gaussian mixture: each phase holds its own
mode means, mixing weights, isotropic noise level, and length, so topic
shifts are modeled as phase changes. Running a bank over such a stream lets
the replay oracles check mode recovery, eviction order, and the geometric
acceptance rule without touching a language model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .attention import AugmentedKv, augment, prefix_causal_attention
from .bank import BankConfig, MemoryBank, create_bank
from .vectors import threshold_to_radius


@dataclass
class Phase:
    """One stationary segment of the stream."""

    means: np.ndarray  # (modes, dim)
    weights: np.ndarray  # (modes,)
    sigma: float
    length: int

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.means.ndim != 2 or self.means.shape[0] == 0:
            raise ValueError("phase needs a non-empty (modes, dim) mean array")
        if self.weights.shape != (self.means.shape[0],):
            raise ValueError("one weight per mode is required")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12 or np.any(self.weights < 0):
            raise ValueError("weights must be a simplex (non-negative, summing to 1)")
        if self.sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if self.length < 1:
            raise ValueError("phase length must be positive")


@dataclass
class MixtureSpec:
    """Generator description for a phased mixture stream.

    Mode indices are global: phase 0 contributes modes 0..k0-1, phase 1 the
    next k1, and so on. ``values`` maps each global mode to a fixed value
    vector; when omitted, distinct scaled basis vectors are used so value
    consolidation stays analytically checkable. ``value_noise_sigma`` adds
    isotropic noise to values, mirroring the key noise.
    """

    phases: list[Phase]
    seed: int = 0
    values: np.ndarray | None = None
    value_noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.phases:
            raise ValueError("at least one phase is required")
        dims = {p.means.shape[1] for p in self.phases}
        if len(dims) != 1:
            raise ValueError(f"all phases must share one dimension, got {dims}")
        if self.value_noise_sigma < 0:
            raise ValueError("value noise sigma must be non-negative")
        if self.values is None:
            self.values = self._default_values()
        else:
            self.values = np.asarray(self.values, dtype=np.float64)
            if self.values.shape != (self.total_modes, self.dim):
                raise ValueError(
                    f"values must be ({self.total_modes}, {self.dim}), got {self.values.shape}"
                )

    @property
    def dim(self) -> int:
        return self.phases[0].means.shape[1]

    @property
    def total_modes(self) -> int:
        return sum(p.means.shape[0] for p in self.phases)

    @property
    def total_length(self) -> int:
        return sum(p.length for p in self.phases)

    @property
    def mode_means(self) -> np.ndarray:
        """Global (total_modes, dim) stack of phase mode means."""
        return np.concatenate([p.means for p in self.phases], axis=0)

    def phase_mode_offset(self, phase_index: int) -> int:
        return sum(p.means.shape[0] for p in self.phases[:phase_index])

    def _default_values(self) -> np.ndarray:
        d = self.dim
        out = np.zeros((self.total_modes, d))
        for m in range(self.total_modes):
            out[m, m % d] = 1.0 + m // d
        return out

    # -------------------------------------------------------------- JSON IO

    @classmethod
    def from_dict(cls, doc: dict) -> "MixtureSpec":
        phases = [
            Phase(
                means=p["means"],
                weights=p.get("weights", [1.0 / len(p["means"])] * len(p["means"])),
                sigma=float(p.get("sigma", 0.0)),
                length=int(p["length"]),
            )
            for p in doc.get("phases", [])
        ]
        return cls(
            phases=phases,
            seed=int(doc.get("seed", 0)),
            values=doc.get("values"),
            value_noise_sigma=float(doc.get("value_noise_sigma", 0.0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "MixtureSpec":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "value_noise_sigma": self.value_noise_sigma,
            "values": self.values.tolist(),
            "phases": [
                {
                    "means": p.means.tolist(),
                    "weights": p.weights.tolist(),
                    "sigma": p.sigma,
                    "length": p.length,
                }
                for p in self.phases
            ],
        }


@dataclass
class StreamSample:
    key: np.ndarray
    value: np.ndarray
    true_mode: int
    phase: int


def generate_stream(spec: MixtureSpec, n: int | None = None) -> list[StreamSample]:
    """Draw ``n`` samples (default: the full length), deterministic in the seed."""
    total = spec.total_length
    if n is None:
        n = total
    if n > total:
        raise ValueError(f"requested {n} samples but phases only define {total}")
    rng = np.random.default_rng(spec.seed)
    samples: list[StreamSample] = []
    for phase_index, phase in enumerate(spec.phases):
        offset = spec.phase_mode_offset(phase_index)
        for _ in range(phase.length):
            if len(samples) == n:
                return samples
            local = int(rng.choice(phase.means.shape[0], p=phase.weights))
            mode = offset + local
            key = phase.means[local] + phase.sigma * rng.normal(size=spec.dim)
            value = spec.values[mode] + spec.value_noise_sigma * rng.normal(size=spec.dim)
            samples.append(StreamSample(key=key, value=value, true_mode=mode, phase=phase_index))
    return samples


# ------------------------------------------------------------- event logging

@dataclass(frozen=True)
class WriteEvent:
    """One written token: where it went and what it was."""

    index: int
    window: int
    token: int
    action: str
    slot: int
    similarity: float | None
    nearest: int | None
    key: np.ndarray
    value: np.ndarray
    true_mode: int
    phase: int


@dataclass
class EventLog:
    window_len: int
    events: list[WriteEvent] = field(default_factory=list)

    def csv_rows(self) -> list[list]:
        rows: list[list] = [["event", "window", "token", "action", "slot", "similarity"]]
        for e in self.events:
            sim = "" if e.similarity is None else repr(e.similarity)
            rows.append([e.index, e.window, e.token, e.action, e.slot, sim])
        return rows


def run_memory_on_stream(
    spec: MixtureSpec,
    bank_config: BankConfig,
    window_len: int,
    n: int | None = None,
    with_reads: bool = False,
) -> tuple[MemoryBank, EventLog]:
    """Chunk the stream into windows and write each into a fresh bank.

    Reads are off by default (they do not affect the write dynamics); enable
    ``with_reads`` to exercise the read path ahead of every write.
    """
    if bank_config.dim != spec.dim:
        raise ValueError(f"bank dim {bank_config.dim} does not match stream dim {spec.dim}")
    if window_len < 1:
        raise ValueError("window length must be positive")
    samples = generate_stream(spec, n)
    bank = create_bank(bank_config)
    log = EventLog(window_len=window_len)
    for start in range(0, len(samples), window_len):
        chunk = samples[start : start + window_len]
        keys = np.array([s.key for s in chunk])
        values = np.array([s.value for s in chunk])
        if with_reads:
            bank.read(keys)
        report = bank.write(keys, values, labels=[f"m{s.true_mode}" for s in chunk])
        window = start // window_len
        for tw in report.per_token_slot:
            sample = chunk[tw.position]
            log.events.append(
                WriteEvent(
                    index=start + tw.position,
                    window=window,
                    token=tw.position,
                    action=tw.action,
                    slot=tw.slot,
                    similarity=tw.similarity,
                    nearest=tw.nearest,
                    key=sample.key,
                    value=sample.value,
                    true_mode=sample.true_mode,
                    phase=sample.phase,
                )
            )
    return bank, log


class _ShadowSlots:
    """Replays slot contents from an event log, independent of the bank."""

    def __init__(self):
        self.keys: dict[int, np.ndarray] = {}
        self.counts: dict[int, int] = {}
        self.modes: dict[int, list[int]] = {}

    def apply(self, event: WriteEvent) -> None:
        s = event.slot
        if event.action == "consolidate":
            c = self.counts[s]
            self.keys[s] = (event.key + c * self.keys[s]) / (c + 1)
            self.counts[s] = c + 1
            self.modes[s].append(event.true_mode)
        else:
            self.keys[s] = event.key.copy()
            self.counts[s] = 1
            self.modes[s] = [event.true_mode]


# ------------------------------------------------------------------ metrics

@dataclass
class ModeRecovery:
    recovered_modes: int
    mean_key_error: float
    count_accuracy: float
    purity: float


def mode_recovery_metrics(bank: MemoryBank, spec: MixtureSpec, log: EventLog) -> ModeRecovery:
    """Match slots to generating modes and score the recovered summary.

    Each occupied slot is assigned to its nearest mode mean. Recovered modes
    counts distinct matched modes; key error averages slot-to-mode distances;
    count accuracy is sum_m min(n_m, c_m) / n where n_m counts stream samples
    of mode m and c_m the instances held by slots matched to m; purity is the
    fraction of consolidated instances sharing their slot's majority mode.
    """
    occupied = np.flatnonzero(bank.occupied)
    if occupied.size == 0:
        return ModeRecovery(0, 0.0, 0.0, 0.0)
    means = spec.mode_means

    matched: dict[int, int] = {}
    errors = []
    for slot in occupied:
        dists = np.linalg.norm(means - bank.keys[slot], axis=1)
        mode = int(np.argmin(dists))
        matched[int(slot)] = mode
        errors.append(float(dists[mode]))

    shadow = _ShadowSlots()
    for event in log.events:
        shadow.apply(event)

    true_counts: dict[int, int] = {}
    for event in log.events:
        true_counts[event.true_mode] = true_counts.get(event.true_mode, 0) + 1
    held: dict[int, int] = {}
    for slot, mode in matched.items():
        held[mode] = held.get(mode, 0) + int(bank.counts[slot])
    total = sum(true_counts.values())
    overlap = sum(min(n, held.get(mode, 0)) for mode, n in true_counts.items())

    instance_total = 0
    majority_total = 0
    for slot in occupied:
        modes = shadow.modes.get(int(slot), [])
        if not modes:
            continue
        instance_total += len(modes)
        majority_total += max(modes.count(m) for m in set(modes))

    return ModeRecovery(
        recovered_modes=len(set(matched.values())),
        mean_key_error=float(np.mean(errors)),
        count_accuracy=overlap / total if total else 0.0,
        purity=majority_total / instance_total if instance_total else 0.0,
    )


@dataclass
class FifoCheck:
    passed: bool
    divergence_event: int | None = None
    reason: str = ""


def fifo_oracle_check(log: EventLog, capacity: int) -> FifoCheck:
    """Compare slot turnover against a capacity-M FIFO buffer.

    Valid for no-consolidation runs over pairwise-distinct keys: every token
    must claim a slot, and after each window the occupied contents must equal
    the last ``capacity`` stream keys. A consolidation event (for example a
    duplicate key, which always clears the threshold) is itself a divergence.
    Window sizes should divide the capacity at most twice over (windows tile
    the bank; at least two window cohorts), otherwise age ties make the
    within-window eviction order underdetermined.
    """
    fifo: list[tuple] = []
    shadow = _ShadowSlots()
    by_window: dict[int, list[WriteEvent]] = {}
    for event in log.events:
        by_window.setdefault(event.window, []).append(event)

    for window in sorted(by_window):
        for event in by_window[window]:
            if event.action == "consolidate":
                return FifoCheck(False, event.index, "token consolidated instead of claiming a slot")
            shadow.apply(event)
            fifo.append(tuple(event.key))
            if len(fifo) > capacity:
                fifo.pop(0)
        stored = sorted(tuple(k) for k in shadow.keys.values())
        if stored != sorted(fifo):
            return FifoCheck(
                False,
                by_window[window][-1].index,
                f"window {window}: slot contents differ from the FIFO buffer",
            )
    return FifoCheck(True)


def acceptance_geometry_check(log: EventLog, threshold: float, tol: float = 1e-9) -> FifoCheck:
    """Cross-check write decisions against the kernel-radius rule.

    For unit-norm keys a token must consolidate into its nearest slot exactly
    when its chord distance to that slot's key is within
    ``threshold_to_radius(threshold)``. Knife-edge events within ``tol`` of
    the radius are skipped.
    """
    radius = threshold_to_radius(threshold)
    shadow = _ShadowSlots()
    for event in log.events:
        if event.nearest is not None:
            dist = float(np.linalg.norm(event.key - shadow.keys[event.nearest]))
            if abs(dist - radius) > tol:
                consolidated = event.action == "consolidate"
                if consolidated != (dist <= radius):
                    return FifoCheck(
                        False,
                        event.index,
                        f"event {event.index}: chord {dist:.6f} vs radius {radius:.6f} "
                        f"disagrees with action {event.action}",
                    )
        shadow.apply(event)
    return FifoCheck(True)


# ------------------------------------------------- full-attention comparison

@dataclass
class FullAttentionComparison:
    augmented: np.ndarray
    exact: np.ndarray
    max_deviation: float


def full_attention_oracle(
    history_keys,
    history_values,
    window_keys,
    window_values,
    bank: MemoryBank,
    scale: float,
) -> FullAttentionComparison:
    """Memory-augmented attention versus exact attention over the full history.

    Window keys double as queries. The exact side treats every stored history
    entry as an always-visible prefix ahead of the causal window; the
    augmented side replaces that history with the bank's per-token retrieval.
    Reports the elementwise max deviation as a diagnostic (no bound is
    implied). History is capped at 4096 entries to keep the dense side exact
    and cheap.
    """
    history_keys = np.asarray(history_keys, dtype=np.float64).reshape(-1, bank.config.dim)
    history_values = np.asarray(history_values, dtype=np.float64).reshape(-1, bank.config.dim)
    if history_keys.shape[0] > 4096:
        raise ValueError("history too long for the dense comparison (max 4096)")
    window_keys = np.asarray(window_keys, dtype=np.float64)
    window_values = np.asarray(window_values, dtype=np.float64)

    read = bank.read(window_keys)
    augmented_kv = augment(window_keys, window_values, read)
    augmented = prefix_causal_attention(window_keys, augmented_kv, scale)

    exact_kv = AugmentedKv(
        keys=np.concatenate([history_keys, window_keys], axis=0),
        values=np.concatenate([history_values, window_values], axis=0),
        prefix_len=history_keys.shape[0],
    )
    exact = prefix_causal_attention(window_keys, exact_kv, scale)
    return FullAttentionComparison(
        augmented=augmented,
        exact=exact,
        max_deviation=float(np.max(np.abs(augmented - exact))),
    )
