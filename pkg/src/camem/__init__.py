"""Consolidated associative key/value memory for causal attention models.

Per-layer banks store running-mean key/value concepts managed by novelty and
recency; retrieved slots are prepended as a causal-attention prefix. Includes
a toy char-LM harness, a synthetic stream simulator with replay oracles, and
a sweep-driving CLI (``camem``).
"""

from .attention import AugmentedKv, KvWindow, attend_heads, augment, prefix_causal_attention
from .bank import (
    Ablation,
    BankConfig,
    BankStats,
    MemoryBank,
    ReadResult,
    Slot,
    WriteReport,
    create_bank,
)
from .lm import CharVocab, LmConfig, TinyLm, eval_clm, eval_documents, eval_icl, make_bank_set
from .snapshot import (
    SnapshotConfigError,
    SnapshotError,
    SnapshotFormatError,
    SnapshotVersionError,
    restore,
    snapshot,
)
from .stream import (
    MixtureSpec,
    Phase,
    StreamSample,
    fifo_oracle_check,
    full_attention_oracle,
    generate_stream,
    mode_recovery_metrics,
    run_memory_on_stream,
)
from .vectors import Similarity, nearest_slot, similarity, threshold_to_radius

__version__ = "0.1.0"

__all__ = [
    "Ablation",
    "AugmentedKv",
    "BankConfig",
    "BankStats",
    "CharVocab",
    "KvWindow",
    "LmConfig",
    "MemoryBank",
    "MixtureSpec",
    "Phase",
    "ReadResult",
    "Similarity",
    "Slot",
    "SnapshotConfigError",
    "SnapshotError",
    "SnapshotFormatError",
    "SnapshotVersionError",
    "StreamSample",
    "TinyLm",
    "WriteReport",
    "attend_heads",
    "augment",
    "create_bank",
    "eval_clm",
    "eval_documents",
    "eval_icl",
    "fifo_oracle_check",
    "full_attention_oracle",
    "generate_stream",
    "make_bank_set",
    "mode_recovery_metrics",
    "nearest_slot",
    "prefix_causal_attention",
    "restore",
    "run_memory_on_stream",
    "similarity",
    "snapshot",
    "threshold_to_radius",
]
