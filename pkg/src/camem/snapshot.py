"""Binary snapshot format for memory banks.

Layout (little-endian): magic "CAMB", format version u32, dim u32,
capacity u64, similarity tag u8, ablation tag u8, threshold f64, then one
record per slot (occupied u8, count u64, age u64, key d*f64, value d*f64),
then the seeded-RNG state as a u32-length-prefixed JSON blob.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .bank import Ablation, BankConfig, MemoryBank
from .vectors import Similarity

MAGIC = b"CAMB"
FORMAT_VERSION = 1

_SIMILARITY_TAGS = {Similarity.COSINE: 0, Similarity.NEGATIVE_EUCLIDEAN: 1}
_ABLATION_TAGS = {
    Ablation.FULL: 0,
    Ablation.NO_READ: 1,
    Ablation.NO_RECENCY: 2,
    Ablation.NO_NOVELTY: 3,
    Ablation.NO_CONSOLIDATION: 4,
}
_TAG_SIMILARITY = {v: k for k, v in _SIMILARITY_TAGS.items()}
_TAG_ABLATION = {v: k for k, v in _ABLATION_TAGS.items()}

_HEADER = struct.Struct("<4sIIQBBd")


class SnapshotError(Exception):
    """Base class for snapshot decode failures."""


class SnapshotFormatError(SnapshotError):
    """Corrupted or truncated stream (bad magic, bad tags, wrong length)."""


class SnapshotVersionError(SnapshotError):
    """Stream was written by an unsupported format version."""


class SnapshotConfigError(SnapshotError):
    """Stream config does not match the config expected by the caller."""


def _slot_dtype(dim: int) -> np.dtype:
    return np.dtype(
        [
            ("occupied", "<u1"),
            ("count", "<u8"),
            ("age", "<u8"),
            ("key", "<f8", (dim,)),
            ("value", "<f8", (dim,)),
        ]
    )


def snapshot(bank: MemoryBank) -> bytes:
    """Serialize a bank, including the ablation RNG state, to bytes."""
    cfg = bank.config
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        cfg.dim,
        cfg.capacity,
        _SIMILARITY_TAGS[cfg.similarity],
        _ABLATION_TAGS[cfg.ablation],
        cfg.threshold,
    )
    records = np.zeros(cfg.capacity, dtype=_slot_dtype(cfg.dim))
    records["occupied"] = bank.occupied
    records["count"] = bank.counts
    records["age"] = bank.ages
    records["key"] = bank.keys
    records["value"] = bank.values
    rng_blob = json.dumps(bank.rng.bit_generator.state, sort_keys=True).encode("utf-8")
    return header + records.tobytes() + struct.pack("<I", len(rng_blob)) + rng_blob


def restore(data: bytes, expected: BankConfig) -> MemoryBank:
    """Rebuild a bank from ``snapshot`` output.

    The stream's dim, capacity, threshold, similarity, and ablation must all
    match ``expected``; raises SnapshotConfigError otherwise. Corrupted or
    truncated streams raise SnapshotFormatError, and a version the reader
    does not understand raises SnapshotVersionError.
    """
    if len(data) < _HEADER.size:
        raise SnapshotFormatError("stream shorter than the fixed header")
    magic, version, dim, capacity, sim_tag, abl_tag, threshold = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise SnapshotVersionError(f"unsupported format version {version}")
    if sim_tag not in _TAG_SIMILARITY or abl_tag not in _TAG_ABLATION:
        raise SnapshotFormatError(f"unknown similarity/ablation tags ({sim_tag}, {abl_tag})")

    stream_cfg = dict(
        dim=dim,
        capacity=capacity,
        threshold=threshold,
        similarity=_TAG_SIMILARITY[sim_tag],
        ablation=_TAG_ABLATION[abl_tag],
    )
    expected_cfg = dict(
        dim=expected.dim,
        capacity=expected.capacity,
        threshold=expected.threshold,
        similarity=expected.similarity,
        ablation=expected.ablation,
    )
    if stream_cfg != expected_cfg:
        diffs = {k: (stream_cfg[k], expected_cfg[k]) for k in stream_cfg if stream_cfg[k] != expected_cfg[k]}
        raise SnapshotConfigError(f"snapshot/config mismatch (stream, expected): {diffs}")

    dtype = _slot_dtype(dim)
    body_start = _HEADER.size
    body_end = body_start + dtype.itemsize * capacity
    if len(data) < body_end + 4:
        raise SnapshotFormatError("stream truncated inside slot records")
    records = np.frombuffer(data[body_start:body_end], dtype=dtype)

    (rng_len,) = struct.unpack_from("<I", data, body_end)
    rng_start = body_end + 4
    if len(data) != rng_start + rng_len:
        raise SnapshotFormatError("stream length does not match the declared RNG blob")
    try:
        rng_state = json.loads(data[rng_start:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotFormatError("unreadable RNG state blob") from exc

    bank = MemoryBank(expected)
    bank.occupied = records["occupied"].astype(bool)
    bank.counts = records["count"].astype(np.int64)
    bank.ages = records["age"].astype(np.int64)
    bank.keys = records["key"].astype(np.float64).reshape(capacity, dim).copy()
    bank.values = records["value"].astype(np.float64).reshape(capacity, dim).copy()
    try:
        bank.rng.bit_generator.state = rng_state
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotFormatError("invalid RNG state blob") from exc
    return bank


def read_config(data: bytes) -> BankConfig:
    """Decode just the header into a BankConfig (seed defaults to 0).

    Lets tools open a snapshot without knowing its configuration up front;
    the result can be passed straight to ``restore``.
    """
    if len(data) < _HEADER.size:
        raise SnapshotFormatError("stream shorter than the fixed header")
    magic, version, dim, capacity, sim_tag, abl_tag, threshold = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise SnapshotVersionError(f"unsupported format version {version}")
    if sim_tag not in _TAG_SIMILARITY or abl_tag not in _TAG_ABLATION:
        raise SnapshotFormatError(f"unknown similarity/ablation tags ({sim_tag}, {abl_tag})")
    return BankConfig(
        capacity=capacity,
        dim=dim,
        threshold=threshold,
        similarity=_TAG_SIMILARITY[sim_tag],
        ablation=_TAG_ABLATION[abl_tag],
    )


def save(bank: MemoryBank, path) -> None:
    with open(path, "wb") as fh:
        fh.write(snapshot(bank))


def load(path, expected: BankConfig) -> MemoryBank:
    with open(path, "rb") as fh:
        return restore(fh.read(), expected)
