"""Snapshot round-trips and the decode error taxonomy."""

from __future__ import annotations

import dataclasses
import struct

import numpy as np
import pytest

from camem.bank import Ablation, BankConfig, create_bank
from camem.snapshot import (
    FORMAT_VERSION,
    SnapshotConfigError,
    SnapshotFormatError,
    SnapshotVersionError,
    restore,
    snapshot,
)
from camem.vectors import Similarity


CONFIG = BankConfig(capacity=16, dim=5, threshold=0.8, ablation=Ablation.NO_RECENCY, seed=21)


def populated_bank(n_writes=1000):
    rng = np.random.default_rng(99)
    bank = create_bank(CONFIG)
    for _ in range(n_writes // 4):
        keys = rng.normal(size=(4, 5))
        bank.write(keys, rng.normal(size=(4, 5)))
    return bank


def assert_state_identical(a, b):
    np.testing.assert_array_equal(a.keys, b.keys)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.counts, b.counts)
    np.testing.assert_array_equal(a.ages, b.ages)
    np.testing.assert_array_equal(a.occupied, b.occupied)
    assert a.rng.bit_generator.state == b.rng.bit_generator.state


def test_round_trip_empty_bank():
    bank = create_bank(CONFIG)
    assert_state_identical(bank, restore(snapshot(bank), CONFIG))


def test_round_trip_after_random_writes():
    bank = populated_bank()
    restored = restore(snapshot(bank), CONFIG)
    assert_state_identical(bank, restored)
    assert snapshot(restored) == snapshot(bank)


def test_restored_rng_continues_identically():
    bank = populated_bank(100)
    restored = restore(snapshot(bank), CONFIG)
    assert bank.rng.integers(0, 1 << 30, size=8).tolist() == \
        restored.rng.integers(0, 1 << 30, size=8).tolist()


def test_restore_wrong_dim_is_config_error():
    blob = snapshot(populated_bank(40))
    with pytest.raises(SnapshotConfigError):
        restore(blob, dataclasses.replace(CONFIG, dim=6))


def test_restore_wrong_capacity_threshold_mode():
    blob = snapshot(populated_bank(40))
    with pytest.raises(SnapshotConfigError):
        restore(blob, dataclasses.replace(CONFIG, capacity=8))
    with pytest.raises(SnapshotConfigError):
        restore(blob, dataclasses.replace(CONFIG, threshold=0.93))
    with pytest.raises(SnapshotConfigError):
        restore(blob, dataclasses.replace(CONFIG, ablation=Ablation.FULL))
    with pytest.raises(SnapshotConfigError):
        restore(blob, dataclasses.replace(CONFIG, similarity=Similarity.NEGATIVE_EUCLIDEAN))


def test_bad_magic_is_format_error():
    blob = snapshot(populated_bank(40))
    with pytest.raises(SnapshotFormatError):
        restore(b"XXXX" + blob[4:], CONFIG)


def test_truncation_is_format_error():
    blob = snapshot(populated_bank(40))
    for cut in (3, len(blob) // 2, len(blob) - 1):
        with pytest.raises(SnapshotFormatError):
            restore(blob[:cut], CONFIG)


def test_trailing_garbage_is_format_error():
    blob = snapshot(populated_bank(40))
    with pytest.raises(SnapshotFormatError):
        restore(blob + b"\x00", CONFIG)


def test_unreadable_rng_blob_is_format_error():
    blob = snapshot(populated_bank(40))
    with pytest.raises(SnapshotFormatError):
        restore(blob[:-4] + b"\xff\xff\xff\xff", CONFIG)


def test_unknown_version_is_version_error():
    blob = bytearray(snapshot(populated_bank(40)))
    struct.pack_into("<I", blob, 4, FORMAT_VERSION + 1)
    with pytest.raises(SnapshotVersionError):
        restore(bytes(blob), CONFIG)
