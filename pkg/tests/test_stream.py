"""Stream generation, consolidation dynamics, and the replay oracles."""

from __future__ import annotations

import numpy as np
import pytest

from camem.bank import Ablation, BankConfig
from camem.stream import (
    MixtureSpec,
    Phase,
    acceptance_geometry_check,
    fifo_oracle_check,
    full_attention_oracle,
    generate_stream,
    mode_recovery_metrics,
    run_memory_on_stream,
)
from camem.vectors import Similarity


def orthogonal_spec(n_modes=3, dim=8, sigma=0.0, length=90, seed=0, weights=None):
    means = np.eye(dim)[:n_modes]
    return MixtureSpec(
        phases=[
            Phase(
                means=means,
                weights=weights or [1.0 / n_modes] * n_modes,
                sigma=sigma,
                length=length,
            )
        ],
        seed=seed,
    )


def bank_config(capacity=10, dim=8, threshold=0.9, ablation=Ablation.FULL, seed=0):
    return BankConfig(
        capacity=capacity,
        dim=dim,
        threshold=threshold,
        similarity=Similarity.COSINE,
        ablation=ablation,
        seed=seed,
    )


# -------------------------------------------------------------- generation

def test_zero_noise_keys_equal_mode_means():
    spec = orthogonal_spec(sigma=0.0, length=9)
    samples = generate_stream(spec, 9)
    for s in samples:
        np.testing.assert_array_equal(s.key, spec.mode_means[s.true_mode])


def test_generation_is_deterministic():
    spec = orthogonal_spec(sigma=0.05, seed=5)
    a = generate_stream(spec)
    b = generate_stream(orthogonal_spec(sigma=0.05, seed=5))
    assert len(a) == len(b)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.key, y.key)
        assert x.true_mode == y.true_mode


def test_degenerate_weights_pin_the_mode():
    spec = orthogonal_spec(weights=[1.0, 0.0, 0.0], length=30)
    assert all(s.true_mode == 0 for s in generate_stream(spec))


def test_empty_phases_rejected():
    with pytest.raises(ValueError):
        MixtureSpec(phases=[])


def test_oversampling_rejected():
    with pytest.raises(ValueError):
        generate_stream(orthogonal_spec(length=10), 11)


def test_bad_simplex_rejected():
    with pytest.raises(ValueError):
        orthogonal_spec(weights=[0.5, 0.2, 0.2])


def test_json_round_trip():
    spec = orthogonal_spec(sigma=0.01, seed=3)
    clone = MixtureSpec.from_json(__import__("json").dumps(spec.to_dict()))
    a, b = generate_stream(spec), generate_stream(clone)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.key, y.key)


# ------------------------------------------------------- memory on streams

def test_zero_noise_recovers_exact_modes():
    spec = orthogonal_spec(sigma=0.0, length=90)
    bank, log = run_memory_on_stream(spec, bank_config(), window_len=10)
    assert bank.occupancy == 3
    per_mode = {m: 0 for m in range(3)}
    for s in generate_stream(spec):
        per_mode[s.true_mode] += 1
    for slot in np.flatnonzero(bank.occupied):
        mode = int(np.argmax(bank.keys[slot] @ spec.mode_means.T))
        np.testing.assert_array_equal(bank.keys[slot], spec.mode_means[mode])
        assert int(bank.counts[slot]) == per_mode[mode]

    metrics = mode_recovery_metrics(bank, spec, log)
    assert metrics.recovered_modes == 3
    assert metrics.mean_key_error == 0.0
    assert metrics.purity == 1.0 and metrics.count_accuracy == 1.0


def test_noisy_slots_match_per_mode_sample_means():
    spec = orthogonal_spec(sigma=0.01, length=300, seed=11)
    bank, log = run_memory_on_stream(spec, bank_config(), window_len=30)
    samples = generate_stream(spec)
    for slot in np.flatnonzero(bank.occupied):
        mode = int(np.argmin(np.linalg.norm(spec.mode_means - bank.keys[slot], axis=1)))
        sample_mean = np.mean([s.key for s in samples if s.true_mode == mode], axis=0)
        assert np.linalg.norm(bank.keys[slot] - sample_mean) < 0.02
    assert mode_recovery_metrics(bank, spec, log).purity >= 0.99


def test_topic_shift_evicts_the_old_phase():
    dim = 8
    means = np.eye(dim)
    spec = MixtureSpec(
        phases=[
            Phase(means=means[:2], weights=[0.5, 0.5], sigma=0.0, length=40),
            Phase(means=means[2:4], weights=[0.5, 0.5], sigma=0.0, length=40),
        ],
        seed=2,
    )
    bank, log = run_memory_on_stream(spec, bank_config(capacity=2, dim=dim), window_len=4)
    assert bank.occupancy == 2
    matched = set()
    for slot in np.flatnonzero(bank.occupied):
        matched.add(int(np.argmin(np.linalg.norm(spec.mode_means - bank.keys[slot], axis=1))))
    assert matched == {2, 3}

    # replay oracle: max-age replacement over the logged actions must agree
    ages: dict[int, int] = {}
    for window in range(max(e.window for e in log.events) + 1):
        events = [e for e in log.events if e.window == window]
        touched = set()
        for e in events:
            if e.action == "evict":
                candidates = {s: a for s, a in ages.items() if s not in touched or ages[s] == 0}
                oldest = max(ages.values())
                assert ages[e.slot] == oldest or e.slot in touched
            ages[e.slot] = 0
            touched.add(e.slot)
        for s in ages:
            if s not in touched:
                ages[s] += 1


def test_capacity_monotonicity_of_recovered_modes():
    dim = 8
    spec = MixtureSpec(
        phases=[Phase(means=np.eye(dim)[:6], weights=[1 / 6] * 6, sigma=0.0, length=120)],
        seed=4,
    )
    recovered = []
    for capacity in (2, 4, 8, 16):
        bank, log = run_memory_on_stream(spec, bank_config(capacity=capacity, dim=dim), 6)
        metrics = mode_recovery_metrics(bank, spec, log)
        assert metrics.recovered_modes <= min(capacity, 6)
        recovered.append(metrics.recovered_modes)
    assert recovered == sorted(recovered)
    assert recovered[-1] == 6


def test_dim_mismatch_rejected():
    with pytest.raises(ValueError):
        run_memory_on_stream(orthogonal_spec(dim=8), bank_config(dim=4), 10)


# ------------------------------------------------------------ FIFO oracle

from oracles import distinct_key_spec as fifo_spec  # noqa: E402


def test_fifo_last_m_keys_survive():
    spec = fifo_spec(6)
    config = bank_config(capacity=4, dim=6, ablation=Ablation.NO_CONSOLIDATION)
    bank, log = run_memory_on_stream(spec, config, window_len=2)
    assert fifo_oracle_check(log, 4).passed
    stored = sorted(tuple(k) for k in bank.keys[bank.occupied])
    last4 = sorted(tuple(s.key) for s in generate_stream(spec)[-4:])
    assert stored == last4


def test_fifo_without_evictions():
    spec = fifo_spec(3)
    config = bank_config(capacity=8, dim=6, ablation=Ablation.NO_CONSOLIDATION)
    bank, log = run_memory_on_stream(spec, config, window_len=1)
    assert fifo_oracle_check(log, 8).passed
    assert all(e.action == "insert" for e in log.events)


def test_fifo_flags_duplicate_consolidation():
    rng = np.random.default_rng(3)
    base = rng.normal(size=6)
    means = np.stack([base, rng.normal(size=6), base])  # duplicate at position 2
    spec = MixtureSpec(
        phases=[Phase(means=means[i : i + 1], weights=[1.0], sigma=0.0, length=1) for i in range(3)],
        seed=0,
    )
    config = bank_config(capacity=8, dim=6, ablation=Ablation.NO_CONSOLIDATION)
    _, log = run_memory_on_stream(spec, config, window_len=1)
    check = fifo_oracle_check(log, 8)
    assert not check.passed
    assert check.divergence_event == 2
    assert "consolidated" in check.reason


# ------------------------------------------------------ geometry & oracle

@pytest.mark.parametrize("threshold", [0.5, 0.9, 0.93])
def test_acceptance_geometry_on_unit_streams(threshold):
    spec = orthogonal_spec(n_modes=5, length=200, seed=7)
    bank, log = run_memory_on_stream(spec, bank_config(capacity=8, threshold=threshold), 8)
    assert acceptance_geometry_check(log, threshold).passed


def test_full_attention_empty_history_equals_plain_attention():
    rng = np.random.default_rng(8)
    window_keys = rng.normal(size=(5, 4))
    window_values = rng.normal(size=(5, 4))
    bank = BankConfig(capacity=4, dim=4)
    from camem.bank import create_bank

    comparison = full_attention_oracle(
        np.empty((0, 4)), np.empty((0, 4)), window_keys, window_values, create_bank(bank), 1.0
    )
    assert comparison.max_deviation == 0.0


def test_full_attention_deviation_vanishes_with_sharpening():
    rng = np.random.default_rng(9)
    dim, m = 6, 5
    keys = rng.normal(size=(m, dim))
    keys /= np.linalg.norm(keys, axis=1, keepdims=True)
    values = rng.normal(size=(m, dim))
    from camem.bank import create_bank

    bank = create_bank(bank_config(capacity=m, dim=dim, threshold=1.0))
    for i in range(m):  # one window per key keeps every key resident verbatim
        bank.write(keys[i : i + 1], values[i : i + 1])

    query = keys[2:3]
    qvalue = rng.normal(size=(1, dim))
    deviations = [
        full_attention_oracle(keys, values, query, qvalue, bank, scale).max_deviation
        for scale in (2.0, 8.0, 32.0, 128.0)
    ]
    assert deviations == sorted(deviations, reverse=True)
    assert deviations[-1] < 1e-6


def test_zero_noise_retrieval_returns_mode_value_mean():
    spec = orthogonal_spec(sigma=0.0, length=90, seed=1)
    bank, _ = run_memory_on_stream(spec, bank_config(), window_len=10)
    for mode in range(3):
        result = bank.read(spec.mode_means[mode : mode + 1])
        np.testing.assert_array_equal(result.values[0], spec.values[mode])
