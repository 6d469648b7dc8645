"""Shared fixtures: a quickly-trained micro model artifact for CLI tests."""

from __future__ import annotations

import json

import pytest


@pytest.fixture(scope="session")
def micro_artifact(tmp_path_factory):
    """Train a throwaway micro model once per session and stage config files."""
    from camem.lm import CharVocab, LmConfig
    from camem.training import repetition_corpus, train_lm

    root = tmp_path_factory.mktemp("artifact")
    corpus = repetition_corpus(
        n_chars=12_000, alphabet="abcdefgh", min_period=4, max_period=12,
        min_repeats=4, max_repeats=8, seed=0,
    )
    vocab = CharVocab.build(corpus)
    config = LmConfig(
        vocab_size=len(vocab), layers=2, heads=2, head_dim=8, window_len=32,
        max_window=128, augmented_layers=(1,), train_steps=120,
        learning_rate=3e-3, batch_size=8, seed=0,
    )
    model = train_lm(config, corpus)
    model_path = root / "model.npz"
    model.save(model_path)
    corpus_path = root / "train_corpus.txt"
    corpus_path.write_text(corpus, encoding="utf-8")
    return {"root": root, "model": model_path, "corpus": corpus_path, "vocab": vocab}


def write_config(path, doc):
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return str(path)
