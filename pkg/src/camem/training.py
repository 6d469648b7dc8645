"""Training for the toy LM (torch) and synthetic corpus generators.

The torch module mirrors the numpy evaluation architecture exactly (pre-norm
blocks, tanh GELU, input-added absolute positions, untied head) so trained
weights can be exported and evaluated in float64. Training is plain windowed
causal language modeling; memory banks play no part in it.
"""

from __future__ import annotations

import math

import numpy as np

from .lm import CharVocab, LmConfig, TinyLm


def _build_torch_model(config: LmConfig):
    import torch
    from torch import nn

    d = config.model_dim

    class Block(nn.Module):
        def __init__(self):
            super().__init__()
            self.ln1 = nn.LayerNorm(d)
            self.wq = nn.Linear(d, d, bias=False)
            self.wk = nn.Linear(d, d, bias=False)
            self.wv = nn.Linear(d, d, bias=False)
            self.wo = nn.Linear(d, d, bias=False)
            self.ln2 = nn.LayerNorm(d)
            self.fc1 = nn.Linear(d, 4 * d)
            self.fc2 = nn.Linear(4 * d, d)
            self.act = nn.GELU(approximate="tanh")

        def forward(self, x, mask):
            b, n, _ = x.shape
            h = self.ln1(x)
            shape = (b, n, config.heads, config.head_dim)
            q = self.wq(h).view(shape).transpose(1, 2)
            k = self.wk(h).view(shape).transpose(1, 2)
            v = self.wv(h).view(shape).transpose(1, 2)
            att = (q @ k.transpose(-2, -1)) / math.sqrt(config.head_dim)
            att = att.masked_fill(mask[:n, :n], float("-inf")).softmax(dim=-1)
            y = (att @ v).transpose(1, 2).reshape(b, n, d)
            x = x + self.wo(y)
            return x + self.fc2(self.act(self.fc1(self.ln2(x))))

    class Model(nn.Module):
        def __init__(self):
            super().__init__()
            self.tok_emb = nn.Embedding(config.vocab_size, d)
            self.pos_emb = nn.Embedding(config.max_window, d)
            self.blocks = nn.ModuleList(Block() for _ in range(config.layers))
            self.ln_f = nn.LayerNorm(d)
            self.head = nn.Linear(d, config.vocab_size, bias=False)
            mask = torch.ones(config.max_window, config.max_window, dtype=torch.bool).triu(1)
            self.register_buffer("mask", mask)

        def forward(self, idx):
            n = idx.shape[1]
            pos = torch.arange(n, device=idx.device)
            x = self.tok_emb(idx) + self.pos_emb(pos)
            for block in self.blocks:
                x = block(x, self.mask)
            return self.head(self.ln_f(x))

    return Model()


def export_params(model) -> dict[str, np.ndarray]:
    """Torch module state -> the numpy parameter dict TinyLm expects."""
    out: dict[str, np.ndarray] = {}
    state = {k: v.detach().cpu().double().numpy() for k, v in model.state_dict().items()}
    out["tok_emb"] = state["tok_emb.weight"]
    out["pos_emb"] = state["pos_emb.weight"]
    out["ln_f.weight"] = state["ln_f.weight"]
    out["ln_f.bias"] = state["ln_f.bias"]
    out["head"] = state["head.weight"].T
    layer = 0
    while f"blocks.{layer}.ln1.weight" in state:
        for ln in ("ln1", "ln2"):
            out[f"blocks.{layer}.{ln}.weight"] = state[f"blocks.{layer}.{ln}.weight"]
            out[f"blocks.{layer}.{ln}.bias"] = state[f"blocks.{layer}.{ln}.bias"]
        for w in ("wq", "wk", "wv", "wo"):
            out[f"blocks.{layer}.attn.{w}"] = state[f"blocks.{layer}.{w}.weight"].T
        out[f"blocks.{layer}.mlp.w1"] = state[f"blocks.{layer}.fc1.weight"].T
        out[f"blocks.{layer}.mlp.b1"] = state[f"blocks.{layer}.fc1.bias"]
        out[f"blocks.{layer}.mlp.w2"] = state[f"blocks.{layer}.fc2.weight"].T
        out[f"blocks.{layer}.mlp.b2"] = state[f"blocks.{layer}.fc2.bias"]
        layer += 1
    return out


def train_lm(config: LmConfig, corpus: str, log_every: int | None = None) -> TinyLm:
    """Train the toy model on raw text and return it ready for evaluation.

    The vocabulary is built from the corpus and must match the configured
    vocab size. Deterministic given the config seed: parameters, data order,
    and thread count are all pinned. Memory banks are never involved.
    """
    import torch

    if not corpus:
        raise ValueError("training corpus is empty")
    vocab = CharVocab.build(corpus)
    if len(vocab) != config.vocab_size:
        raise ValueError(
            f"corpus vocabulary has {len(vocab)} chars but config expects {config.vocab_size}"
        )
    ids = vocab.encode(corpus)
    block = config.max_window
    if ids.size < block + 1:
        raise ValueError(f"corpus too short: need more than {block + 1} tokens")

    old_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        torch.manual_seed(config.seed)
        model = _build_torch_model(config)
        optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        data_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7261D]))
        data = torch.from_numpy(ids)
        model.train()
        for step in range(config.train_steps):
            starts = data_rng.integers(0, ids.size - block - 1, size=config.batch_size)
            batch = torch.stack([data[s : s + block + 1] for s in starts])
            x, y = batch[:, :-1], batch[:, 1:]
            logits = model(x)
            loss = torch.nn.functional.cross_entropy(
                logits.reshape(-1, config.vocab_size), y.reshape(-1)
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if log_every and (step + 1) % log_every == 0:
                print(f"step {step + 1}/{config.train_steps}  loss {loss.item():.4f}")
        model.eval()
        return TinyLm(config, vocab, export_params(model))
    finally:
        torch.set_num_threads(old_threads)


# --------------------------------------------------------------- corpora

DEFAULT_ALPHABET = "abcdefghijklmnopqrstuvwxyz"


def repetition_corpus(
    n_chars: int = 100_000,
    alphabet: str = DEFAULT_ALPHABET,
    min_period: int = 8,
    max_period: int = 96,
    min_repeats: int = 3,
    max_repeats: int = 8,
    seed: int = 0,
) -> str:
    """Documents of random passages, each repeated a few times.

    Repetition is the only predictable structure, so a model trained on this
    learns to copy from earlier occurrences (matching at varied distances) --
    exactly the behavior that retrieval from memory can extend across
    windows at evaluation time.
    """
    rng = np.random.default_rng(seed)
    chars: list[str] = []
    while len(chars) < n_chars:
        period = int(rng.integers(min_period, max_period + 1))
        repeats = int(rng.integers(min_repeats, max_repeats + 1))
        passage = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=period))
        chars.extend(passage * repeats)
        chars.append(" ")
    return "".join(chars[:n_chars])


def periodic_passage(
    passage_len: int = 256,
    segment_len: int = 64,
    core_len: int = 16,
    repeats: int = 20,
    alphabet: str = DEFAULT_ALPHABET,
    seed: int = 1,
) -> str:
    """One passage repeated ``repeats`` times, as an evaluation document.

    The passage concatenates distinct segments, each tiling its own random
    ``core_len``-char core. That layers structure at several scales: windows
    shorter than a core see no repetition, window-internal copying covers
    later core occurrences, and only cross-window retrieval covers a window's
    opening. Distinct segments keep retrieval selective: a random slot
    usually belongs to some other segment.
    """
    if passage_len % segment_len != 0 or segment_len % core_len != 0:
        raise ValueError("passage_len must tile into segments, segments into cores")
    rng = np.random.default_rng(seed)
    segments = []
    for _ in range(passage_len // segment_len):
        core = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=core_len))
        segments.append(core * (segment_len // core_len))
    return "".join(segments) * repeats
