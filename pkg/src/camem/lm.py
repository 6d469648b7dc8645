"""Desk-scale causal char LM with per-layer/head memory augmentation.

The model is a decoder-only transformer (pre-norm blocks, learned absolute
position embeddings added at the input, tanh GELU) evaluated in float64
numpy. Memory hooks live at the attention level: for each augmented layer
and head, a window's native keys first read from that bank, retrieved
entries are prepended as an attention prefix, and the native keys/values
are written back after the layer's attention. Training happens elsewhere
and never touches memory banks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .attention import augment, prefix_causal_attention
from .bank import Ablation, BankConfig, MemoryBank, create_bank
from .vectors import Similarity

BankSet = dict[tuple[int, int], MemoryBank]


@dataclass(frozen=True)
class LmConfig:
    """Architecture, protocol, and training settings for the toy LM.

    ``window_len`` is the default evaluation window L; ``max_window`` sizes
    the position table (and the training crop length), so any eval window up
    to ``max_window`` can reuse one trained model. ``augmented_layers`` picks
    which layers get memory banks (None means all). ``bank`` is the per-layer
    bank template; its dim must equal ``head_dim``.
    """

    vocab_size: int
    layers: int = 2
    heads: int = 2
    head_dim: int = 16
    window_len: int = 64
    max_window: int = 128
    augmented_layers: tuple[int, ...] | None = None
    bank: BankConfig | None = None
    train_steps: int = 1500
    learning_rate: float = 3e-3
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 1 or self.layers < 1 or self.heads < 1 or self.head_dim < 1:
            raise ValueError("vocab_size, layers, heads, and head_dim must be positive")
        if not 1 <= self.window_len <= self.max_window:
            raise ValueError("window_len must lie in [1, max_window]")
        if self.augmented_layers is not None:
            bad = set(self.augmented_layers) - set(range(self.layers))
            if bad:
                raise ValueError(f"augmented layers {sorted(bad)} out of range")
        if self.bank is not None and self.bank.dim != self.head_dim:
            raise ValueError(f"bank dim {self.bank.dim} must equal head_dim {self.head_dim}")

    @property
    def model_dim(self) -> int:
        return self.heads * self.head_dim

    @property
    def augmented(self) -> tuple[int, ...]:
        if self.augmented_layers is None:
            return tuple(range(self.layers))
        return tuple(sorted(self.augmented_layers))

    def to_dict(self) -> dict:
        doc = {
            "vocab_size": self.vocab_size,
            "layers": self.layers,
            "heads": self.heads,
            "head_dim": self.head_dim,
            "window_len": self.window_len,
            "max_window": self.max_window,
            "augmented_layers": list(self.augmented),
            "train_steps": self.train_steps,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }
        if self.bank is not None:
            doc["bank"] = {
                "capacity": self.bank.capacity,
                "dim": self.bank.dim,
                "threshold": self.bank.threshold,
                "similarity": self.bank.similarity.value,
                "ablation": self.bank.ablation.value,
                "seed": self.bank.seed,
            }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "LmConfig":
        doc = dict(doc)
        bank = doc.pop("bank", None)
        if bank is not None:
            bank = BankConfig(
                capacity=int(bank["capacity"]),
                dim=int(bank["dim"]),
                threshold=float(bank.get("threshold", 0.93)),
                similarity=Similarity.parse(bank.get("similarity", "cosine")),
                ablation=Ablation.parse(bank.get("ablation", "full")),
                seed=int(bank.get("seed", 0)),
            )
        augmented = doc.get("augmented_layers")
        if augmented is not None:
            doc["augmented_layers"] = tuple(augmented)
        return cls(bank=bank, **doc)


@dataclass(frozen=True)
class CharVocab:
    """Character vocabulary in sorted order; encoding rejects unknown chars."""

    chars: str

    @classmethod
    def build(cls, text: str) -> "CharVocab":
        if not text:
            raise ValueError("cannot build a vocabulary from empty text")
        return cls("".join(sorted(set(text))))

    def __len__(self) -> int:
        return len(self.chars)

    def encode(self, text: str) -> np.ndarray:
        table = {c: i for i, c in enumerate(self.chars)}
        try:
            return np.array([table[c] for c in text], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} is not in the vocabulary") from exc

    def decode(self, ids) -> str:
        return "".join(self.chars[int(i)] for i in ids)


def derive_bank_seed(base: int, layer: int, head: int) -> int:
    return int(np.random.SeedSequence([base, layer, head]).generate_state(1)[0])


def make_bank_set(
    config: LmConfig,
    bank: BankConfig | Mapping[int, BankConfig] | None = None,
) -> BankSet | None:
    """Fresh banks for every (augmented layer, head) pair.

    ``bank`` may be one template for all layers or a per-layer mapping;
    defaults to ``config.bank``. Seeds are derived per (layer, head) so the
    randomized ablations draw independent streams.
    """
    if bank is None:
        bank = config.bank
    if bank is None:
        return None
    banks: BankSet = {}
    for layer in config.augmented:
        template = bank[layer] if isinstance(bank, Mapping) else bank
        if template.dim != config.head_dim:
            raise ValueError(f"bank dim {template.dim} must equal head_dim {config.head_dim}")
        for head in range(config.heads):
            seeded = replace(template, seed=derive_bank_seed(template.seed, layer, head))
            banks[(layer, head)] = create_bank(seeded)
    return banks


# ------------------------------------------------------------- numpy model

def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x**3)))


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps=1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gain * (x - mu) / np.sqrt(var + eps) + bias


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class WindowResult:
    """Scored outcome of one window: token_nlls[i] scores targets[i]."""

    nll: float
    token_nlls: np.ndarray
    targets: np.ndarray

    @property
    def scored_tokens(self) -> int:
        return int(self.token_nlls.shape[0])


class TinyLm:
    """Numpy forward pass over trained (or synthetic) parameters."""

    def __init__(self, config: LmConfig, vocab: CharVocab, params: dict[str, np.ndarray]):
        if config.vocab_size != len(vocab):
            raise ValueError(f"config vocab size {config.vocab_size} != vocabulary {len(vocab)}")
        self.config = config
        self.vocab = vocab
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self._check_shapes()

    def _check_shapes(self):
        c = self.config
        d = c.model_dim
        expect = {"tok_emb": (c.vocab_size, d), "pos_emb": (c.max_window, d),
                  "ln_f.weight": (d,), "ln_f.bias": (d,), "head": (d, c.vocab_size)}
        for i in range(c.layers):
            expect[f"blocks.{i}.ln1.weight"] = (d,)
            expect[f"blocks.{i}.ln1.bias"] = (d,)
            expect[f"blocks.{i}.ln2.weight"] = (d,)
            expect[f"blocks.{i}.ln2.bias"] = (d,)
            for name in ("wq", "wk", "wv", "wo"):
                expect[f"blocks.{i}.attn.{name}"] = (d, d)
            expect[f"blocks.{i}.mlp.w1"] = (d, 4 * d)
            expect[f"blocks.{i}.mlp.b1"] = (4 * d,)
            expect[f"blocks.{i}.mlp.w2"] = (4 * d, d)
            expect[f"blocks.{i}.mlp.b2"] = (d,)
        for name, shape in expect.items():
            if name not in self.params:
                raise ValueError(f"missing parameter {name}")
            if self.params[name].shape != shape:
                raise ValueError(
                    f"parameter {name} has shape {self.params[name].shape}, expected {shape}"
                )

    @classmethod
    def init_random(cls, config: LmConfig, vocab: CharVocab, scale=0.1, seed=0) -> "TinyLm":
        """Random parameters with the right shapes; handy for protocol tests."""
        rng = np.random.default_rng(seed)
        d = config.model_dim
        params = {
            "tok_emb": scale * rng.normal(size=(config.vocab_size, d)),
            "pos_emb": scale * rng.normal(size=(config.max_window, d)),
            "ln_f.weight": np.ones(d),
            "ln_f.bias": np.zeros(d),
            "head": scale * rng.normal(size=(d, config.vocab_size)),
        }
        for i in range(config.layers):
            params[f"blocks.{i}.ln1.weight"] = np.ones(d)
            params[f"blocks.{i}.ln1.bias"] = np.zeros(d)
            params[f"blocks.{i}.ln2.weight"] = np.ones(d)
            params[f"blocks.{i}.ln2.bias"] = np.zeros(d)
            for name in ("wq", "wk", "wv", "wo"):
                params[f"blocks.{i}.attn.{name}"] = scale * rng.normal(size=(d, d))
            params[f"blocks.{i}.mlp.w1"] = scale * rng.normal(size=(d, 4 * d))
            params[f"blocks.{i}.mlp.b1"] = np.zeros(4 * d)
            params[f"blocks.{i}.mlp.w2"] = scale * rng.normal(size=(4 * d, d))
            params[f"blocks.{i}.mlp.b2"] = np.zeros(d)
        return cls(config, vocab, params)

    # ------------------------------------------------------------- forward

    def logits(
        self,
        tokens: np.ndarray,
        banks: BankSet | None = None,
        read: bool = True,
        write: bool = True,
        trace: list | None = None,
        window_index: int = 0,
    ) -> np.ndarray:
        """Forward one window, optionally reading/writing the memory banks.

        Per augmented layer and head the order is fixed: read with the native
        keys, attend over the retrieved prefix plus the causal window, then
        write the native keys/values. Plain causal attention everywhere else.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        n = tokens.shape[0]
        c = self.config
        if n < 1 or n > c.max_window:
            raise ValueError(f"window length {n} outside [1, {c.max_window}]")
        if tokens.min() < 0 or tokens.max() >= c.vocab_size:
            raise ValueError("token id out of vocabulary range")

        p = self.params
        scale = 1.0 / np.sqrt(c.head_dim)
        labels = list(self.vocab.decode(tokens)) if banks else None
        x = p["tok_emb"][tokens] + p["pos_emb"][:n]
        for layer in range(c.layers):
            h = _layer_norm(x, p[f"blocks.{layer}.ln1.weight"], p[f"blocks.{layer}.ln1.bias"])
            q = (h @ p[f"blocks.{layer}.attn.wq"]).reshape(n, c.heads, c.head_dim)
            k = (h @ p[f"blocks.{layer}.attn.wk"]).reshape(n, c.heads, c.head_dim)
            v = (h @ p[f"blocks.{layer}.attn.wv"]).reshape(n, c.heads, c.head_dim)
            heads_out = np.empty((n, c.heads, c.head_dim))
            use_banks = banks is not None and layer in c.augmented
            for head in range(c.heads):
                result = None
                if use_banks and read:
                    result = banks[(layer, head)].read(k[:, head])
                    if trace is not None:
                        trace.append(("read", window_index, layer, head, len(result)))
                kv = augment(k[:, head], v[:, head], result)
                heads_out[:, head] = prefix_causal_attention(q[:, head], kv, scale)
            x = x + heads_out.reshape(n, c.model_dim) @ p[f"blocks.{layer}.attn.wo"]
            if use_banks and write:
                for head in range(c.heads):
                    banks[(layer, head)].write(k[:, head], v[:, head], labels=labels)
                    if trace is not None:
                        trace.append(("write", window_index, layer, head, n))
            h2 = _layer_norm(x, p[f"blocks.{layer}.ln2.weight"], p[f"blocks.{layer}.ln2.bias"])
            x = x + _gelu(h2 @ p[f"blocks.{layer}.mlp.w1"] + p[f"blocks.{layer}.mlp.b1"]) \
                @ p[f"blocks.{layer}.mlp.w2"] + p[f"blocks.{layer}.mlp.b2"]
        x = _layer_norm(x, p["ln_f.weight"], p["ln_f.bias"])
        return x @ p["head"]

    def window_nll(self, tokens, logits: np.ndarray) -> WindowResult:
        """Next-token NLL within one window; the first token has no target."""
        tokens = np.asarray(tokens, dtype=np.int64)
        targets = tokens[1:]
        if targets.size == 0:
            return WindowResult(nll=0.0, token_nlls=np.empty(0), targets=targets)
        logp = _log_softmax(logits[:-1])
        token_nlls = -logp[np.arange(targets.size), targets]
        return WindowResult(nll=float(token_nlls.mean()), token_nlls=token_nlls, targets=targets)

    # ----------------------------------------------------------- protocols

    def process_window_clm(
        self,
        banks: BankSet | None,
        tokens,
        trace: list | None = None,
        window_index: int = 0,
        write: bool = True,
    ) -> WindowResult:
        """One CLM step: read, augment, write, and score the window."""
        logits = self.logits(
            tokens, banks=banks, read=True, write=write, trace=trace, window_index=window_index
        )
        return self.window_nll(tokens, logits)

    # --------------------------------------------------------- persistence

    def save(self, path) -> None:
        meta = json.dumps({"config": self.config.to_dict(), "vocab": self.vocab.chars})
        np.savez(path, __meta__=np.frombuffer(meta.encode("utf-8"), dtype=np.uint8), **self.params)

    @classmethod
    def load(cls, path) -> "TinyLm":
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
            params = {k: data[k] for k in data.files if k != "__meta__"}
        return cls(LmConfig.from_dict(meta["config"]), CharVocab(meta["vocab"]), params)


# ------------------------------------------------------------ CLM protocol

def window_starts(n_tokens: int, window_len: int) -> list[int]:
    return list(range(0, n_tokens, window_len))


@dataclass
class ClmEval:
    """Per-window NLLs plus the flat per-token trace for bucket reports."""

    window_nlls: list[float] = field(default_factory=list)
    window_tokens: list[int] = field(default_factory=list)
    token_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    token_nlls: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def perplexity(self) -> float:
        return float(np.exp(self.token_nlls.mean())) if self.token_nlls.size else 1.0


def eval_clm(
    model: TinyLm,
    tokens,
    window_len: int | None = None,
    banks: BankSet | None = None,
    bank: BankConfig | Mapping[int, BankConfig] | None = None,
    memory: bool = True,
    write: bool = True,
    trace: list | None = None,
) -> ClmEval:
    """Sliding non-overlapping-window evaluation of one document.

    Fresh banks are created from ``bank`` (or ``model.config.bank``) unless an
    existing ``banks`` set is passed in, which continues without reset. With
    neither, or with ``memory=False``, the plain windowed model is scored.
    The final partial window is evaluated as-is.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size < 2:
        raise ValueError("need at least two tokens to score a document")
    length = window_len if window_len is not None else model.config.window_len
    if not 1 <= length <= model.config.max_window:
        raise ValueError(f"window length {length} outside [1, {model.config.max_window}]")
    if not memory:
        banks = None
    elif banks is None and (bank is not None or model.config.bank is not None):
        banks = make_bank_set(model.config, bank)

    out = ClmEval()
    ids, nlls = [], []
    for index, start in enumerate(window_starts(tokens.size, length)):
        window = tokens[start : start + length]
        result = model.process_window_clm(
            banks, window, trace=trace, window_index=index, write=write
        )
        out.window_nlls.append(result.nll)
        out.window_tokens.append(result.scored_tokens)
        ids.append(result.targets)
        nlls.append(result.token_nlls)
    out.token_ids = np.concatenate(ids)
    out.token_nlls = np.concatenate(nlls)
    return out


def eval_documents(
    model: TinyLm,
    documents: list,
    window_len: int | None = None,
    bank: BankConfig | Mapping[int, BankConfig] | None = None,
    reset_between: bool = True,
) -> list[ClmEval]:
    """Evaluate several documents; fresh banks per document by default."""
    reports = []
    banks = None
    for doc in documents:
        if banks is None or reset_between:
            banks = make_bank_set(model.config, bank)
        reports.append(eval_clm(model, doc, window_len=window_len, banks=banks))
    return reports


# ------------------------------------------------------------ ICL protocol

@dataclass
class IclResult:
    choice: int
    option_perplexities: list[float]


def eval_icl(
    model: TinyLm,
    example_windows: list,
    question,
    options: list,
    window_len: int | None = None,
    bank: BankConfig | Mapping[int, BankConfig] | None = None,
    trace: list | None = None,
) -> IclResult:
    """Write-only prefill over demonstrations, then read-augmented scoring.

    Phase 1 writes each example window's keys/values into fresh banks with no
    retrieval. Phase 2 scores question+option continuations with reads only
    (no writes), so options share identical bank state; the option with the
    lowest continuation perplexity wins, ties to the lowest index.
    """
    if not options:
        raise ValueError("at least one option is required")
    question = np.asarray(question, dtype=np.int64)
    if question.size < 1:
        raise ValueError("a non-empty question is required")
    length = window_len if window_len is not None else model.config.window_len
    banks = make_bank_set(model.config, bank)

    if banks is not None:
        for index, window in enumerate(example_windows):
            window = np.asarray(window, dtype=np.int64)
            for start in window_starts(window.size, length):
                model.logits(
                    window[start : start + length],
                    banks=banks,
                    read=False,
                    write=True,
                    trace=trace,
                    window_index=index,
                )

    perplexities = []
    for option in options:
        option = np.asarray(option, dtype=np.int64)
        if option.size < 1:
            raise ValueError("options must be non-empty")
        sequence = np.concatenate([question, option])
        option_nlls = []
        for start in window_starts(sequence.size, length):
            window = sequence[start : start + length]
            logits = model.logits(window, banks=banks, read=True, write=False, trace=trace)
            result = model.window_nll(window, logits)
            # targets sit at absolute positions start+1 .. start+len(window)-1
            positions = np.arange(start + 1, start + window.size)
            option_nlls.append(result.token_nlls[positions >= question.size])
        scored = np.concatenate(option_nlls) if option_nlls else np.empty(0)
        if scored.size == 0:
            raise ValueError("option has no scored tokens under this window length")
        perplexities.append(float(np.exp(scored.mean())))

    return IclResult(choice=int(np.argmin(perplexities)), option_perplexities=perplexities)
