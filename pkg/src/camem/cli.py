"""Command-line driver: train, simulate, eval-clm, sweep, inspect.

Every command takes a JSON config (flags override individual fields), writes
reports carrying a digest of the effective config, and follows one exit-code
contract: 0 success, 1 oracle/assertion failure, 2 usage or IO error. All
randomness flows from the config seed through named sub-streams, and the
CAMELOT_THREADS environment variable caps worker parallelism.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bank import Ablation, BankConfig, slot_log_csv_rows
from .lm import CharVocab, LmConfig, TinyLm, eval_clm, make_bank_set
from .reports import (
    DEFAULT_BUCKET_EDGES,
    EvalReport,
    config_digest,
    freq_bucket_report,
    token_frequencies,
    write_csv,
    write_json,
)
from .snapshot import SnapshotError, load as load_snapshot, read_config, save as save_snapshot
from .stream import (
    MixtureSpec,
    acceptance_geometry_check,
    fifo_oracle_check,
    mode_recovery_metrics,
    run_memory_on_stream,
)
from .vectors import Similarity

EXIT_OK = 0
EXIT_ASSERT = 1
EXIT_USAGE = 2


def worker_count(n_tasks: int) -> int:
    """Parallelism for independent rows, capped by CAMELOT_THREADS."""
    cap = os.environ.get("CAMELOT_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_tasks))


def subseed(seed: int, label: str) -> int:
    """Named sub-stream seed so components can be re-seeded independently."""
    return int(np.random.SeedSequence([seed, zlib.crc32(label.encode())]).generate_state(1)[0])


class UsageError(Exception):
    pass


def _load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc


def _outdir(args, config: dict) -> Path:
    out = Path(args.out or config.get("output_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stamp(doc: dict, args) -> dict:
    if not args.deterministic:
        doc["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    return doc


def _bank_config(memory: dict, dim: int, ablation: Ablation, seed: int) -> BankConfig:
    return BankConfig(
        capacity=int(memory.get("capacity", 512)),
        dim=dim,
        threshold=float(memory.get("threshold", 0.93)),
        similarity=Similarity.parse(memory.get("similarity", "cosine")),
        ablation=ablation,
        seed=seed,
    )


def _passage_alphabet(config: dict, vocab: CharVocab) -> str:
    explicit = config.get("alphabet")
    if explicit:
        return explicit
    return "".join(c for c in vocab.chars if not c.isspace()) or vocab.chars


def _eval_corpus_tokens(config: dict, model: TinyLm, seed: int) -> np.ndarray:
    from .training import periodic_passage

    if config.get("corpus"):
        path = Path(config["corpus"])
        if not path.exists():
            raise UsageError(f"corpus not found: {path}")
        text = path.read_text(encoding="utf-8")
    elif config.get("synthetic_passage") is not None:
        params = dict(config["synthetic_passage"])
        params.setdefault("seed", subseed(seed, "passage"))
        params.setdefault("alphabet", _passage_alphabet(params, model.vocab))
        text = periodic_passage(**params)
    else:
        raise UsageError("config needs either 'corpus' or 'synthetic_passage'")
    return model.vocab.encode(text)


# ------------------------------------------------------------------- train

def cmd_train(args) -> int:
    from .training import repetition_corpus, train_lm

    config = _load_config(args.config)
    out = _outdir(args, config)
    seed = int(args.seed if args.seed is not None else config.get("seed", 0))

    if config.get("corpus"):
        path = Path(config["corpus"])
        if not path.exists():
            raise UsageError(f"corpus not found: {path}")
        corpus = path.read_text(encoding="utf-8")
    else:
        params = dict(config.get("synthetic_corpus", {}))
        params.setdefault("seed", subseed(seed, "corpus"))
        corpus = repetition_corpus(**params)

    vocab = CharVocab.build(corpus)
    model_doc = dict(config.get("model", {}))
    model_doc.setdefault("vocab_size", len(vocab))
    model_doc.setdefault("seed", subseed(seed, "train"))
    lm_config = LmConfig.from_dict(model_doc)

    digest = config_digest({"command": "train", "config": config, "seed": seed})
    model = train_lm(lm_config, corpus, log_every=None if args.quiet else 500)
    model_path = out / config.get("model_out", "model.npz")
    model.save(model_path)
    (out / "train_corpus.txt").write_text(corpus, encoding="utf-8")

    report = _stamp(
        {
            "config_digest": digest,
            "model": str(model_path),
            "vocab_size": len(vocab),
            "corpus_chars": len(corpus),
            "train_steps": lm_config.train_steps,
        },
        args,
    )
    write_json(out / "train_report.json", report)
    print(f"trained model -> {model_path}")
    return EXIT_OK


# ---------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    out = _outdir(args, config)
    seed = int(args.seed if args.seed is not None else config.get("seed", 0))

    stream_doc = dict(config.get("stream", {}))
    stream_doc.setdefault("seed", subseed(seed, "stream"))
    try:
        spec = MixtureSpec.from_dict(stream_doc)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad stream spec: {exc}") from exc

    memory = dict(config.get("bank", {}))
    ablation = Ablation.parse(memory.get("ablation", "full"))
    bank_cfg = _bank_config(memory, spec.dim, ablation, subseed(seed, "ablation"))
    window_len = int(args.windows or config.get("window_len", 16))

    bank, log = run_memory_on_stream(spec, bank_cfg, window_len, n=config.get("n"))
    metrics = mode_recovery_metrics(bank, spec, log)
    digest = config_digest({"command": "simulate", "config": config, "seed": seed})

    actions = [e.action for e in log.events]
    checks: dict[str, bool] = {}
    failures: list[str] = []

    zero_noise = all(p.sigma == 0.0 for p in spec.phases)
    unit_means = bool(
        np.allclose(np.linalg.norm(spec.mode_means, axis=1), 1.0, atol=1e-12)
    )
    if zero_noise and unit_means:
        geometry = acceptance_geometry_check(log, bank_cfg.effective_threshold)
        checks["acceptance_geometry"] = geometry.passed
        if not geometry.passed:
            failures.append(f"acceptance_geometry: {geometry.reason}")
    if ablation is Ablation.NO_CONSOLIDATION:
        fifo = fifo_oracle_check(log, bank_cfg.capacity)
        checks["fifo"] = fifo.passed
        if not fifo.passed:
            failures.append(f"fifo: {fifo.reason}")
            for row in log.csv_rows()[1:]:
                if row[0] == fifo.divergence_event:
                    print("divergence:", ",".join(str(x) for x in row))
    stats = bank.stats()
    checks["count_accounting"] = stats.total_count <= len(log.events)
    if not checks["count_accounting"]:
        failures.append("count_accounting: consolidated instances exceed written tokens")

    write_csv(out / "events.csv", log.csv_rows())
    write_csv(out / "slot_log.csv", slot_log_csv_rows(bank))
    save_snapshot(bank, out / "bank.camb")
    write_json(
        out / "metrics.json",
        _stamp(
            {
                "config_digest": digest,
                "ablation": ablation.value,
                "events": len(log.events),
                "windows": (len(log.events) + window_len - 1) // window_len,
                "consolidated": actions.count("consolidate"),
                "inserted": actions.count("insert"),
                "evicted": actions.count("evict"),
                "occupancy": stats.occupancy,
                "total_count": stats.total_count,
                "recovered_modes": metrics.recovered_modes,
                "mean_key_error": metrics.mean_key_error,
                "count_accuracy": metrics.count_accuracy,
                "purity": metrics.purity,
                "checks": checks,
            },
            args,
        ),
    )

    if args.assert_oracles and failures:
        for failure in failures:
            print(f"ORACLE FAILURE {failure}", file=sys.stderr)
        return EXIT_ASSERT
    print(f"simulated {len(log.events)} events -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- eval-clm

def _run_ablation(model: TinyLm, tokens, window_len, memory_doc, ablation_name, seed,
                  slot_logs: bool):
    if ablation_name == "baseline":
        result = eval_clm(model, tokens, window_len=window_len, memory=False)
        return result, None
    ablation = Ablation.parse(ablation_name)
    bank_cfg = _bank_config(memory_doc, model.config.head_dim, ablation,
                            subseed(seed, f"ablation:{ablation_name}"))
    banks = make_bank_set(replace(model.config, bank=bank_cfg))
    result = eval_clm(model, tokens, window_len=window_len, banks=banks)
    rows = None
    if slot_logs:
        rows = [["layer", "head", "slot", "seq", "label", "action"]]
        for (layer, head), bank in sorted(banks.items()):
            rows.extend([layer, head, *r] for r in slot_log_csv_rows(bank)[1:])
    return result, rows


def cmd_eval_clm(args) -> int:
    config = _load_config(args.config)
    out = _outdir(args, config)
    seed = int(args.seed if args.seed is not None else config.get("seed", 0))

    model_path = Path(config.get("model", ""))
    if not model_path.exists():
        raise UsageError(f"model artifact not found: {model_path}")
    model = TinyLm.load(model_path)
    if config.get("augmented_layers") is not None:
        model = TinyLm(
            replace(model.config, augmented_layers=tuple(config["augmented_layers"])),
            model.vocab,
            model.params,
        )

    tokens = _eval_corpus_tokens(config, model, seed)
    window_len = int(args.windows or config.get("window_len", model.config.window_len))
    memory_doc = dict(config.get("memory", {}))
    if args.memory:
        memory_doc["capacity"] = int(args.memory)

    ablations = (args.ablation.split(",") if args.ablation
                 else config.get("ablations", ["full"]))
    freq_table = None
    if config.get("freq_corpus"):
        freq_path = Path(config["freq_corpus"])
        if not freq_path.exists():
            raise UsageError(f"frequency corpus not found: {freq_path}")
        freq_table = token_frequencies(
            model.vocab.encode(freq_path.read_text(encoding="utf-8"))
        )
    edges = tuple(config.get("bucket_edges", DEFAULT_BUCKET_EDGES))

    effective = {"command": "eval-clm", "config": config, "seed": seed,
                 "window_len": window_len, "memory": memory_doc, "ablations": ablations}
    digest = config_digest(effective)

    for name in ablations:
        result, slot_rows = _run_ablation(
            model, tokens, window_len, memory_doc, name.strip(), seed,
            slot_logs=bool(config.get("slot_log") or args.slot_log),
        )
        buckets = None
        if freq_table is not None:
            buckets = freq_bucket_report(result.token_ids, result.token_nlls,
                                         freq_table, edges)
        report = EvalReport.from_eval(result, digest, name.strip(), buckets)
        if not args.deterministic:
            report.generated_at = time.strftime("%Y-%m-%dT%H:%M:%S")
        tag = name.strip().replace("-", "_")
        write_json(out / f"eval_{tag}.json", report.to_json_dict())
        write_csv(out / f"eval_{tag}.csv", report.csv_rows())
        if slot_rows is not None:
            write_csv(out / f"slot_log_{tag}.csv", slot_rows)
        print(f"{name.strip():>16}  perplexity {report.perplexity:.4f}")
    return EXIT_OK


# ------------------------------------------------------------------- sweep

SWEEP_AXES = ("R", "memory", "similarity", "window")


def cmd_sweep(args) -> int:
    config = _load_config(args.config)
    out = _outdir(args, config)
    seed = int(args.seed if args.seed is not None else config.get("seed", 0))
    axis = args.axis
    values = config.get("sweep", {}).get(axis)
    if not values:
        raise UsageError(f"config lists no sweep values for axis {axis!r}")

    model_path = Path(config.get("model", ""))
    if not model_path.exists():
        raise UsageError(f"model artifact not found: {model_path}")
    model = TinyLm.load(model_path)
    if config.get("augmented_layers") is not None:
        model = TinyLm(
            replace(model.config, augmented_layers=tuple(config["augmented_layers"])),
            model.vocab,
            model.params,
        )
    tokens = _eval_corpus_tokens(config, model, seed)
    ablations = [a.strip() for a in config.get("ablations", ["full"])]
    base_memory = dict(config.get("memory", {}))
    base_window = int(config.get("window_len", model.config.window_len))
    digest = config_digest({"command": "sweep", "config": config, "seed": seed, "axis": axis})

    def run_cell(value, ablation_name):
        memory_doc = dict(base_memory)
        window_len = base_window
        if axis == "R":
            memory_doc["threshold"] = float(value)
        elif axis == "memory":
            memory_doc["capacity"] = int(value)
        elif axis == "similarity":
            memory_doc["similarity"] = str(value)
        elif axis == "window":
            window_len = int(value)
        result, _ = _run_ablation(model, tokens, window_len, memory_doc,
                                  ablation_name, seed, slot_logs=False)
        return [axis, value, ablation_name, repr(result.perplexity),
                len(result.window_nlls), int(sum(result.window_tokens)), digest]

    cells = [(value, ablation) for value in values for ablation in ablations]
    rows = [["axis", "value", "ablation", "perplexity", "windows", "scored_tokens",
             "config_digest"]]
    with ThreadPoolExecutor(max_workers=worker_count(len(cells))) as pool:
        rows.extend(pool.map(lambda cell: run_cell(*cell), cells))
    write_csv(out / f"sweep_{axis}.csv", rows)
    print(f"swept {axis} over {len(values)} values -> {out / f'sweep_{axis}.csv'}")
    return EXIT_OK


# ----------------------------------------------------------------- inspect

def cmd_inspect(args) -> int:
    path = Path(args.snapshot)
    if not path.exists():
        raise UsageError(f"snapshot not found: {path}")
    try:
        data = path.read_bytes()
        bank = load_snapshot(path, read_config(data))
    except SnapshotError as exc:
        print(f"cannot decode snapshot: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    cfg = bank.config
    stats = bank.stats()
    print(f"snapshot {path}")
    print(f"  dim {cfg.dim}  similarity {cfg.similarity.value}  "
          f"ablation {cfg.ablation.value}  threshold {cfg.threshold}")
    print(f"  occupancy {stats.occupancy}/{cfg.capacity}  "
          f"consolidated instances {stats.total_count}")
    occupied = np.flatnonzero(bank.occupied)
    order = occupied[np.argsort(-bank.counts[occupied], kind="stable")][: args.top]
    if order.size:
        print(f"  top {order.size} slots by count:")
        for slot in order:
            print(f"    slot {slot:>6}  count {int(bank.counts[slot]):>6}  "
                  f"age {int(bank.ages[slot]):>4}  |key| {np.linalg.norm(bank.keys[slot]):.4f}")
    if stats.age_hist:
        hist = "  ".join(f"{age}:{n}" for age, n in sorted(stats.age_hist.items())[:12])
        print(f"  age histogram  {hist}")
    if args.labels:
        import csv as _csv

        with open(args.labels, newline="", encoding="utf-8") as fh:
            reader = _csv.DictReader(fh)
            per_slot: dict[int, list[str]] = {}
            for row in reader:
                per_slot.setdefault(int(row["slot"]), []).append(row["label"])
        for slot in order:
            labels = per_slot.get(int(slot), [])
            if labels:
                print(f"    slot {slot} labels: {' '.join(labels[-12:])}")
    return EXIT_OK


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="camem",
        description="consolidated associative memory experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", required=True, help="JSON config file")
        p.add_argument("-o", "--out", help="output directory (default from config)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--deterministic", action="store_true",
                       help="omit timestamps for byte-identical reports")

    p_train = sub.add_parser("train", help="train the toy LM artifact")
    common(p_train)
    p_train.add_argument("--quiet", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_sim = sub.add_parser("simulate", help="run a bank over a synthetic stream")
    common(p_sim)
    p_sim.add_argument("--windows", type=int, help="override window length")
    p_sim.add_argument("--assert", dest="assert_oracles", action="store_true",
                       help="fail (exit 1) when a replay oracle reports divergence")
    p_sim.set_defaults(func=cmd_simulate)

    p_eval = sub.add_parser("eval-clm", help="windowed LM evaluation with memory")
    common(p_eval)
    p_eval.add_argument("--windows", type=int, help="override window length L")
    p_eval.add_argument("--memory", type=int, help="override memory capacity M")
    p_eval.add_argument("--ablation", help="comma-separated ablation list")
    p_eval.add_argument("--slot-log", action="store_true", help="export slot label logs")
    p_eval.set_defaults(func=cmd_eval_clm)

    p_sweep = sub.add_parser("sweep", help="sweep one axis and consolidate a CSV")
    common(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.set_defaults(func=cmd_sweep)

    p_inspect = sub.add_parser("inspect", help="summarize a bank snapshot")
    p_inspect.add_argument("snapshot", help="path to a .camb snapshot")
    p_inspect.add_argument("--top", type=int, default=10)
    p_inspect.add_argument("--labels", help="slot_log.csv to join per-slot labels")
    p_inspect.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
