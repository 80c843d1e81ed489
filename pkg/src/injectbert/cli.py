"""Command-line entry point.

Verbs:
  train        fine-tune over one or more seeds from a config file
  eval         score a checkpoint on a dataset, optionally per lexicon partition
  synth        generate the synthetic task (data, vocab, lexicon, embeddings)
  paramcount   compare gated vs attention injection parameter counts
  gates        export a gate-vector histogram from a gated checkpoint
  align-debug  print the piece/alignment/injection table for a sentence pair

Exit codes: 0 success (a flagged failed run still exits 0), 1 usage or
config error, 2 data error, 3 numeric error (non-finite loss).
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .datasets import load_dataset_tsv
from .embeddings import EmbeddingStore, load_embeddings, load_lexicon
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .evaluation import evaluate, export_gate_snapshot, seed_average
from .model import (
    ModelConfig,
    count_injection_params,
    load_checkpoint,
    save_checkpoint,
)
from .synth import SynthSpec, audit_files, generate, write_files
from .tokenization import WordPieceVocab, build_injection_sequence, encode_pair
from .training import PairClassifier, TrainConfig, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        raise UsageError(message)


def _timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _write_report(path: Path, lines: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    body = [f"# created {_timestamp()}"] + lines
    path.write_text("\n".join(body) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

_MODEL_KEYS = {
    f.name for f in dataclasses.fields(ModelConfig) if f.name != "vocab_size"
}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig) if f.name != "seed"}
_DATA_KEYS = {"vocab", "embeddings", "lexicon", "train", "dev", "test"}


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str = "runs"

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.read(path)
        cfg = cls()
        if parser.has_section("model"):
            for key, value in parser.items("model"):
                if key not in _MODEL_KEYS:
                    raise ConfigError(f"unknown [model] key {key!r}")
                cfg.model[key] = value
        if parser.has_section("train"):
            for key, value in parser.items("train"):
                if key == "seeds":
                    cfg.seeds = _parse_seeds(value)
                elif key in _TRAIN_KEYS:
                    cfg.train[key] = value
                else:
                    raise ConfigError(f"unknown [train] key {key!r}")
        if parser.has_section("data"):
            for key, value in parser.items("data"):
                if key not in _DATA_KEYS:
                    raise ConfigError(f"unknown [data] key {key!r}")
                cfg.paths[key] = value
        if parser.has_section("run"):
            for key, value in parser.items("run"):
                if key == "out":
                    cfg.out = value
                else:
                    raise ConfigError(f"unknown [run] key {key!r}")
        return cfg

    def model_config(self, vocab_size: int) -> ModelConfig:
        kwargs: dict = {"vocab_size": vocab_size}
        for key, value in self.model.items():
            kwargs[key] = _coerce(ModelConfig, key, value)
        return ModelConfig(**kwargs)

    def train_config(self, seed: int) -> TrainConfig:
        kwargs: dict = {"seed": seed}
        for key, value in self.train.items():
            kwargs[key] = _coerce(TrainConfig, key, value)
        return TrainConfig(**kwargs)


def _parse_seeds(raw: str) -> list[int]:
    parts = raw.replace(",", " ").split()
    if not parts:
        raise ConfigError("seeds must list at least one integer")
    try:
        return [int(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"bad seeds value {raw!r}: {exc}") from None


def _coerce(dc, key: str, value: str):
    for f in dataclasses.fields(dc):
        if f.name != key:
            continue
        text = str(value).strip()
        if f.type in ("int",):
            return int(text)
        if f.type in ("float",):
            return float(text)
        if f.type in ("bool",):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"bad boolean for {key}: {value!r}")
        if f.type in ("int | None",):
            return None if text.lower() in ("", "none") else int(text)
        return text
    raise ConfigError(f"unknown config key {key!r}")


def _require_file(kind: str, raw: str | None) -> Path:
    if not raw:
        raise ConfigError(f"missing required {kind} path")
    path = Path(raw)
    if not path.exists():
        raise ConfigError(f"{kind} file not found: {path}")
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = RunConfig.from_file(args.config)
    if args.mode:
        cfg.model["injection_mode"] = args.mode
    if args.layer is not None:
        cfg.model["injection_layer"] = str(args.layer)
    if args.embeddings:
        cfg.paths["embeddings"] = args.embeddings
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.out:
        cfg.out = args.out
    if args.freeze_gate:
        cfg.train["freeze_gate"] = "true"

    vocab = WordPieceVocab.from_file(_require_file("vocab", cfg.paths.get("vocab")))
    train_rows = load_dataset_tsv(_require_file("train data", cfg.paths.get("train")))
    dev_rows = load_dataset_tsv(_require_file("dev data", cfg.paths.get("dev")))
    lexicon = None
    if cfg.paths.get("lexicon"):
        lexicon = load_lexicon(_require_file("lexicon", cfg.paths.get("lexicon")))
    model_cfg = cfg.model_config(vocab_size=len(vocab))
    store = None
    if model_cfg.injection_mode != "none":
        store = load_embeddings(_require_file("embeddings", cfg.paths.get("embeddings")))

    out_dir = Path(cfg.out)
    reports = []
    for seed in cfg.seeds:
        classifier = PairClassifier.build(model_cfg, vocab, store, seed=seed)
        result = train(classifier, train_rows, dev_rows, cfg.train_config(seed))
        report = evaluate(classifier, dev_rows, lexicon)
        reports.append(report)
        seed_dir = out_dir / f"seed{seed}"
        save_checkpoint(seed_dir / "checkpoint", model_cfg, classifier.params,
                        created=_timestamp())
        lines = report.to_lines() + [
            f"seed={seed}",
            f"steps={result.steps}",
            f"best_dev_f1={result.best_dev_f1:.6f}",
            f"best_step={result.best_step}",
            f"stopped_early={str(result.stopped_early).lower()}",
            f"majority_label={result.majority_label}",
        ]
        _write_report(seed_dir / "report.txt", lines)
        history = ["step,train_loss,dev_f1,improved"] + [
            f"{p.step},{p.train_loss:.6f},{p.dev_f1:.6f},{int(p.improved)}"
            for p in result.history
        ]
        (seed_dir / "history.csv").write_text("\n".join(history) + "\n", encoding="utf-8")
        print(f"seed {seed}: dev f1 {report.f1:.4f}"
              + (" (failed run)" if report.failed_run else ""))
    aggregate = seed_average(reports)
    _write_report(out_dir / "report_mean.txt", aggregate.to_lines())
    for line in aggregate.to_lines():
        print(line)
    return 0


def cmd_eval(args) -> int:
    config, params = load_checkpoint(args.checkpoint)
    vocab = WordPieceVocab.from_file(_require_file("vocab", args.vocab))
    instances = load_dataset_tsv(_require_file("data", args.data))
    store = None
    if config.injection_mode != "none":
        store = load_embeddings(_require_file("embeddings", args.embeddings))
    lexicon = load_lexicon(_require_file("lexicon", args.lexicon)) if args.lexicon else None
    classifier = PairClassifier(config=config, params=params, vocab=vocab, store=store)
    report = evaluate(classifier, instances, lexicon)
    for line in report.to_lines():
        print(line)
    if args.out:
        _write_report(Path(args.out), report.to_lines())
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_pairs=args.pairs,
        vocab_size=args.vocab_size,
        n_synonym_pairs=args.synonym_pairs,
        n_antonym_pairs=args.antonym_pairs or args.synonym_pairs,
        noise_rate=args.noise,
        positive_fraction=args.positive_fraction,
        embedding_dim=args.dim,
        seed=args.seed,
    )
    data = generate(spec)
    paths = write_files(data, args.out)
    stats = audit_files(args.out)
    print(f"wrote {len(paths)} files to {args.out}")
    print(
        f"audit: {stats['instances_checked']} instances consistent, "
        f"{stats['synonym_pairs']} synonym / {stats['antonym_pairs']} antonym pairs"
    )
    return 0


def cmd_paramcount(args) -> int:
    hidden, ext = args.hidden, args.ext
    gated = count_injection_params("gated", hidden, ext)
    attention = count_injection_params("attention", hidden, ext)
    ratio = 100.0 * gated / attention
    print(f"hidden={hidden} ext={ext}")
    print(f"gated={gated}")
    print(f"attention={attention}")
    print(f"ratio_percent={ratio:.2f}")
    return 0


def cmd_gates(args) -> int:
    config, params = load_checkpoint(args.checkpoint)
    if config.injection_mode != "gated":
        raise ConfigError(f"checkpoint mode is {config.injection_mode!r}, need gated")
    snapshot = export_gate_snapshot(params, bins=args.bins)
    print(f"dimensions={snapshot.dimensions}")
    print(f"near_zero={snapshot.near_zero}")
    print(f"zero_threshold={snapshot.zero_threshold}")
    print(f"min={snapshot.minimum:.6g} max={snapshot.maximum:.6g} mean={snapshot.mean:.6g}")
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(snapshot.histogram_csv_lines()) + "\n", encoding="utf-8")
        print(f"histogram written to {path}")
    return 0


def cmd_align_debug(args) -> int:
    vocab = WordPieceVocab.from_file(_require_file("vocab", args.vocab))
    store: EmbeddingStore | None = None
    if args.embeddings:
        store = load_embeddings(_require_file("embeddings", args.embeddings))
    max_len = args.max_seq_len
    seq, tokens = encode_pair(args.sentence1, args.sentence2, vocab, max_len)
    matrix = None
    if store is not None:
        matrix = build_injection_sequence(seq, tokens, store).matrix
    print(f"{'pos':>4} {'piece':<14} {'seg':>3} {'mask':>4} {'source':<18} injection")
    for j in range(len(seq)):
        piece = vocab.id_to_piece[int(seq.piece_ids[j])]
        entry = seq.alignment[j]
        if entry is None:
            source = "-"
        else:
            sent, tok = entry
            source = f"s{sent}[{tok}]={tokens[sent - 1][tok]}"
        if matrix is None:
            inj = "-"
        else:
            head = " ".join(f"{v:+.3f}" for v in matrix[j, :4])
            inj = f"[{head} ...] |row|={np.linalg.norm(matrix[j]):.3f}"
        print(f"{j:>4} {piece:<14} {int(seq.segment_ids[j]):>3} "
              f"{int(seq.attention_mask[j]):>4} {source:<18} {inj}")
        if seq.attention_mask[j] == 0:
            remaining = len(seq) - j - 1
            if remaining:
                print(f"     ... {remaining} more [PAD] positions")
            break
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="injectbert", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fine-tune over one or more seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("none", "gated", "ungated", "attention"))
    p.add_argument("--layer", type=int)
    p.add_argument("--embeddings")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--freeze-gate", action="store_true",
                   help="debug: pin the gate vector at zero")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--lexicon")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate the synthetic task")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--vocab-size", type=int, default=500)
    p.add_argument("--synonym-pairs", type=int, default=50)
    p.add_argument("--antonym-pairs", type=int, default=0,
                   help="defaults to --synonym-pairs")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--positive-fraction", type=float, default=0.5)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("paramcount", help="injection parameter accounting")
    p.add_argument("hidden", type=int)
    p.add_argument("ext", type=int)
    p.set_defaults(func=cmd_paramcount)

    p = sub.add_parser("gates", help="gate-vector histogram from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gates)

    p = sub.add_parser("align-debug", help="piece/alignment/injection table")
    p.add_argument("sentence1")
    p.add_argument("sentence2")
    p.add_argument("--vocab", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--max-seq-len", type=int, default=64)
    p.set_defaults(func=cmd_align_debug)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
