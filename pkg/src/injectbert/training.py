"""Fine-tuning loop with periodic dev evaluation and early stopping.

The loop minimizes cross-entropy over shuffled mini-batches with Adam,
scores dev F1 every ``eval_every`` steps, keeps the best-dev parameter
snapshot, and stops once ``patience`` consecutive evaluations fail to
improve. Shuffling is reseeded per epoch from the run seed, so a run is
fully determined by (data, config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor
from .embeddings import EmbeddingStore
from .errors import ConfigError, DataError, NumericError
from .evaluation import f1_binary
from .model import (
    MASK_BIAS,
    ModelConfig,
    attention_mask_bias,
    forward,
    forward_packed,
    init_params,
)
from .tokenization import WordPieceVocab, build_injection_sequence, encode_pair

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 3
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    eval_every: int = 50  # steps between dev evaluations
    patience: int = 3  # evaluations without improvement before stopping
    majority_label: int | None = None  # derived from the training split when None
    freeze_gate: bool = False  # debug: pin the gate at zero

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be positive, got {self.eval_every}")
        if self.patience < 1:
            raise ConfigError(f"patience must be positive, got {self.patience}")


@dataclass
class EncodedPair:
    seq: object
    injection: Tensor
    key_bias: Tensor
    label: int


@dataclass
class PackedBatch:
    """Several encoded pairs row-concatenated into one forward pass.

    The additive attention bias is block-diagonal: position q of pair p sees
    only pair p's real (non-PAD) positions.
    """

    piece_ids: np.ndarray
    segment_ids: np.ndarray
    position_ids: np.ndarray
    key_bias: Tensor
    cls_rows: np.ndarray
    injection: Tensor
    labels: np.ndarray

    @classmethod
    def from_pairs(cls, pairs: list[EncodedPair]) -> "PackedBatch":
        n = len(pairs[0].seq)
        b = len(pairs)
        bias = np.full((b * n, b * n), MASK_BIAS)
        for p, pair in enumerate(pairs):
            rows = slice(p * n, (p + 1) * n)
            bias[rows, rows] = np.where(pair.seq.attention_mask > 0, 0.0, MASK_BIAS)
        return cls(
            piece_ids=np.concatenate([p.seq.piece_ids for p in pairs]),
            segment_ids=np.concatenate([p.seq.segment_ids for p in pairs]),
            position_ids=np.tile(np.arange(n), b),
            key_bias=Tensor(bias),
            cls_rows=np.arange(b) * n,
            injection=Tensor(np.concatenate([p.injection.data for p in pairs])),
            labels=np.asarray([p.label for p in pairs]),
        )


@dataclass
class PairClassifier:
    """A model plus the vocab/store needed to turn raw text into inputs."""

    config: ModelConfig
    params: dict[str, Tensor]
    vocab: WordPieceVocab
    store: EmbeddingStore | None = None

    def __post_init__(self):
        if self.store is not None and self.store.dim != self.config.ext_dim:
            raise ConfigError(
                f"embedding store dim {self.store.dim} != config ext_dim {self.config.ext_dim}"
            )
        if len(self.vocab) != self.config.vocab_size:
            raise ConfigError(
                f"wordpiece vocab size {len(self.vocab)} != config vocab_size {self.config.vocab_size}"
            )

    @classmethod
    def build(
        cls,
        config: ModelConfig,
        vocab: WordPieceVocab,
        store: EmbeddingStore | None = None,
        seed: int = 0,
    ) -> "PairClassifier":
        return cls(config=config, params=init_params(config, seed), vocab=vocab, store=store)

    def encode(self, instance) -> EncodedPair:
        seq, tokens = encode_pair(
            instance.sentence1, instance.sentence2, self.vocab, self.config.max_seq_len
        )
        if self.store is not None:
            matrix = build_injection_sequence(seq, tokens, self.store).matrix
        else:
            matrix = np.zeros((len(seq), self.config.ext_dim), dtype=np.float64)
        return EncodedPair(
            seq=seq,
            injection=Tensor(matrix),
            key_bias=attention_mask_bias(seq.attention_mask),
            label=instance.label,
        )

    def encode_dataset(self, instances) -> list[EncodedPair]:
        return [self.encode(inst) for inst in instances]

    def predict_encoded(self, encoded: list[EncodedPair], batch_size: int = 32) -> list[int]:
        return [int(row.argmax()) for row in self.proba_encoded(encoded, batch_size)]

    def proba_encoded(self, encoded: list[EncodedPair], batch_size: int = 32) -> np.ndarray:
        rows = []
        for start in range(0, len(encoded), batch_size):
            batch = PackedBatch.from_pairs(encoded[start : start + batch_size])
            _, probs = forward_packed(
                self.config,
                self.params,
                batch.piece_ids,
                batch.segment_ids,
                batch.position_ids,
                batch.key_bias,
                batch.cls_rows,
                batch.injection,
            )
            rows.append(probs.data)
        return np.vstack(rows)

    def predict(self, instances) -> list[int]:
        return self.predict_encoded(self.encode_dataset(instances))

    def predict_proba(self, instances) -> np.ndarray:
        return self.proba_encoded(self.encode_dataset(instances))


@dataclass
class EvalPoint:
    step: int
    train_loss: float
    dev_f1: float
    improved: bool


@dataclass
class TrainResult:
    history: list[EvalPoint] = field(default_factory=list)
    best_dev_f1: float = 0.0
    best_step: int = 0
    steps: int = 0
    stopped_early: bool = False
    majority_label: int = 0


def batch_loss(
    classifier: PairClassifier,
    batch: list[EncodedPair],
    train_rng: np.random.Generator | None = None,
) -> Tensor:
    """Mean cross-entropy over a batch of encoded pairs (one packed graph)."""
    packed = PackedBatch.from_pairs(batch)
    logits, _ = forward_packed(
        classifier.config,
        classifier.params,
        packed.piece_ids,
        packed.segment_ids,
        packed.position_ids,
        packed.key_bias,
        packed.cls_rows,
        packed.injection,
        train_rng,
    )
    return ad.cross_entropy_logits(logits, packed.labels)


def train(
    classifier: PairClassifier,
    train_instances,
    dev_instances,
    cfg: TrainConfig,
    dev_scorer=None,
) -> TrainResult:
    """Fine-tune in place; ends with the best-dev parameters installed.

    ``dev_scorer`` (params -> float) replaces the default dev-F1 scorer and
    exists for tests that need a scripted dev metric.
    """
    if not train_instances or not dev_instances:
        raise DataError("train and dev sets must be non-empty")
    labels = {inst.label for inst in train_instances}
    if not labels <= {0, 1}:
        raise DataError(f"labels must be binary, found {sorted(labels)}")

    encoded_train = classifier.encode_dataset(train_instances)
    encoded_dev = classifier.encode_dataset(dev_instances)
    dev_golds = [inst.label for inst in dev_instances]
    if dev_scorer is None:

        def dev_scorer(_params):
            return f1_binary(classifier.predict_encoded(encoded_dev), dev_golds)

    positives = sum(inst.label for inst in train_instances)
    majority = 1 if positives * 2 > len(train_instances) else 0
    if cfg.majority_label is not None:
        majority = cfg.majority_label

    param_list = list(classifier.params.values())
    frozen = {"injection.gate"} if cfg.freeze_gate else set()
    state = AdamState.init(param_list)
    result = TrainResult(majority_label=majority)
    best_params = {name: p.data.copy() for name, p in classifier.params.items()}
    best_f1 = -1.0
    stale_evals = 0
    loss_window: list[float] = []
    step = 0
    stop = False

    def run_eval() -> None:
        nonlocal best_f1, stale_evals, stop
        score = dev_scorer(classifier.params)
        improved = score > best_f1
        if improved:
            best_f1 = score
            stale_evals = 0
            for name, p in classifier.params.items():
                best_params[name] = p.data.copy()
            result.best_dev_f1 = score
            result.best_step = step
        else:
            stale_evals += 1
        mean_loss = sum(loss_window) / len(loss_window) if loss_window else float("nan")
        result.history.append(
            EvalPoint(step=step, train_loss=mean_loss, dev_f1=score, improved=improved)
        )
        loss_window.clear()
        if stale_evals >= cfg.patience:
            result.stopped_early = True
            stop = True

    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(encoded_train))
        for start in range(0, len(order), cfg.batch_size):
            batch = [encoded_train[i] for i in order[start : start + cfg.batch_size]]
            loss = batch_loss(classifier, batch)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at step {step + 1}")
            loss_window.append(value)
            ad.zero_grad(param_list)
            ad.backward(loss)
            grads = [
                np.zeros_like(p.data)
                if (p.grad is None or p.name in frozen)
                else p.grad
                for p in param_list
            ]
            ad.adam_step(
                param_list, grads, state, cfg.learning_rate, ADAM_BETA1, ADAM_BETA2, ADAM_EPS
            )
            step += 1
            if step % cfg.eval_every == 0:
                run_eval()
                if stop:
                    break
        if stop:
            break

    result.steps = step
    if not stop and (not result.history or result.history[-1].step != step):
        run_eval()
    for name, p in classifier.params.items():
        p.data = best_params[name]
    return result
