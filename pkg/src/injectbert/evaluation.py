"""Metrics, evaluation reports, seed averaging, and gate-vector analysis.

The binary F1 treats label 1 as the positive class. The "non-obvious" F1
restricts scoring to instances whose gold label disagrees with what lexical
overlap suggests: positives with below-median overlap and negatives at or
above the median. An empty non-obvious subset yields None, not 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .embeddings import PairLexicon, partition_instances
from .errors import ConfigError, ShapeError
from .tokenization import pre_tokenize

PARTITIONS = ("synonym", "antonym", "neither")


def f1_binary(preds: list[int], golds: list[int]) -> float:
    """2PR/(P+R) with positive class 1; 0.0 when precision+recall is 0."""
    if len(preds) != len(golds):
        raise ShapeError(f"f1_binary: {len(preds)} predictions vs {len(golds)} golds")
    tp = sum(1 for p, g in zip(preds, golds) if p == 1 and g == 1)
    fp = sum(1 for p, g in zip(preds, golds) if p == 1 and g == 0)
    fn = sum(1 for p, g in zip(preds, golds) if p == 0 and g == 1)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def accuracy(preds: list[int], golds: list[int]) -> float:
    if len(preds) != len(golds):
        raise ShapeError(f"accuracy: {len(preds)} predictions vs {len(golds)} golds")
    if not golds:
        return 0.0
    return sum(1 for p, g in zip(preds, golds) if p == g) / len(golds)


def confusion_counts(preds: list[int], golds: list[int]) -> dict[str, int]:
    counts = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for p, g in zip(preds, golds):
        if g == 1:
            counts["tp" if p == 1 else "fn"] += 1
        else:
            counts["fp" if p == 1 else "tn"] += 1
    return counts


def lexical_overlap(tokens1, tokens2) -> float:
    """Jaccard similarity of the two token sets, stopwords retained."""
    s1, s2 = set(tokens1), set(tokens2)
    if not s1 and not s2:
        return 1.0
    union = len(s1 | s2)
    return len(s1 & s2) / union if union else 0.0


def non_obvious_mask(golds: list[int], overlaps: list[float]) -> list[bool]:
    """True where the gold label disagrees with the overlap cue.

    The cue threshold is the median overlap of the evaluated split; an
    instance is non-obvious when it is a positive below the median or a
    negative at or above it.
    """
    if len(golds) != len(overlaps):
        raise ShapeError(f"non_obvious_mask: {len(golds)} golds vs {len(overlaps)} overlaps")
    if not golds:
        return []
    median = float(np.median(np.asarray(overlaps, dtype=np.float64)))
    return [
        (g == 1 and o < median) or (g == 0 and o >= median)
        for g, o in zip(golds, overlaps)
    ]


def non_obvious_f1(preds: list[int], golds: list[int], overlaps: list[float]) -> float | None:
    """F1 over the non-obvious subset; None when the subset is empty."""
    if len(preds) != len(golds):
        raise ShapeError(f"non_obvious_f1: {len(preds)} predictions vs {len(golds)} golds")
    mask = non_obvious_mask(golds, overlaps)
    sub_preds = [p for p, m in zip(preds, mask) if m]
    sub_golds = [g for g, m in zip(golds, mask) if m]
    if not sub_golds:
        return None
    return f1_binary(sub_preds, sub_golds)


def detect_failed_run(preds: list[int]) -> bool:
    """True iff every prediction is the same class (vacuously true when empty)."""
    return len(set(preds)) <= 1


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class PartitionScore:
    f1: float | None
    fraction: float
    count: int


@dataclass
class EvalReport:
    f1: float
    non_obvious_f1: float | None
    accuracy: float
    failed_run: bool
    confusion: dict[str, int]
    partitions: dict[str, PartitionScore] | None = None
    notes: list[str] = field(default_factory=list)

    def to_lines(self) -> list[str]:
        lines = [
            f"f1={_fmt(self.f1)}",
            f"non_obvious_f1={_fmt(self.non_obvious_f1)}",
            f"accuracy={_fmt(self.accuracy)}",
            f"failed_run={str(self.failed_run).lower()}",
        ]
        for key in ("tp", "fp", "tn", "fn"):
            lines.append(f"{key}={self.confusion[key]}")
        if self.partitions is not None:
            for name in PARTITIONS:
                score = self.partitions[name]
                lines.append(f"partition.{name}.f1={_fmt(score.f1)}")
                lines.append(f"partition.{name}.fraction={_fmt(score.fraction)}")
                lines.append(f"partition.{name}.count={score.count}")
        for note in self.notes:
            lines.append(f"note={note}")
        return lines


def _fmt(value) -> str:
    if value is None:
        return "NA"
    return format(float(value), ".6f")


def evaluate(classifier, instances, lexicon: PairLexicon | None = None) -> EvalReport:
    """Score a classifier on labeled instances, optionally per lexicon partition.

    ``classifier`` needs a ``predict(instances) -> list[int]`` method; the
    instances need ``sentence1``/``sentence2``/``label`` fields.
    """
    preds = classifier.predict(instances)
    golds = [inst.label for inst in instances]
    overlaps = [
        lexical_overlap(pre_tokenize(inst.sentence1), pre_tokenize(inst.sentence2))
        for inst in instances
    ]
    report = EvalReport(
        f1=f1_binary(preds, golds),
        non_obvious_f1=non_obvious_f1(preds, golds, overlaps),
        accuracy=accuracy(preds, golds),
        failed_run=detect_failed_run(preds),
        confusion=confusion_counts(preds, golds),
    )
    if not instances:
        report.notes.append("empty evaluation set; failed_run is vacuous")
    if lexicon is not None:
        tags = partition_instances(instances, lexicon)
        selectors = {
            "synonym": [t.has_synonym for t in tags],
            "antonym": [t.has_antonym for t in tags],
            "neither": [t.neither for t in tags],
        }
        report.partitions = {}
        total = len(instances)
        for name, mask in selectors.items():
            sub_preds = [p for p, m in zip(preds, mask) if m]
            sub_golds = [g for g, m in zip(golds, mask) if m]
            score = f1_binary(sub_preds, sub_golds) if sub_golds else None
            report.partitions[name] = PartitionScore(
                f1=score,
                fraction=(len(sub_golds) / total) if total else 0.0,
                count=len(sub_golds),
            )
    return report


@dataclass
class AggregateReport:
    """Arithmetic means over runs; undefined metrics are excluded and counted."""

    n_runs: int
    failed_runs: int
    means: dict[str, float | None]
    undefined_counts: dict[str, int]

    def to_lines(self) -> list[str]:
        lines = [f"n_runs={self.n_runs}", f"failed_runs={self.failed_runs}"]
        for key in sorted(self.means):
            lines.append(f"mean.{key}={_fmt(self.means[key])}")
        for key in sorted(self.undefined_counts):
            if self.undefined_counts[key]:
                lines.append(f"undefined.{key}={self.undefined_counts[key]}")
        return lines


def seed_average(reports: list[EvalReport]) -> AggregateReport:
    """Mean per metric across runs; None values are skipped, never zeroed."""
    if not reports:
        raise ConfigError("seed_average: no reports to average")
    metrics: dict[str, list[float | None]] = {
        "f1": [r.f1 for r in reports],
        "non_obvious_f1": [r.non_obvious_f1 for r in reports],
        "accuracy": [r.accuracy for r in reports],
    }
    for key in ("tp", "fp", "tn", "fn"):
        metrics[key] = [float(r.confusion[key]) for r in reports]
    if all(r.partitions is not None for r in reports):
        for name in PARTITIONS:
            metrics[f"partition.{name}.f1"] = [r.partitions[name].f1 for r in reports]
            metrics[f"partition.{name}.fraction"] = [
                r.partitions[name].fraction for r in reports
            ]
    means: dict[str, float | None] = {}
    undefined: dict[str, int] = {}
    for key, values in metrics.items():
        defined = [v for v in values if v is not None]
        undefined[key] = len(values) - len(defined)
        if not defined:
            means[key] = None
        elif all(v == defined[0] for v in defined):
            means[key] = defined[0]  # identical runs reproduce exactly
        else:
            means[key] = sum(defined) / len(defined)
    return AggregateReport(
        n_runs=len(reports),
        failed_runs=sum(1 for r in reports if r.failed_run),
        means=means,
        undefined_counts=undefined,
    )


# ---------------------------------------------------------------------------
# gate analysis
# ---------------------------------------------------------------------------

ZERO_THRESHOLD = 1e-3


@dataclass
class GateSnapshot:
    gate: np.ndarray
    near_zero: int
    zero_threshold: float
    minimum: float
    maximum: float
    mean: float
    histogram: list[tuple[float, float, int]]  # (bin left, bin right, count)

    @property
    def dimensions(self) -> int:
        return int(self.gate.shape[0])

    def histogram_csv_lines(self) -> list[str]:
        lines = ["bin_left,bin_right,count"]
        for left, right, count in self.histogram:
            lines.append(f"{left!r},{right!r},{count}")
        return lines


def export_gate_snapshot(
    params: dict[str, Tensor],
    bins: int = 20,
    zero_threshold: float = ZERO_THRESHOLD,
) -> GateSnapshot:
    """Histogram and summary stats of the learned gate vector."""
    if "injection.gate" not in params:
        raise ConfigError("gate snapshot requires a gated model (no injection.gate tensor)")
    if bins < 1:
        raise ConfigError(f"bins must be positive, got {bins}")
    gate = params["injection.gate"].data.copy()
    counts, edges = np.histogram(gate, bins=bins)
    return GateSnapshot(
        gate=gate,
        near_zero=int((np.abs(gate) < zero_threshold).sum()),
        zero_threshold=zero_threshold,
        minimum=float(gate.min()),
        maximum=float(gate.max()),
        mean=float(gate.mean()),
        histogram=[
            (float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(len(counts))
        ],
    )
