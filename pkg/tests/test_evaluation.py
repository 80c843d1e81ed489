import numpy as np
import pytest

from injectbert.autodiff import Tensor
from injectbert.datasets import Instance
from injectbert.embeddings import PairLexicon
from injectbert.errors import ConfigError, ShapeError
from injectbert.evaluation import (
    EvalReport,
    accuracy,
    confusion_counts,
    detect_failed_run,
    evaluate,
    export_gate_snapshot,
    f1_binary,
    lexical_overlap,
    non_obvious_f1,
    seed_average,
)


# ---------------------------------------------------------------------------
# f1
# ---------------------------------------------------------------------------


def test_f1_perfect():
    assert f1_binary([1, 0, 1, 0], [1, 0, 1, 0]) == 1.0


def test_f1_all_negative_predictions():
    assert f1_binary([0, 0, 0], [1, 0, 1]) == 0.0


def test_f1_closed_form_two_thirds():
    # TP=2, FP=1, FN=1 -> P = R = 2/3 -> F1 = 2/3
    preds = [1, 1, 1, 0]
    golds = [1, 1, 0, 1]
    assert abs(f1_binary(preds, golds) - 2.0 / 3.0) < 1e-12


def test_f1_brute_force_on_random_fixtures():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 30))
        preds = rng.integers(0, 2, size=n).tolist()
        golds = rng.integers(0, 2, size=n).tolist()
        tp = sum(p and g for p, g in zip(preds, golds))
        fp = sum(p and not g for p, g in zip(preds, golds))
        fn = sum(g and not p for p, g in zip(preds, golds))
        expected = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        assert abs(f1_binary(preds, golds) - expected) < 1e-12


def test_f1_length_mismatch():
    with pytest.raises(ShapeError):
        f1_binary([1], [1, 0])


def test_f1_monotone_under_added_true_positive():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(1, 20))
        preds = rng.integers(0, 2, size=n).tolist()
        golds = rng.integers(0, 2, size=n).tolist()
        before = f1_binary(preds, golds)
        after = f1_binary(preds + [1], golds + [1])
        assert after >= before - 1e-12


# ---------------------------------------------------------------------------
# lexical overlap
# ---------------------------------------------------------------------------


def test_overlap_identical():
    assert lexical_overlap(["a", "b"], ["a", "b"]) == 1.0


def test_overlap_disjoint():
    assert lexical_overlap(["a"], ["b"]) == 0.0


def test_overlap_half():
    assert lexical_overlap(["a", "b", "c"], ["b", "c", "d"]) == 0.5


# ---------------------------------------------------------------------------
# non-obvious f1
# ---------------------------------------------------------------------------


def test_non_obvious_all_obvious_is_undefined():
    # positives above the median, negatives below: everything agrees with
    # the overlap cue, the non-obvious subset is empty
    golds = [1, 1, 0, 0]
    overlaps = [0.9, 0.8, 0.1, 0.2]
    assert non_obvious_f1([1, 1, 0, 0], golds, overlaps) is None


def test_non_obvious_six_instance_fixture_brute_force():
    golds = [1, 0, 1, 0, 1, 0]
    preds = [1, 1, 0, 0, 1, 0]
    overlaps = [0.2, 0.9, 0.8, 0.1, 0.5, 0.6]
    median = float(np.median(overlaps))  # 0.55
    keep = [
        (g == 1 and o < median) or (g == 0 and o >= median)
        for g, o in zip(golds, overlaps)
    ]
    assert keep == [True, True, False, False, True, True]
    sub_preds = [p for p, k in zip(preds, keep) if k]
    sub_golds = [g for g, k in zip(golds, keep) if k]
    expected = f1_binary(sub_preds, sub_golds)
    assert non_obvious_f1(preds, golds, overlaps) == expected
    # hand check: subset preds [1,1,1,0], golds [1,0,1,0] -> TP=2 FP=1 FN=0
    assert abs(expected - (2 * 2) / (2 * 2 + 1 + 0)) < 1e-12


def test_non_obvious_equal_overlaps_selects_all_negatives():
    golds = [1, 0, 1, 0, 0]
    preds = [1, 0, 0, 1, 0]
    overlaps = [0.4] * 5
    # overlap == median for everyone: positives are excluded (not < median),
    # negatives included (>= median)
    result = non_obvious_f1(preds, golds, overlaps)
    negatives_preds = [p for p, g in zip(preds, golds) if g == 0]
    assert result == f1_binary(negatives_preds, [0, 0, 0])


def test_non_obvious_subset_is_strict_subset_when_mixed():
    golds = [1, 0, 1, 0]
    overlaps = [0.1, 0.9, 0.9, 0.1]
    from injectbert.evaluation import non_obvious_mask

    mask = non_obvious_mask(golds, overlaps)
    assert 0 < sum(mask) < len(mask)


def test_non_obvious_perfect_predictions_score_one():
    golds = [1, 0, 1, 0, 1]
    overlaps = [0.1, 0.8, 0.9, 0.2, 0.3]
    assert non_obvious_f1(golds, golds, overlaps) in (1.0, None)


# ---------------------------------------------------------------------------
# failed runs
# ---------------------------------------------------------------------------


def test_failed_run_all_same():
    assert detect_failed_run([0, 0, 0, 0]) is True
    assert detect_failed_run([1, 1, 1]) is True


def test_failed_run_mixed():
    assert detect_failed_run([0, 1, 0]) is False


def test_failed_run_empty_is_vacuous_true():
    assert detect_failed_run([]) is True


# ---------------------------------------------------------------------------
# evaluate + seed averaging
# ---------------------------------------------------------------------------


class FixedClassifier:
    def __init__(self, preds):
        self.preds = list(preds)

    def predict(self, instances):
        return self.preds[: len(instances)]


def make_instances(labels, sentences=None):
    out = []
    for i, label in enumerate(labels):
        s1 = sentences[i][0] if sentences else f"left text {i}"
        s2 = sentences[i][1] if sentences else f"right text {i}"
        out.append(Instance(id=str(i), sentence1=s1, sentence2=s2, label=label))
    return out


def test_evaluate_perfect_classifier():
    # positives with low overlap and negatives with high overlap: every
    # instance is non-obvious, so the restricted score is well-defined
    sentences = [
        ("alpha beta", "gamma delta"),
        ("same same words", "same same words"),
        ("left only", "right only"),
        ("repeat this", "repeat this"),
        ("one two", "three four"),
        ("echo echo", "echo echo"),
    ]
    golds = [1, 0, 1, 0, 1, 0]
    instances = make_instances(golds, sentences)
    report = evaluate(FixedClassifier(golds), instances)
    assert report.f1 == 1.0
    assert report.accuracy == 1.0
    assert report.non_obvious_f1 == 1.0
    assert report.failed_run is False


def test_evaluate_majority_class_is_failed_run():
    golds = [1, 0, 0, 0]
    instances = make_instances(golds)
    report = evaluate(FixedClassifier([0, 0, 0, 0]), instances)
    assert report.failed_run is True
    assert report.f1 == 0.0


def test_evaluate_with_lexicon_partitions():
    lex = PairLexicon(
        synonyms=frozenset({PairLexicon.canonical("big", "large")}),
        antonyms=frozenset(),
    )
    sentences = [
        ("a big house", "a large house"),
        ("a big day", "such a large day"),
        ("plain words", "plain words"),
        ("other thing", "another thing"),
    ]
    golds = [1, 1, 1, 0]
    instances = make_instances(golds, sentences)
    report = evaluate(FixedClassifier([1, 0, 1, 0]), instances, lex)
    assert report.partitions["synonym"].count == 2
    assert report.partitions["neither"].count == 2
    assert report.partitions["antonym"].count == 0
    assert report.partitions["antonym"].f1 is None
    assert abs(report.partitions["synonym"].fraction - 0.5) < 1e-12


def test_evaluate_deterministic():
    golds = [1, 0, 1]
    instances = make_instances(golds)
    clf = FixedClassifier([1, 1, 0])
    r1 = evaluate(clf, instances)
    r2 = evaluate(clf, instances)
    assert r1 == r2


def make_report(f1=0.5, nof1=0.4, acc=0.5, failed=False):
    return EvalReport(
        f1=f1,
        non_obvious_f1=nof1,
        accuracy=acc,
        failed_run=failed,
        confusion={"tp": 1, "fp": 1, "tn": 1, "fn": 1},
    )


def test_seed_average_identical_reports():
    r = make_report()
    agg = seed_average([r, r, r])
    assert agg.means["f1"] == r.f1
    assert agg.means["non_obvious_f1"] == r.non_obvious_f1
    assert agg.n_runs == 3


def test_seed_average_simple_mean():
    agg = seed_average([make_report(f1=0.70), make_report(f1=0.80)])
    assert agg.means["f1"] == pytest.approx(0.75, abs=0)


def test_seed_average_excludes_undefined():
    agg = seed_average([make_report(nof1=0.6), make_report(nof1=None)])
    assert agg.means["non_obvious_f1"] == 0.6
    assert agg.undefined_counts["non_obvious_f1"] == 1


def test_seed_average_counts_failed_runs():
    agg = seed_average([make_report(failed=True), make_report(), make_report(failed=True)])
    assert agg.failed_runs == 2


def test_seed_average_empty_list_rejected():
    with pytest.raises(ConfigError):
        seed_average([])


# ---------------------------------------------------------------------------
# gate snapshots
# ---------------------------------------------------------------------------


def test_gate_snapshot_untrained_all_mass_at_zero():
    params = {"injection.gate": Tensor(np.zeros(16), requires_grad=True)}
    snap = export_gate_snapshot(params, bins=5)
    assert snap.near_zero == 16
    assert sum(c for _, _, c in snap.histogram) == 16
    nonzero_bins = [c for _, _, c in snap.histogram if c > 0]
    assert nonzero_bins == [16]


def test_gate_snapshot_three_values_three_bins():
    params = {"injection.gate": Tensor(np.array([-1.0, 0.0, 1.0]), requires_grad=True)}
    snap = export_gate_snapshot(params, bins=3)
    assert [c for _, _, c in snap.histogram] == [1, 1, 1]


def test_gate_snapshot_counts_sum_to_dimensions():
    rng = np.random.default_rng(0)
    params = {"injection.gate": Tensor(rng.normal(size=64), requires_grad=True)}
    snap = export_gate_snapshot(params, bins=7)
    assert sum(c for _, _, c in snap.histogram) == 64
    assert snap.dimensions == 64


def test_gate_snapshot_requires_gated_model():
    with pytest.raises(ConfigError):
        export_gate_snapshot({"other": Tensor(np.zeros(4))}, bins=3)


def test_gate_snapshot_csv_lines():
    params = {"injection.gate": Tensor(np.array([0.0, 0.5]), requires_grad=True)}
    snap = export_gate_snapshot(params, bins=2)
    lines = snap.histogram_csv_lines()
    assert lines[0] == "bin_left,bin_right,count"
    assert len(lines) == 3
