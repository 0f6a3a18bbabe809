import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igt.errors import ContractError, UndefinedMetricError
from igt.metrics import (EvalReport, accuracy, auroc_binary, auroc_macro,
                         evaluate_predictions)
from igt.seeding import rng_for


def all_pairs_auroc_oracle(scores, labels) -> float:
    """Exhaustive pair counting: wins + half ties over all pos/neg pairs."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0

    def test_none_correct(self):
        assert accuracy([1, 1], [0, 0]) == 0.0

    def test_hand_count(self):
        assert accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            accuracy([], [])

    def test_argmax_tie_break_lowest_index(self):
        logits = np.array([[1.0, 1.0, 0.0], [0.5, 1.0, 1.0]])
        report = evaluate_predictions(logits, [0, 1], n_classes=3)
        assert report.confusion_matrix[0][0] == 1  # tie (1.0, 1.0) -> class 0
        assert report.confusion_matrix[1][1] == 1  # tie (1.0, 1.0) -> class 1
        assert report.accuracy == 1.0


class TestAurocBinary:
    def test_perfect_separation(self):
        assert auroc_binary([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_all_ties(self):
        assert auroc_binary([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5

    def test_reversed_is_zero(self):
        assert auroc_binary([0.1, 0.9], [1, 0]) == 0.0

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedMetricError):
            auroc_binary([0.1, 0.9], [1, 1])

    def test_matches_all_pairs_oracle(self):
        rng = rng_for(101, "auroc")
        scores = rng.standard_normal(20)
        labels = rng.integers(0, 2, size=20)
        if labels.sum() in (0, 20):
            labels[0] = 1 - labels[0]
        assert auroc_binary(scores, labels) == all_pairs_auroc_oracle(scores, labels)

    def test_one_hundred_random_cases_match_oracle(self):
        for case in range(100):
            rng = rng_for(case, "auroc-cases")
            n = int(rng.integers(4, 40))
            # quantized scores force ties
            scores = np.round(rng.standard_normal(n), 1)
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            assert auroc_binary(scores, labels) == all_pairs_auroc_oracle(scores, labels)


class TestAurocMacro:
    def test_binary_reduces_to_class1_auroc(self):
        rng = rng_for(102, "macro")
        p1 = rng.uniform(0, 1, size=30)
        probs = np.stack([1 - p1, p1], axis=1)
        labels = rng.integers(0, 2, size=30)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        macro, per_class = auroc_macro(probs, labels)
        assert macro == pytest.approx(auroc_binary(p1, labels), abs=1e-12)
        assert per_class[0] == pytest.approx(per_class[1], abs=1e-12)

    def test_perfect_classifier(self):
        labels = [0, 1, 2, 0, 1, 2]
        probs = np.zeros((6, 3))
        for i, y in enumerate(labels):
            probs[i, y] = 1.0
            probs[i, (y + 1) % 3] = 0.0
        macro, _ = auroc_macro(probs, labels)
        assert macro == 1.0

    def test_three_class_matches_per_class_oracle(self):
        rng = rng_for(103, "macro3")
        logits = rng.standard_normal((40, 3))
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        labels = rng.integers(0, 3, size=40)
        macro, per_class = auroc_macro(probs, labels)
        wants = []
        for c in range(3):
            wants.append(all_pairs_auroc_oracle(probs[:, c], (labels == c).astype(int)))
            assert per_class[c] == wants[-1]
        assert macro == pytest.approx(np.mean(wants), abs=1e-12)

    def test_absent_class_skipped_and_reported(self):
        probs = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.3, 0.6, 0.1]])
        macro, per_class = auroc_macro(probs, [0, 1, 0])
        assert per_class[2] is None
        assert per_class[0] is not None

    def test_all_degenerate_rejected(self):
        with pytest.raises(UndefinedMetricError):
            auroc_macro(np.array([[1.0]]), [0])


class TestEvalReport:
    def test_confusion_row_sums_match_truth_counts(self):
        rng = rng_for(104, "report")
        logits = rng.standard_normal((25, 3))
        labels = rng.integers(0, 3, size=25)
        report = evaluate_predictions(logits, labels, 3)
        rows = np.array(report.confusion_matrix).sum(axis=1)
        for c in range(3):
            assert rows[c] == (labels == c).sum()
        assert report.n_samples == 25
        assert 0.0 <= report.accuracy <= 1.0
        assert 0.0 <= report.auroc <= 1.0

    def test_json_keys_fixed(self):
        report = EvalReport(accuracy=0.5, auroc=0.5, per_class_auroc=[0.5],
                            confusion_matrix=[[1]], n_samples=1)
        assert set(report.to_dict()) == {"accuracy", "auroc", "per_class_auroc",
                                         "confusion_matrix", "n_samples"}


@settings(max_examples=50, deadline=None)
@given(st.integers(4, 30), st.integers(0, 2 ** 31 - 1))
def test_auroc_invariant_under_monotone_transform(n, seed):
    rng = rng_for(seed, "auroc-mono")
    scores = rng.standard_normal(n)
    labels = rng.integers(0, 2, size=n)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    base = auroc_binary(scores, labels)
    assert auroc_binary(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)
    assert auroc_binary(3 * scores + 7, labels) == pytest.approx(base, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(4, 30), st.integers(0, 2 ** 31 - 1))
def test_auroc_sign_flip_maps_to_complement(n, seed):
    rng = rng_for(seed, "auroc-flip")
    scores = rng.standard_normal(n)
    labels = rng.integers(0, 2, size=n)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    assert auroc_binary(-scores, labels) == pytest.approx(1.0 - auroc_binary(scores, labels),
                                                          abs=1e-12)
