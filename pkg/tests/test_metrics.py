import math

import numpy as np
import pytest

from pcsearch.metrics import (
    BinTable,
    PredictionSet,
    adaptive_ece,
    apply_temperature,
    auroc,
    classwise_ece,
    default_temperature_grid,
    ece,
    error,
    mce,
    nll,
    reliability_table,
    temperature_search,
)


def make_pred(confidences, correct, n_classes=4):
    """Prediction set with prescribed max-prob confidences and correctness.

    The max probability sits on class 0 and the remainder is spread evenly,
    so conf values down to 1/n_classes are reachable.
    """
    confidences = np.asarray(confidences, dtype=float)
    n = confidences.size
    probs = np.empty((n, n_classes))
    for i, c in enumerate(confidences):
        assert c >= 1.0 / n_classes - 1e-12
        probs[i] = (1.0 - c) / (n_classes - 1)
        probs[i, 0] = c
    labels = np.where(np.asarray(correct, dtype=bool), 0, 1)
    return PredictionSet(probs, labels)


FOUR_SAMPLE = make_pred([0.3, 0.7, 0.8, 0.9], [0, 1, 1, 1])


# naive loop re-implementations, kept independent of the library's vector path


def naive_equal_width_bins(conf, n_bins):
    bins = [[] for _ in range(n_bins)]
    for j, c in enumerate(conf):
        placed = False
        for i in range(1, n_bins + 1):
            lo = (i - 1) / n_bins
            hi = i / n_bins
            if (c > lo or i == 1) and c <= hi:
                bins[i - 1].append(j)
                placed = True
                break
        assert placed
    return bins

def naive_ece(pred, n_bins):
    conf = pred.probs.max(axis=1)
    correct = pred.probs.argmax(axis=1) == pred.labels
    total = 0.0
    for members in naive_equal_width_bins(conf, n_bins):
        if not members:
            continue
        acc = sum(correct[j] for j in members) / len(members)
        avg = sum(conf[j] for j in members) / len(members)
        total += len(members) / pred.n * abs(acc - avg)
    return total

def naive_mce(pred, n_bins):
    conf = pred.probs.max(axis=1)
    correct = pred.probs.argmax(axis=1) == pred.labels
    worst = 0.0
    for members in naive_equal_width_bins(conf, n_bins):
        if not members:
            continue
        acc = sum(correct[j] for j in members) / len(members)
        avg = sum(conf[j] for j in members) / len(members)
        worst = max(worst, abs(acc - avg))
    return worst

def naive_adaptive_ece(pred, n_bins):
    conf = pred.probs.max(axis=1)
    correct = pred.probs.argmax(axis=1) == pred.labels
    order = sorted(range(pred.n), key=lambda j: (conf[j], j))
    base, extra = divmod(pred.n, n_bins)
    total, start = 0.0, 0
    for i in range(n_bins):
        size = base + (1 if i < extra else 0)
        members = order[start : start + size]
        start += size
        acc = sum(correct[j] for j in members) / size
        avg = sum(conf[j] for j in members) / size
        total += size / pred.n * abs(acc - avg)
    return total

def naive_classwise_ece(pred, n_bins):
    total = 0.0
    for cls in range(pred.n_classes):
        p = pred.probs[:, cls]
        hit = pred.labels == cls
        for members in naive_equal_width_bins(p, n_bins):
            if not members:
                continue
            acc = sum(hit[j] for j in members) / len(members)
            avg = sum(p[j] for j in members) / len(members)
            total += len(members) / pred.n * abs(acc - avg)
    return total / pred.n_classes

def naive_nll(pred):
    return sum(
        -math.log(max(pred.probs[j, pred.labels[j]], 1e-12)) for j in range(pred.n)
    ) / pred.n


def random_prediction_set(rng):
    n = int(rng.integers(1, 13))
    k = int(rng.integers(2, 6))
    probs = rng.random((n, k)) + 1e-3
    probs /= probs.sum(axis=1, keepdims=True)
    labels = rng.integers(0, k, size=n)
    return PredictionSet(probs, labels)


class TestEce:
    def test_all_correct_full_confidence(self):
        probs = np.eye(3)[[0, 1, 2, 0]]
        assert ece(PredictionSet(probs, [0, 1, 2, 0])) == 0.0

    def test_hand_binned_four_samples(self):
        assert abs(ece(FOUR_SAMPLE, n_bins=2) - 0.225) < 1e-12

    def test_single_bin_collapses_to_accuracy_gap(self):
        conf = FOUR_SAMPLE.confidences()
        expected = abs(0.75 - conf.mean())
        assert abs(ece(FOUR_SAMPLE, n_bins=1) - expected) < 1e-15

    def test_rejects_bad_bin_count(self):
        with pytest.raises(ValueError):
            ece(FOUR_SAMPLE, n_bins=0)

    def test_range(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            pred = random_prediction_set(rng)
            assert 0.0 <= ece(pred, 4) <= 1.0


class TestMce:
    def test_hand_value(self):
        assert abs(mce(FOUR_SAMPLE, n_bins=2) - 0.3) < 1e-12

    def test_perfectly_calibrated_single_bin(self):
        pred = make_pred([0.75] * 4, [1, 1, 1, 0])
        assert abs(mce(pred, n_bins=1)) < 1e-15

    def test_dominates_ece(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            pred = random_prediction_set(rng)
            b = int(rng.integers(1, 5))
            assert mce(pred, b) >= ece(pred, b) - 1e-15


class TestAdaptiveEce:
    def test_hand_value(self):
        assert abs(adaptive_ece(FOUR_SAMPLE, n_bins=2) - 0.075) < 1e-12

    def test_single_bin_matches_ece(self):
        assert adaptive_ece(FOUR_SAMPLE, 1) == ece(FOUR_SAMPLE, 1)

    def test_uneven_split_puts_extra_samples_first(self):
        # n=7, B=3 must split (3,2,2); the naive oracle encodes that rule
        pred = make_pred(
            [0.30, 0.35, 0.40, 0.55, 0.60, 0.80, 0.95], [1, 0, 0, 1, 0, 0, 1]
        )
        assert abs(adaptive_ece(pred, 3) - naive_adaptive_ece(pred, 3)) < 1e-15

    def test_requires_enough_samples(self):
        with pytest.raises(ValueError):
            adaptive_ece(FOUR_SAMPLE, n_bins=5)


class TestClasswiseEce:
    def test_hand_value(self):
        pred = PredictionSet([[0.8, 0.2], [0.6, 0.4]], [0, 0])
        assert abs(classwise_ece(pred, n_bins=1) - 0.3) < 1e-12

    def test_one_hot_predictions_are_perfect(self):
        probs = np.eye(3)[[2, 0, 1, 1]]
        assert classwise_ece(PredictionSet(probs, [2, 0, 1, 1]), 4) == 0.0

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            pred = random_prediction_set(rng)
            assert classwise_ece(pred, 3) >= 0.0


class TestNllError:
    def test_nll_perfect(self):
        assert nll(PredictionSet(np.eye(2)[[0, 1]], [0, 1])) == 0.0

    def test_nll_half(self):
        pred = PredictionSet([[0.5, 0.5]], [0])
        assert abs(nll(pred) - math.log(2)) < 1e-12

    def test_nll_nonnegative_and_clamped(self):
        pred = PredictionSet([[1.0, 0.0]], [1])
        assert nll(pred) == pytest.approx(-math.log(1e-12))

    def test_error_counts_misclassified(self):
        probs = [[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]]
        assert error(PredictionSet(probs, [0, 1, 1, 1])) == 0.25
        assert error(PredictionSet(probs, [0, 1, 0, 1])) == 0.0


class TestTemperature:
    def test_hand_softmax(self):
        probs = apply_temperature(np.array([[2.0, 0.0]]), 2.0)
        expected = np.array([math.e / (math.e + 1), 1 / (math.e + 1)])
        np.testing.assert_allclose(probs[0], expected, atol=1e-12)
        assert abs(probs[0, 0] - 0.731059) < 5e-7

    def test_unit_temperature_is_identity(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(20, 3))
        shifted = logits - logits.max(axis=1, keepdims=True)
        direct = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
        np.testing.assert_array_equal(apply_temperature(logits, 1.0), direct)

    def test_argmax_preserved(self):
        rng = np.random.default_rng(6)
        logits = rng.normal(size=(50, 5))
        for tau in [0.05, 0.5, 1.0, 3.0, 10.0]:
            scaled = apply_temperature(logits, tau)
            np.testing.assert_array_equal(scaled.argmax(axis=1), logits.argmax(axis=1))

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            apply_temperature(np.zeros((1, 2)), 0.0)
        with pytest.raises(ValueError):
            apply_temperature(np.zeros((1, 2)), -1.0)

    def test_tie_prefers_unit_temperature(self):
        # uniform logits give identical ECE at every temperature
        logits = np.zeros((8, 4))
        labels = np.array([0, 1, 2, 3, 0, 1, 2, 3])
        assert temperature_search(logits, labels) == 1.0

    def test_overconfident_set_needs_softening(self):
        rng = np.random.default_rng(9)
        n = 200
        labels = np.zeros(n, dtype=int)
        labels[rng.permutation(n)[:60]] = 1  # 70% accurate
        logits = np.zeros((n, 2))
        logits[:, 0] = 3.0  # confidence ~0.95 on class 0 everywhere
        tau = temperature_search(logits, labels)
        assert tau > 1.0

        # brute force over the same grid reproduces the choice
        best = None
        for t in default_temperature_grid():
            v = ece(PredictionSet(apply_temperature(logits, t), labels))
            key = (v, abs(t - 1.0), t)
            if best is None or key < best:
                best = key
        assert tau == best[2]

    def test_post_scaling_never_worse_with_unit_in_grid(self):
        rng = np.random.default_rng(10)
        for trial in range(5):
            logits = rng.normal(scale=3.0, size=(60, 4))
            labels = rng.integers(0, 4, size=60)
            tau = temperature_search(logits, labels)
            pre = ece(PredictionSet(apply_temperature(logits, 1.0), labels))
            post = ece(PredictionSet(apply_temperature(logits, tau), labels))
            assert post <= pre + 1e-15

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            temperature_search(np.zeros((2, 2)), [0, 1], grid=[])


class TestAuroc:
    def test_full_separation(self):
        assert auroc([0.9, 0.8], [0.2, 0.1]) == 1.0

    def test_partial_overlap(self):
        assert auroc([0.9, 0.4], [0.6, 0.1]) == 0.75

    def test_all_ties(self):
        assert auroc([0.5, 0.5], [0.5, 0.5, 0.5]) == 0.5

    def test_antisymmetry(self):
        rng = np.random.default_rng(2)
        a = rng.random(37)
        b = rng.random(23)
        assert auroc(a, b) + auroc(b, a) == 1.0

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            auroc([], [0.5])


class TestReliabilityTable:
    def test_hand_bins(self):
        table = reliability_table(FOUR_SAMPLE, n_bins=2)
        np.testing.assert_array_equal(table.counts, [1, 3])
        assert abs(table.accuracies[0] - 0.0) < 1e-15
        assert abs(table.confidences[0] - 0.3) < 1e-15
        assert abs(table.accuracies[1] - 1.0) < 1e-15
        assert abs(table.confidences[1] - 0.8) < 1e-15

    def test_counts_sum_to_n(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            pred = random_prediction_set(rng)
            assert reliability_table(pred, 4).counts.sum() == pred.n

    def test_ece_recoverable(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            pred = random_prediction_set(rng)
            b = int(rng.integers(1, 5))
            assert abs(reliability_table(pred, b).ece() - ece(pred, b)) < 1e-15

    def test_csv_shape(self):
        text = reliability_table(FOUR_SAMPLE, 2).to_csv()
        lines = text.strip().split("\n")
        assert lines[0] == "bin_lo,bin_hi,count,accuracy,confidence"
        assert len(lines) == 3
        assert lines[1].split(",")[2] == "1"


class TestBruteForceEquivalence:
    def test_200_random_instances(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            pred = random_prediction_set(rng)
            b = int(rng.integers(1, 5))
            assert abs(ece(pred, b) - naive_ece(pred, b)) < 1e-15
            assert abs(mce(pred, b) - naive_mce(pred, b)) < 1e-15
            assert abs(classwise_ece(pred, b) - naive_classwise_ece(pred, b)) < 1e-15
            assert abs(nll(pred) - naive_nll(pred)) < 1e-15
            if pred.n >= b:
                assert abs(adaptive_ece(pred, b) - naive_adaptive_ece(pred, b)) < 1e-15


class TestPredictionSetValidation:
    def test_rejects_unnormalized_rows(self):
        with pytest.raises(ValueError):
            PredictionSet([[0.7, 0.7]], [0])

    def test_rejects_label_out_of_range(self):
        with pytest.raises(ValueError):
            PredictionSet([[0.5, 0.5]], [2])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            PredictionSet(np.zeros((0, 2)), [])
