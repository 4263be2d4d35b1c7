"""Calibration and evaluation metrics.

Conventions used throughout:

* confidence of a sample is the max of its predicted class probabilities;
* equal-width bins on (0, 1] are half-open on the left, ``((i-1)/B, i/B]``,
  and a (post-softmax impossible) confidence of exactly 0 falls in bin 1;
* empty bins contribute nothing to ECE and are skipped by MCE;
* all operations are pure and safe to call concurrently.
"""

from dataclasses import dataclass, field

import numpy as np

DEFAULT_BINS = 15

__all__ = [
    "PredictionSet",
    "BinTable",
    "DEFAULT_BINS",
    "ece",
    "mce",
    "adaptive_ece",
    "classwise_ece",
    "nll",
    "error",
    "apply_temperature",
    "temperature_search",
    "default_temperature_grid",
    "auroc",
    "reliability_table",
]


@dataclass(frozen=True)
class PredictionSet:
    """Row-normalized class probabilities with integer labels.

    ``logits`` are optional; they are only needed for temperature scaling.
    """

    probs: np.ndarray
    labels: np.ndarray
    logits: np.ndarray | None = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if probs.ndim != 2 or probs.shape[0] < 1:
            raise ValueError("probs must be a nonempty [n x K] matrix")
        if labels.shape != (probs.shape[0],):
            raise ValueError("labels must be a vector matching probs rows")
        if not np.all(np.isfinite(probs)):
            raise ValueError("probs contain non-finite values")
        if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("probs rows must sum to 1 within 1e-9")
        if labels.min() < 0 or labels.max() >= probs.shape[1]:
            raise ValueError("labels out of range for probs width")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", labels)
        if self.logits is not None:
            logits = np.asarray(self.logits, dtype=np.float64)
            if logits.shape != probs.shape:
                raise ValueError("logits shape must match probs")
            object.__setattr__(self, "logits", logits)

    @property
    def n(self):
        return self.probs.shape[0]

    @property
    def n_classes(self):
        return self.probs.shape[1]

    def confidences(self):
        return self.probs.max(axis=1)

    def predictions(self):
        return self.probs.argmax(axis=1)


@dataclass(frozen=True)
class BinTable:
    """Per-bin counts, accuracies and mean confidences behind ECE/MCE.

    Empty bins keep accuracy = confidence = 0 so the table stays NaN-free;
    their zero count removes them from every derived quantity.
    """

    lower: np.ndarray
    upper: np.ndarray
    counts: np.ndarray
    accuracies: np.ndarray
    confidences: np.ndarray
    n: int = field(default=0)

    def ece(self):
        weights = self.counts / max(self.n, 1)
        return float(np.sum(weights * np.abs(self.accuracies - self.confidences)))

    def to_csv(self):
        lines = ["bin_lo,bin_hi,count,accuracy,confidence"]
        for lo, hi, c, a, conf in zip(
            self.lower, self.upper, self.counts, self.accuracies, self.confidences
        ):
            lines.append(f"{lo!r},{hi!r},{int(c)},{a!r},{conf!r}")
        return "\n".join(lines) + "\n"


def _bin_index(confidences, n_bins):
    """0-based bin index under the ((i-1)/B, i/B] convention."""
    edges = np.arange(1, n_bins) / n_bins
    return np.searchsorted(edges, confidences, side="left")


def _check_bins(n_bins):
    if int(n_bins) != n_bins or n_bins < 1:
        raise ValueError("n_bins must be a positive integer")
    return int(n_bins)


def reliability_table(pred, n_bins=DEFAULT_BINS):
    """Equal-width bin table of counts, accuracy and mean confidence."""
    n_bins = _check_bins(n_bins)
    conf = pred.confidences()
    correct = (pred.predictions() == pred.labels).astype(np.float64)
    idx = _bin_index(conf, n_bins)

    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    acc_sum = np.bincount(idx, weights=correct, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    nonzero = counts > 0
    accuracies = np.zeros(n_bins)
    confidences = np.zeros(n_bins)
    accuracies[nonzero] = acc_sum[nonzero] / counts[nonzero]
    confidences[nonzero] = conf_sum[nonzero] / counts[nonzero]

    grid = np.arange(n_bins + 1) / n_bins
    return BinTable(
        lower=grid[:-1],
        upper=grid[1:],
        counts=counts,
        accuracies=accuracies,
        confidences=confidences,
        n=pred.n,
    )


def ece(pred, n_bins=DEFAULT_BINS):
    """Expected calibration error: bin-weighted mean |accuracy - confidence|."""
    return reliability_table(pred, n_bins).ece()


def mce(pred, n_bins=DEFAULT_BINS):
    """Maximum calibration error over nonempty bins."""
    table = reliability_table(pred, n_bins)
    occupied = table.counts > 0
    gaps = np.abs(table.accuracies[occupied] - table.confidences[occupied])
    return float(gaps.max())


def adaptive_ece(pred, n_bins=DEFAULT_BINS):
    """ECE over equal-count bins.

    Samples are stable-sorted by confidence and split into contiguous groups
    whose sizes differ by at most one; the first ``n mod B`` groups take THE
    extra sample.
    """
    n_bins = _check_bins(n_bins)
    if pred.n < n_bins:
        raise ValueError(f"adaptive_ece needs n >= n_bins, got n={pred.n}, n_bins={n_bins}")
    conf = pred.confidences()
    correct = (pred.predictions() == pred.labels).astype(np.float64)
    order = np.argsort(conf, kind="stable")

    base, extra = divmod(pred.n, n_bins)
    total = 0.0
    start = 0
    for i in range(n_bins):
        size = base + (1 if i < extra else 0)
        members = order[start : start + size]
        start += size
        gap = abs(correct[members].mean() - conf[members].mean())
        total += size / pred.n * gap
    return float(total)


def classwise_ece(pred, n_bins=DEFAULT_BINS):
    """Mean over classes of the ECE of each class's predicted probability.

    For class j all n samples are binned by probs[:, j]; per-bin accuracy is
    the fraction of samples actually labeled j.
    """
    n_bins = _check_bins(n_bins)
    total = 0.0
    for j in range(pred.n_classes):
        p_j = pred.probs[:, j]
        is_j = (pred.labels == j).astype(np.float64)
        idx = _bin_index(p_j, n_bins)
        counts = np.bincount(idx, minlength=n_bins)
        acc_sum = np.bincount(idx, weights=is_j, minlength=n_bins)
        conf_sum = np.bincount(idx, weights=p_j, minlength=n_bins)
        nonzero = counts > 0
        gaps = np.abs(acc_sum[nonzero] - conf_sum[nonzero]) / counts[nonzero]
        total += float(np.sum(counts[nonzero] / pred.n * gaps))
    return total / pred.n_classes


def nll(pred):
    """Mean negative log-likelihood of the true class, clamped at 1e-12."""
    p_true = pred.probs[np.arange(pred.n), pred.labels]
    return float(np.mean(-np.log(np.clip(p_true, 1e-12, None))))


def error(pred):
    """Top-1 classification error with first-index tie-break."""
    return float(np.mean(pred.predictions() != pred.labels))


def apply_temperature(logits, tau):
    """Row-wise softmax(logits / tau); preserves each row's argmax."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    scaled = np.asarray(logits, dtype=np.float64) / tau
    shifted = scaled - scaled.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def default_temperature_grid():
    """0.1, 0.2, ..., 10.0. A zero temperature is degenerate and excluded."""
    return np.array([i / 10 for i in range(1, 101)])


def temperature_search(logits, labels, grid=None, n_bins=DEFAULT_BINS):
    """Grid temperature minimizing post-scaling ECE on the given set.

    Ties go to the temperature closest to 1.0, then to the smaller value.
    """
    if grid is None:
        grid = default_temperature_grid()
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("temperature grid must be nonempty")
    if np.any(grid <= 0):
        raise ValueError("temperature grid values must be positive")

    best = None
    for tau in grid:
        value = ece(PredictionSet(apply_temperature(logits, tau), labels), n_bins)
        key = (value, abs(tau - 1.0), tau)
        if best is None or key < best:
            best = key
    return float(best[2])


def auroc(scores_in, scores_out):
    """Probability a random in-distribution score outranks an OoD score.

    Computed as the Mann-Whitney U statistic over n_in * n_out with ties
    credited 0.5 (midranks), so auroc(a, b) + auroc(b, a) == 1 exactly.
    """
    scores_in = np.asarray(scores_in, dtype=np.float64).ravel()
    scores_out = np.asarray(scores_out, dtype=np.float64).ravel()
    if scores_in.size == 0 or scores_out.size == 0:
        raise ValueError("both score sets must be nonempty")

    combined = np.concatenate([scores_in, scores_out])
    order = np.argsort(combined, kind="stable")
    ranks = np.empty(combined.size, dtype=np.float64)
    sorted_vals = combined[order]
    i = 0
    while i < combined.size:
        j = i
        while j + 1 < combined.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1

    rank_sum_in = ranks[: scores_in.size].sum()
    u = rank_sum_in - scores_in.size * (scores_in.size + 1) / 2.0
    return float(u / (scores_in.size * scores_out.size))
