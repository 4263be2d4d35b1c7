"""Synthetic datasets, splitting, distribution-shift corruption, CSV I/O.

Everything here is a pure function of (arguments, seed); repeated calls are
bitwise identical.
"""

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import CsvParseError
from .seeding import derive_seed

SPHERE_RADIUS = 4.0

__all__ = [
    "Dataset",
    "SplitSpec",
    "gen_blobs",
    "cluster_centers",
    "split",
    "corrupt_gaussian",
    "load_csv",
    "save_csv",
]


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with integer class labels and a name for provenance."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    name: str = "dataset"

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ValueError("features must be a nonempty [n x d] matrix")
        if labels.shape != (features.shape[0],):
            raise ValueError("labels must match the number of samples")
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain non-finite values")
        if self.n_classes < 1 or labels.min() < 0 or labels.max() >= self.n_classes:
            raise ValueError("labels must lie in [0, n_classes)")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class SplitSpec:
    """Train/val/test fractions (must sum to 1) plus a shuffle seed."""

    train_fraction: float
    val_fraction: float
    test_fraction: float
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(not 0.0 < f < 1.0 for f in fracs):
            raise ValueError("each split fraction must be in (0, 1)")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise ValueError("split fractions must sum to 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


def cluster_centers(k, dim):
    """First k points of a deterministic low-discrepancy sequence on the
    radius-4 sphere.

    dim 1 alternates the two poles; dim 2 walks the circle by the golden
    angle; higher dims push a Halton sequence through the normal quantile
    and normalize.
    """
    if k < 1 or dim < 1:
        raise ValueError("need k >= 1 and dim >= 1")
    if dim == 1:
        return SPHERE_RADIUS * np.array([[1.0 if i % 2 == 0 else -1.0] for i in range(k)])
    if dim == 2:
        golden = (math.sqrt(5.0) - 1.0) / 2.0
        angles = 2.0 * math.pi * golden * np.arange(k)
        return SPHERE_RADIUS * np.column_stack([np.cos(angles), np.sin(angles)])

    quantile = NormalDist().inv_cdf
    directions = np.empty((k, dim))
    for i in range(k):
        point = [_halton(i + 1, _PRIMES[j % len(_PRIMES)]) for j in range(dim)]
        vec = np.array([quantile(u) for u in point])
        norm = np.linalg.norm(vec)
        if norm < 1e-9:
            vec = np.zeros(dim)
            vec[i % dim] = 1.0
            norm = 1.0
        directions[i] = vec / norm
    return SPHERE_RADIUS * directions


_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47)


def _halton(index, base):
    result, f = 0.0, 1.0
    while index > 0:
        f /= base
        result += f * (index % base)
        index //= base
    return result


def gen_blobs(n, k, dim, label_noise, seed):
    """Gaussian clusters around low-discrepancy centers with label noise.

    Sample i is drawn from cluster ``i mod k`` (unit variance), then exactly
    ``floor(label_noise * n)`` samples, chosen without replacement, have
    their label reassigned uniformly to a *different* class.
    """
    if k < 2:
        raise ValueError("need at least 2 classes")
    if n < k:
        raise ValueError("need at least one sample per class")
    if dim < 1:
        raise ValueError("need dim >= 1")
    if not 0.0 <= label_noise < 1.0:
        raise ValueError("label_noise must lie in [0, 1)")

    rng = np.random.default_rng(seed)
    centers = cluster_centers(k, dim)
    clusters = np.arange(n) % k
    features = centers[clusters] + rng.standard_normal((n, dim))
    labels = clusters.copy()

    n_flips = int(label_noise * n)
    if n_flips > 0:
        victims = rng.choice(n, size=n_flips, replace=False)
        offsets = rng.integers(1, k, size=n_flips)
        labels[victims] = (labels[victims] + offsets) % k
    return Dataset(features, labels, n_classes=k, name=f"blobs-n{n}-k{k}-d{dim}-s{seed}")


def _floor_count(fraction, n):
    # 1e-9 absolute nudge: split fractions arrive as binary floats (0.15 is
    # really 0.1499...), and floor must follow the decimal the user wrote.
    return int(math.floor(fraction * n + 1e-9))


def split(dataset, spec):
    """Seeded shuffle then contiguous train/val/test partition.

    Val and test sizes are floored; train absorbs the rounding remainder.
    """
    n = dataset.n_samples
    n_val = _floor_count(spec.val_fraction, n)
    n_test = _floor_count(spec.test_fraction, n)
    n_train = n - n_val - n_test
    if n_train < 1 or n_val < 1 or n_test < 1:
        raise ValueError(f"split of {n} samples leaves an empty part "
                         f"(train={n_train}, val={n_val}, test={n_test})")

    perm = np.random.default_rng(spec.seed).permutation(n)
    parts = (
        perm[:n_train],
        perm[n_train : n_train + n_val],
        perm[n_train + n_val :],
    )
    names = ("train", "val", "test")
    return tuple(
        Dataset(
            dataset.features[idx],
            dataset.labels[idx],
            dataset.n_classes,
            name=f"{dataset.name}:{part}",
        )
        for idx, part in zip(parts, names)
    )


def corrupt_gaussian(dataset, severity, seed):
    """Additive N(0, (0.2 * severity)^2) feature noise; labels untouched."""
    if int(severity) != severity or not 1 <= severity <= 5:
        raise ValueError("severity must be an integer in 1..5")
    sigma = 0.2 * severity
    rng = np.random.default_rng(seed)
    noisy = dataset.features + sigma * rng.standard_normal(dataset.features.shape)
    return Dataset(
        noisy,
        dataset.labels.copy(),
        dataset.n_classes,
        name=f"{dataset.name}:gauss{severity}",
    )


def save_csv(dataset, path):
    """Write ``f0,...,f{d-1},label`` rows, UTF-8, LF endings, repr floats."""
    header = ",".join([f"f{j}" for j in range(dataset.n_features)] + ["label"])
    lines = [header]
    for row, label in zip(dataset.features, dataset.labels):
        lines.append(",".join([repr(float(v)) for v in row] + [str(int(label))]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_csv(path, name=None):
    """Parse a dataset saved by :func:`save_csv`.

    n_classes is max(label) + 1. Raises FileNotFoundError for missing files,
    CsvParseError (with the 1-based data row) for malformed rows, and
    ValueError for non-finite features.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip() != ""]
    if not lines:
        raise CsvParseError(0, "empty file")
    header = lines[0].split(",")
    if header[-1] != "label" or any(
        h != f"f{j}" for j, h in enumerate(header[:-1])
    ):
        raise CsvParseError(0, f"bad header {lines[0]!r}")
    dim = len(header) - 1

    features = np.empty((len(lines) - 1, dim))
    labels = np.empty(len(lines) - 1, dtype=np.int64)
    for row, line in enumerate(lines[1:], start=1):
        cells = line.split(",")
        if len(cells) != dim + 1:
            raise CsvParseError(row, f"expected {dim + 1} cells, found {len(cells)}")
        try:
            features[row - 1] = [float(c) for c in cells[:-1]]
        except ValueError as exc:
            raise CsvParseError(row, str(exc)) from exc
        try:
            labels[row - 1] = int(cells[-1])
        except ValueError as exc:
            raise CsvParseError(row, f"label {cells[-1]!r} is not an integer") from exc
        if labels[row - 1] < 0:
            raise CsvParseError(row, f"label {cells[-1]!r} is negative")
    if not np.all(np.isfinite(features)):
        raise ValueError(f"{path}: non-finite feature values")
    return Dataset(
        features, labels, n_classes=int(labels.max()) + 1, name=name or str(path)
    )


def derived_dataset_seed(root_seed, purpose):
    """Convenience wrapper used by the pipeline; see :mod:`pcsearch.seeding`."""
    return derive_seed(root_seed, "data", purpose)
