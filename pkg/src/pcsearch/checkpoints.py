"""Per-block weight snapshots at sampled epochs, and the samplers that pick
those epochs.

On-disk layout under one run directory:

* ``manifest`` -- magic ``PCS1``, version u32, sha256 of the architecture
  (32 bytes), T_train u32, K u32, then the K sorted candidate epochs as u32;
  all integers little-endian.
* ``b<block>_c<candidate>.w`` -- one file per slot holding the block's
  affine map as a single (in+1) x out f32 array (bias in the last row):
  rank u32, dims u32[], then the row-major little-endian payload.

Files are written to a temp name and atomically renamed, so concurrent
readers never observe partial writes. Weights are stored as f32; round-trips
are bit-exact on that payload.
"""

import hashlib
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DuplicateWriteError,
    MissingCheckpointError,
    SealedStoreError,
    StoreFormatError,
)

MAGIC = b"PCS1"
VERSION = 1

__all__ = [
    "CheckpointStore",
    "SamplingStrategy",
    "sample_epochs",
    "arch_digest",
]


def arch_digest(arch):
    """sha256 over the architecture's shape signature."""
    text = "blockwise-mlp|in={}|classes={}|widths={}".format(
        arch.n_features, arch.n_classes, ",".join(str(w) for w in arch.block_widths)
    )
    return hashlib.sha256(text.encode("ascii")).digest()


@dataclass(frozen=True)
class SamplingStrategy:
    """Which epochs to snapshot.

    variant: one of full, random, uniform, laplace, piecewise_laplace.
    scale: Laplace spread b; 0 means the default T_train / 10.
    schedule_points: extra Laplace centers (the LR-drop epochs) for the
    piecewise variant.
    """

    variant: str
    scale: float = 0.0
    schedule_points: tuple = ()

    _VARIANTS = ("full", "random", "uniform", "laplace", "piecewise_laplace")

    def __post_init__(self):
        if self.variant not in self._VARIANTS:
            raise ValueError(f"unknown sampling variant {self.variant!r}")
        if self.scale < 0:
            raise ValueError("laplace scale must be positive (or 0 for default)")
        object.__setattr__(self, "schedule_points", tuple(self.schedule_points))


def sample_epochs(strategy, k, t_train, seed):
    """K distinct epochs in [1, t_train], sorted ascending."""
    if k < 1:
        raise ValueError("k must be positive")
    if k > t_train:
        raise ValueError(f"cannot sample {k} distinct epochs from 1..{t_train}")

    if strategy.variant == "full":
        if k != t_train:
            raise ValueError("full sampling requires k == t_train")
        return list(range(1, t_train + 1))

    if strategy.variant == "uniform":
        epochs = []
        for j in range(1, k + 1):
            epoch = int(round(j * t_train / k))
            epoch = min(max(epoch, 1), t_train)
            while epoch in epochs:  # collisions bump upward
                epoch += 1
            epochs.append(epoch)
        return sorted(epochs)

    rng = np.random.default_rng(seed)
    if strategy.variant == "random":
        chosen = rng.choice(np.arange(1, t_train + 1), size=k, replace=False)
        return sorted(int(e) for e in chosen)

    scale = strategy.scale if strategy.scale > 0 else t_train / 10.0
    if strategy.variant == "laplace":
        centers = [0.0]
    else:
        centers = [0.0] + [float(c) for c in strategy.schedule_points]

    chosen = set()
    i = 0
    while len(chosen) < k:
        center = centers[i % len(centers)]
        i += 1
        draw = rng.laplace(0.0, scale)
        epoch = int(round(center + abs(draw) if center == 0.0 else center + draw))
        epoch = min(max(epoch, 1), t_train)
        chosen.add(epoch)
    return sorted(chosen)


def _encode_array(arr):
    arr32 = np.ascontiguousarray(arr, dtype="<f4")
    header = struct.pack("<I", arr32.ndim) + struct.pack(f"<{arr32.ndim}I", *arr32.shape)
    return header + arr32.tobytes()


def _decode_array(buf):
    (rank,) = struct.unpack_from("<I", buf, 0)
    offset = 4
    shape = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    count = int(np.prod(shape)) if rank else 1
    if len(buf) != offset + 4 * count:
        raise StoreFormatError("weight blob has a truncated or oversized payload")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(shape)


@dataclass
class CheckpointStore:
    """Sampled per-block predecessors, keyed by (block index, candidate index).

    Create one in write mode during training (``create``), seal it, then any
    number of readers can ``open`` the directory concurrently.
    """

    path: str
    arch: object
    t_train: int
    candidate_epochs: list
    sealed: bool = False
    _written: set = field(default_factory=set)

    @property
    def k(self):
        return len(self.candidate_epochs)

    @property
    def m(self):
        return len(self.arch.block_widths) + 1

    @classmethod
    def create(cls, path, arch, t_train, candidate_epochs):
        epochs = [int(e) for e in candidate_epochs]
        if len(set(epochs)) != len(epochs):
            raise ValueError("candidate epochs must be distinct")
        if any(not 1 <= e <= t_train for e in epochs):
            raise ValueError("candidate epochs must lie in [1, t_train]")
        epochs = sorted(epochs)
        os.makedirs(path, exist_ok=True)
        manifest = os.path.join(path, "manifest")
        if os.path.exists(manifest):
            raise DuplicateWriteError(f"store already exists at {path}")
        payload = (
            MAGIC
            + struct.pack("<I", VERSION)
            + arch_digest(arch)
            + struct.pack("<II", t_train, len(epochs))
            + struct.pack(f"<{len(epochs)}I", *epochs)
        )
        _atomic_write(manifest, payload)
        return cls(path=str(path), arch=arch, t_train=t_train, candidate_epochs=epochs)

    @classmethod
    def open(cls, path):
        """Open a completed store read-only, reconstructing the architecture
        from the stored blobs and checking it against the manifest digest."""
        from .net import Architecture

        manifest = os.path.join(path, "manifest")
        if not os.path.exists(manifest):
            raise StoreFormatError(f"missing checkpoint manifest in {path!r}")
        with open(manifest, "rb") as fh:
            buf = fh.read()
        if buf[:4] != MAGIC:
            raise StoreFormatError("bad manifest magic")
        (version,) = struct.unpack_from("<I", buf, 4)
        if version != VERSION:
            raise StoreFormatError(f"unsupported store version {version}")
        digest = buf[8:40]
        t_train, k = struct.unpack_from("<II", buf, 40)
        epochs = list(struct.unpack_from(f"<{k}I", buf, 48))

        # block files for candidate 0 tell us the block count and shapes
        shapes = []
        block = 0
        while True:
            blob = os.path.join(path, f"b{block}_c0.w")
            if not os.path.exists(blob):
                break
            with open(blob, "rb") as fh:
                shapes.append(_decode_array(fh.read()).shape)
            block += 1
        if not shapes:
            raise StoreFormatError(f"no block files found in {path!r}")
        widths = [shape[1] for shape in shapes]
        try:
            arch = Architecture(
                n_features=shapes[0][0] - 1,
                n_classes=widths[-1],
                block_widths=widths[:-1],
            )
        except ValueError as exc:
            raise StoreFormatError(
                f"block files do not form a valid architecture: {exc}"
            ) from exc
        if arch_digest(arch) != digest:
            raise StoreFormatError("architecture digest mismatch")

        store = cls(
            path=str(path),
            arch=arch,
            t_train=t_train,
            candidate_epochs=epochs,
            sealed=True,
        )
        store._check_complete()
        return store

    def _slot_path(self, block, candidate):
        return os.path.join(self.path, f"b{block}_c{candidate}.w")

    def _check_indices(self, block, candidate):
        if not 0 <= block < self.m:
            raise ValueError(f"block index {block} out of range 0..{self.m - 1}")
        if not 0 <= candidate < self.k:
            raise ValueError(f"candidate index {candidate} out of range 0..{self.k - 1}")

    def _check_complete(self):
        for block in range(self.m):
            for candidate in range(self.k):
                if not os.path.exists(self._slot_path(block, candidate)):
                    raise StoreFormatError(
                        f"store incomplete: missing block {block} candidate {candidate}"
                    )

    def candidate_index(self, epoch):
        try:
            return self.candidate_epochs.index(int(epoch))
        except ValueError:
            raise MissingCheckpointError(
                f"epoch {epoch} not among candidate epochs {self.candidate_epochs}"
            ) from None

    def put_block(self, block, candidate, weights):
        """Persist one block's (W, b) for one candidate; overwrite forbidden."""
        if self.sealed:
            raise SealedStoreError("store is sealed")
        self._check_indices(block, candidate)
        if (block, candidate) in self._written or os.path.exists(
            self._slot_path(block, candidate)
        ):
            raise DuplicateWriteError(
                f"block {block} candidate {candidate} already written"
            )
        w, b = weights
        augmented = np.vstack([np.asarray(w, dtype=np.float64), np.asarray(b)[None, :]])
        _atomic_write(self._slot_path(block, candidate), _encode_array(augmented))
        self._written.add((block, candidate))

    def get_block(self, block, candidate):
        """(W, b) as stored, float32, exactly the persisted bytes."""
        self._check_indices(block, candidate)
        path = self._slot_path(block, candidate)
        if not os.path.exists(path):
            raise MissingCheckpointError(
                f"no checkpoint for block {block} candidate {candidate}"
            )
        with open(path, "rb") as fh:
            augmented = _decode_array(fh.read())
        return augmented[:-1, :].copy(), augmented[-1, :].copy()

    def seal(self):
        """Verify completeness and freeze the store against further writes."""
        self._check_complete()
        self.sealed = True


def _atomic_write(path, payload):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)
