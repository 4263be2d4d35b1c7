"""Blockwise feedforward classifier with manual backpropagation.

The network is a stack of M blocks: blocks 1..M-1 are affine + ReLU, block M
is the final affine (logit) layer. Blocks are the unit of checkpointing and
recombination, mirroring how deep nets decompose into a few coarse stages.

The SGD step, per batch, is

    g = dLoss/dw          (at the current weights)
    v = momentum * v + g
    w = (1 - lr * weight_decay) * w - lr * v

i.e. decoupled L2 decay applied with the step, to weights and biases alike.
"""

import copy as _copy
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDivergedError
from .metrics import PredictionSet, ece, error, nll
from .seeding import derive_seed
from .selection import PCRepresentation

LOSS_KINDS = ("cross_entropy", "brier", "label_smoothing", "focal", "flsd53")

__all__ = [
    "Architecture",
    "BlockwiseModel",
    "TrainConfig",
    "TrainLog",
    "EpochRecord",
    "LOSS_KINDS",
    "init_model",
    "forward",
    "predict_dataset",
    "train_loss",
    "train_epochs",
    "fine_tune_one_epoch",
    "assemble",
]


@dataclass(frozen=True)
class Architecture:
    """Input width, class count, and the M-1 hidden block widths."""

    n_features: int
    n_classes: int
    block_widths: tuple

    def __post_init__(self):
        object.__setattr__(self, "block_widths", tuple(int(w) for w in self.block_widths))
        if self.n_features < 1 or self.n_classes < 2:
            raise ValueError("need n_features >= 1 and n_classes >= 2")
        if len(self.block_widths) < 1 or any(w < 1 for w in self.block_widths):
            raise ValueError("need at least one hidden block, all widths >= 1")

    @property
    def n_blocks(self):
        return len(self.block_widths) + 1

    def block_dims(self):
        """(in, out) of each block's affine map."""
        sizes = [self.n_features, *self.block_widths, self.n_classes]
        return list(zip(sizes[:-1], sizes[1:]))


@dataclass
class BlockwiseModel:
    """Architecture plus one (W, b) pair per block."""

    arch: Architecture
    blocks: list

    def __post_init__(self):
        dims = self.arch.block_dims()
        if len(self.blocks) != len(dims):
            raise ValueError("block count does not match architecture")
        for idx, ((w, b), (d_in, d_out)) in enumerate(zip(self.blocks, dims)):
            if w.shape != (d_in, d_out) or b.shape != (d_out,):
                raise ValueError(f"block {idx} has shape {w.shape}, expected {(d_in, d_out)}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"block {idx} has non-finite parameters")

    def copy(self):
        return BlockwiseModel(self.arch, [(w.copy(), b.copy()) for w, b in self.blocks])


def init_model(arch, seed):
    """Glorot-uniform weights, zero biases; deterministic in seed."""
    rng = np.random.default_rng(seed)
    blocks = []
    for d_in, d_out in arch.block_dims():
        bound = np.sqrt(6.0 / (d_in + d_out))
        blocks.append((rng.uniform(-bound, bound, size=(d_in, d_out)), np.zeros(d_out)))
    return BlockwiseModel(arch, blocks)


def _forward_cached(model, x):
    """Activations of every block; returns (logits, per-block inputs, preacts)."""
    acts = [x]
    pres = []
    h = x
    last = len(model.blocks) - 1
    for idx, (w, b) in enumerate(model.blocks):
        pre = h @ w + b
        pres.append(pre)
        h = pre if idx == last else np.maximum(pre, 0.0)
        acts.append(h)
    return pres[-1], acts, pres


def forward(model, x):
    """(logits, row-softmax probs) for a feature batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.arch.n_features:
        raise ValueError(
            f"input width {x.shape[-1] if x.ndim == 2 else '?'} does not match "
            f"n_features={model.arch.n_features}"
        )
    logits, _, _ = _forward_cached(model, x)
    return logits, _softmax(logits)


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def predict_dataset(model, dataset):
    """PredictionSet (with logits) of the model on a dataset."""
    logits, probs = forward(model, dataset.features)
    return PredictionSet(probs, dataset.labels, logits=logits)


def _backward(model, acts, pres, dlogits):
    """Parameter gradients from dLoss/dlogits."""
    grads = [None] * len(model.blocks)
    delta = dlogits
    for idx in range(len(model.blocks) - 1, -1, -1):
        w, _ = model.blocks[idx]
        grads[idx] = (acts[idx].T @ delta, delta.sum(axis=0))
        if idx > 0:
            delta = (delta @ w.T) * (pres[idx - 1] > 0.0)
    return grads


def _focal_gammas(kind, p_true, focal_gamma):
    if kind == "focal":
        return np.full_like(p_true, float(focal_gamma))
    # flsd53: harder samples (low true-class confidence) get the larger gamma
    return np.where(p_true < 0.2, 5.0, 3.0)


def train_loss(probs, labels, kind, ls_alpha=0.05, focal_gamma=3.0):
    """Batch-mean training loss evaluated on row-normalized probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    n, n_classes = probs.shape
    p_true = probs[np.arange(n), labels]

    if kind == "cross_entropy":
        return float(np.mean(-np.log(p_true)))
    if kind == "brier":
        onehot = np.eye(n_classes)[labels]
        return float(np.mean(np.sum((probs - onehot) ** 2, axis=1)))
    if kind == "label_smoothing":
        q = np.full_like(probs, ls_alpha / n_classes)
        q[np.arange(n), labels] += 1.0 - ls_alpha
        return float(np.mean(-np.sum(q * np.log(probs), axis=1)))
    gammas = _focal_gammas(kind, p_true, focal_gamma)
    return float(np.mean((1.0 - p_true) ** gammas * -np.log(p_true)))


def _loss_and_grad(logits, labels, kind, ls_alpha, focal_gamma):
    """(batch-mean loss, dLoss/dlogits), numerically stable in the logits."""
    n, n_classes = logits.shape
    logp = _log_softmax(logits)
    probs = np.exp(logp)
    rows = np.arange(n)

    if kind == "cross_entropy":
        loss = float(np.mean(-logp[rows, labels]))
        grad = probs.copy()
        grad[rows, labels] -= 1.0
        return loss, grad / n

    if kind == "label_smoothing":
        q = np.full_like(probs, ls_alpha / n_classes)
        q[rows, labels] += 1.0 - ls_alpha
        loss = float(np.mean(-np.sum(q * logp, axis=1)))
        return loss, (probs - q) / n

    if kind == "brier":
        onehot = np.eye(n_classes)[labels]
        diff = probs - onehot
        loss = float(np.mean(np.sum(diff * diff, axis=1)))
        g = 2.0 * diff
        grad = probs * (g - np.sum(g * probs, axis=1, keepdims=True))
        return loss, grad / n

    # focal / flsd53
    p_true = probs[rows, labels]
    logp_true = logp[rows, labels]
    gammas = _focal_gammas(kind, p_true, focal_gamma)
    one_minus = 1.0 - p_true
    loss = float(np.mean(one_minus**gammas * -logp_true))
    coeff = gammas * one_minus ** (gammas - 1.0) * logp_true - one_minus**gammas / p_true
    grad = coeff[:, None] * (-p_true[:, None] * probs)
    grad[rows, labels] += coeff * p_true
    return loss, grad / n


@dataclass(frozen=True)
class TrainConfig:
    """Epoch budget, stepwise LR schedule, SGD settings, loss choice, seed."""

    epochs: int
    lr_schedule: tuple = ((0, 0.1),)
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    loss_kind: str = "cross_entropy"
    ls_alpha: float = 0.05
    focal_gamma: float = 3.0
    seed: int = 1

    def __post_init__(self):
        object.__setattr__(
            self, "lr_schedule", tuple((int(e), float(lr)) for e, lr in self.lr_schedule)
        )
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        starts = [e for e, _ in self.lr_schedule]
        if not starts or starts[0] != 0 or sorted(set(starts)) != starts:
            raise ValueError("lr schedule must start at epoch 0 and strictly increase")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0 or self.batch_size < 1:
            raise ValueError("need weight_decay >= 0 and batch_size >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")

    def lr_at(self, epoch0):
        """LR for a 0-based epoch index."""
        current = self.lr_schedule[0][1]
        for start, lr in self.lr_schedule:
            if epoch0 >= start:
                current = lr
        return current


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_error: float
    val_ece: float


@dataclass
class TrainLog:
    """Per-epoch training trace plus the epochs that were checkpointed."""

    records: list
    checkpoint_epochs: list = field(default_factory=list)

    def series(self, criterion):
        key = {"loss": "val_loss", "error": "val_error", "ece": "val_ece"}[criterion]
        return np.array([getattr(r, key) for r in self.records])


def _sgd_step(model, grads, velocity, lr, momentum, weight_decay):
    decay = 1.0 - lr * weight_decay
    for idx, ((w, b), (gw, gb)) in enumerate(zip(model.blocks, grads)):
        vw, vb = velocity[idx]
        vw *= momentum
        vw += gw
        vb *= momentum
        vb += gb
        model.blocks[idx] = (decay * w - lr * vw, decay * b - lr * vb)


def _run_epoch(model, features, labels, order, lr, cfg, velocity, epoch):
    total = 0.0
    for start in range(0, order.size, cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        logits, acts, pres = _forward_cached(model, features[idx])
        loss, dlogits = _loss_and_grad(
            logits, labels[idx], cfg.loss_kind, cfg.ls_alpha, cfg.focal_gamma
        )
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch)
        total += loss * idx.size
        grads = _backward(model, acts, pres, dlogits)
        _sgd_step(model, grads, velocity, lr, cfg.momentum, cfg.weight_decay)
    # weights can overflow on the epoch's last step with the loss still finite
    if not all(
        np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in model.blocks
    ):
        raise TrainingDivergedError(epoch)
    return total / order.size


def train_epochs(model, train, val, cfg, store=None):
    """SGD-train the model in place for cfg.epochs; returns the TrainLog.

    The shuffle order of epoch t comes from seed hash(cfg.seed, "shuffle", t).
    After each epoch in the store's candidate set, every block is persisted.
    """
    if train.n_features != model.arch.n_features:
        raise ValueError("training data width does not match the model")
    if train.n_classes > model.arch.n_classes:
        raise ValueError("more classes in the data than model outputs")

    snapshot_epochs = set(store.candidate_epochs) if store is not None else set()
    velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in model.blocks]
    records = []
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch - 1)
        order = np.random.default_rng(
            derive_seed(cfg.seed, "shuffle", epoch)
        ).permutation(train.n_samples)
        mean_loss = _run_epoch(
            model, train.features, train.labels, order, lr, cfg, velocity, epoch
        )
        logits, probs = forward(model, val.features)
        if not np.all(np.isfinite(probs)):
            raise TrainingDivergedError(epoch)
        pred = PredictionSet(probs, val.labels, logits=logits)
        records.append(
            EpochRecord(
                epoch=epoch,
                train_loss=mean_loss,
                val_loss=nll(pred),
                val_error=error(pred),
                val_ece=ece(pred),
            )
        )
        if epoch in snapshot_epochs:
            candidate = store.candidate_index(epoch)
            for block, weights in enumerate(model.blocks):
                store.put_block(block, candidate, weights)
    return TrainLog(records, checkpoint_epochs=sorted(snapshot_epochs))


def fine_tune_one_epoch(
    model, train, lr, seed, momentum=0.9, weight_decay=5e-4, batch_size=128
):
    """One cross-entropy epoch with fresh optimizer state; returns a new model."""
    if lr < 0:
        raise ValueError("fine-tune lr must be nonnegative")
    tuned = model.copy()
    cfg = TrainConfig(
        epochs=1,
        lr_schedule=((0, lr),),
        momentum=momentum,
        weight_decay=weight_decay,
        batch_size=batch_size,
        loss_kind="cross_entropy",
        seed=seed,
    )
    velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in tuned.blocks]
    order = np.random.default_rng(derive_seed(seed, "shuffle", 1)).permutation(
        train.n_samples
    )
    _run_epoch(tuned, train.features, train.labels, order, lr, cfg, velocity, epoch=1)
    return tuned


def assemble(store, pc):
    """Model whose block i carries the stored weights of pc's candidate i.

    Stored f32 values are widened to f64 exactly; the store is not mutated.
    """
    if not isinstance(pc, PCRepresentation) or pc.mode != "discrete":
        raise ValueError("assemble needs a discrete combination")
    if pc.n_blocks != store.m or pc.n_candidates != store.k:
        raise ValueError(
            f"combination shape {pc.rows.shape} does not match store "
            f"({store.m} blocks x {store.k} candidates)"
        )
    blocks = []
    for block, candidate in enumerate(pc.candidate_indices()):
        w, b = store.get_block(block, int(candidate))
        blocks.append((w.astype(np.float64), b.astype(np.float64)))
    return BlockwiseModel(store.arch, blocks)
