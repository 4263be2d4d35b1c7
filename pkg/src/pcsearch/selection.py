"""Predecessor-combination representations and their relaxation.

A combination picks one stored predecessor (candidate column) per network
block (row). The discrete form is a one-hot matrix; the relaxed form is a
row-stochastic matrix obtained with the Gumbel-Softmax trick, which is what
makes the selection parameters trainable by gradient descent.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PCRepresentation",
    "SelectionParams",
    "harden",
    "gumbel_relax",
    "to_discrete",
    "gumbel_jacobian",
    "chain_through_gumbel",
    "update_selection",
]


@dataclass(frozen=True)
class PCRepresentation:
    """[M x K] selection matrix, either one-hot ("discrete") or simplex rows
    ("relaxed")."""

    rows: np.ndarray
    mode: str

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
            raise ValueError("rows must be a nonempty [M x K] matrix")
        if self.mode == "discrete":
            if not np.all(np.isin(rows, (0.0, 1.0))) or np.any(rows.sum(axis=1) != 1.0):
                raise ValueError("discrete rows must be one-hot")
        elif self.mode == "relaxed":
            if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-9):
                raise ValueError("relaxed rows must be on the simplex")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "rows", rows)

    @property
    def n_blocks(self):
        return self.rows.shape[0]

    @property
    def n_candidates(self):
        return self.rows.shape[1]

    def candidate_indices(self):
        """Per-block argmax, first index on ties."""
        return self.rows.argmax(axis=1)


@dataclass
class SelectionParams:
    """Trainable selection logits plus the step and objective settings."""

    a: np.ndarray
    eta: float = 1.0
    lam: float = 50.0
    gumbel_tau: float = 1.0

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        if not np.all(np.isfinite(self.a)):
            raise ValueError("selection parameters must be finite")
        if self.eta <= 0 or self.gumbel_tau <= 0 or self.lam < 0:
            raise ValueError("need eta > 0, gumbel_tau > 0, lam >= 0")

    @classmethod
    def uniform(cls, n_blocks, n_candidates, **kwargs):
        """All-zero logits: every candidate equally likely before search."""
        return cls(np.zeros((n_blocks, n_candidates)), **kwargs)


def harden(a):
    """One-hot of per-row argmax (first index on ties)."""
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("selection parameters must be finite")
    rows = np.zeros_like(a)
    rows[np.arange(a.shape[0]), a.argmax(axis=1)] = 1.0
    return PCRepresentation(rows, "discrete")


def sample_gumbel(shape, rng):
    """i.i.d. Gumbel(0, 1): -log(-log u) with u drawn from the open (0, 1)."""
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return -np.log(-np.log(u))


def gumbel_relax(a, tau, rng=None, noise=None):
    """Row-wise softmax((a + g) / tau) with Gumbel noise g.

    ``noise`` overrides the sampled g (e.g. zeros for a deterministic
    softmax); otherwise ``rng`` must be given.
    """
    a = np.asarray(a, dtype=np.float64)
    if tau <= 0:
        raise ValueError("gumbel temperature must be positive")
    if noise is None:
        if rng is None:
            raise ValueError("need an rng when noise is not supplied")
        noise = sample_gumbel(a.shape, rng)
    z = (a + noise) / tau
    z -= z.max(axis=1, keepdims=True)
    expz = np.exp(z)
    return PCRepresentation(expz / expz.sum(axis=1, keepdims=True), "relaxed")


def to_discrete(relaxed):
    """Harden a relaxed combination by per-row argmax."""
    return harden(relaxed.rows)


def gumbel_jacobian(relaxed, tau):
    """d(relaxed row)/d(logits row) for each row: (diag(r) - r r^T) / tau.

    Returns an [M x K x K] stack; each slice's rows sum to zero (simplex
    tangency).
    """
    rows = relaxed.rows
    m, k = rows.shape
    jac = np.empty((m, k, k))
    for i in range(m):
        r = rows[i]
        jac[i] = (np.diag(r) - np.outer(r, r)) / tau
    return jac


def chain_through_gumbel(relaxed, grad_rows, tau):
    """Pull a gradient w.r.t. relaxed rows back to the selection logits.

    Uses the Gumbel-Softmax Jacobian row by row; the Jacobian is symmetric
    so this is r * (g - (g . r)) / tau per row.
    """
    rows = relaxed.rows
    grad_rows = np.asarray(grad_rows, dtype=np.float64)
    if grad_rows.shape != rows.shape:
        raise ValueError("gradient shape must match the relaxed rows")
    inner = np.sum(grad_rows * rows, axis=1, keepdims=True)
    return rows * (grad_rows - inner) / tau


def update_selection(a, grad_a, eta):
    """One gradient step on the selection logits: a - eta * grad_a."""
    a = np.asarray(a, dtype=np.float64)
    grad_a = np.asarray(grad_a, dtype=np.float64)
    if grad_a.shape != a.shape:
        raise ValueError("gradient shape must match selection parameters")
    if not np.all(np.isfinite(grad_a)):
        raise ValueError("non-finite selection gradient")
    return a - eta * grad_a


def anneal_tau(tau_start, step, total_steps, tau_end=0.1):
    """Linear temperature schedule from tau_start to tau_end over the search."""
    if total_steps <= 1:
        return tau_start
    frac = (step - 1) / (total_steps - 1)
    return tau_start + (tau_end - tau_start) * frac
