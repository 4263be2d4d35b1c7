"""Trainable performance estimator for relaxed predecessor combinations.

A one-layer LSTM consumes the M rows of a relaxed [M x K] combination as a
length-M sequence; a linear head maps the final hidden state to the two
predicted targets (classification error, ECE). Forward, backpropagation
through time, parameter updates and input gradients are all implemented
here in plain numpy so the same code path serves training (gradients w.r.t.
parameters) and the selection update (gradients w.r.t. inputs).
"""

import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SurrogateEstimator",
    "Memory",
    "MemoryEntry",
    "init_estimator",
    "predict",
    "train_estimator",
    "input_gradient",
    "save_estimator",
    "load_estimator",
]

_GATES = ("f", "i", "o", "g")
_PARAM_ORDER = ("w_f", "w_i", "w_o", "w_g", "b_f", "b_i", "b_o", "b_g", "w_head", "b_head")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class SurrogateEstimator:
    """LSTM-over-rows regressor from [M x K] combinations to two targets."""

    input_size: int
    hidden_size: int
    params: dict

    def clone(self):
        return SurrogateEstimator(
            self.input_size,
            self.hidden_size,
            {k: v.copy() for k, v in self.params.items()},
        )

    # thin object-style aliases for the module-level operations
    def predict(self, rows):
        return predict(self, rows)

    def input_gradient(self, rows, lam):
        return input_gradient(self, rows, lam)


def init_estimator(n_candidates, hidden_size, seed):
    """Uniform(+-1/sqrt(d)) weights; forget-gate bias 1, other biases 0."""
    if n_candidates < 1 or hidden_size < 1:
        raise ValueError("need positive input and hidden sizes")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(hidden_size)
    params = {}
    for gate in _GATES:
        params[f"w_{gate}"] = rng.uniform(
            -bound, bound, size=(n_candidates + hidden_size, hidden_size)
        )
    params["b_f"] = np.ones(hidden_size)
    for gate in ("i", "o", "g"):
        params[f"b_{gate}"] = np.zeros(hidden_size)
    params["w_head"] = rng.uniform(-bound, bound, size=(hidden_size, 2))
    params["b_head"] = np.zeros(2)
    return SurrogateEstimator(n_candidates, hidden_size, params)


def _forward(est, inputs):
    """Run the recurrence over [B x M x K] inputs.

    Returns (outputs [B x 2], caches) where caches hold everything the
    backward pass needs.
    """
    p = est.params
    batch, steps, width = inputs.shape
    if width != est.input_size:
        raise ValueError(
            f"input width {width} does not match estimator input size {est.input_size}"
        )
    h = np.zeros((batch, est.hidden_size))
    c = np.zeros((batch, est.hidden_size))
    caches = []
    for t in range(steps):
        z = np.concatenate([inputs[:, t, :], h], axis=1)
        f = _sigmoid(z @ p["w_f"] + p["b_f"])
        i = _sigmoid(z @ p["w_i"] + p["b_i"])
        o = _sigmoid(z @ p["w_o"] + p["b_o"])
        g = np.tanh(z @ p["w_g"] + p["b_g"])
        c_next = f * c + i * g
        tc = np.tanh(c_next)
        caches.append({"z": z, "f": f, "i": i, "o": o, "g": g, "c_prev": c, "tc": tc})
        h = o * tc
        c = c_next
    outputs = h @ p["w_head"] + p["b_head"]
    return outputs, (caches, h)


def _backward(est, inputs, caches, final_h, d_out):
    """BPTT for upstream gradient d_out [B x 2].

    Returns (param_grads, input_grads [B x M x K]).
    """
    p = est.params
    batch, steps, width = inputs.shape
    grads = {key: np.zeros_like(value) for key, value in p.items()}
    d_inputs = np.zeros_like(inputs)

    grads["w_head"] = final_h.T @ d_out
    grads["b_head"] = d_out.sum(axis=0)
    dh = d_out @ p["w_head"].T
    dc = np.zeros((batch, est.hidden_size))

    for t in range(steps - 1, -1, -1):
        cache = caches[t]
        f, i, o, g, tc = cache["f"], cache["i"], cache["o"], cache["g"], cache["tc"]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        df = dc * cache["c_prev"]
        di = dc * g
        dg = dc * i
        dc = dc * f  # becomes dc_prev for the next iteration

        da = {
            "f": df * f * (1.0 - f),
            "i": di * i * (1.0 - i),
            "o": do * o * (1.0 - o),
            "g": dg * (1.0 - g * g),
        }
        z = cache["z"]
        dz = np.zeros_like(z)
        for gate in _GATES:
            grads[f"w_{gate}"] += z.T @ da[gate]
            grads[f"b_{gate}"] += da[gate].sum(axis=0)
            dz += da[gate] @ p[f"w_{gate}"].T
        d_inputs[:, t, :] = dz[:, :width]
        dh = dz[:, width:]
    return grads, d_inputs


def predict(est, rows):
    """Predicted (error, ece) for one [M x K] combination."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError("expected a single [M x K] combination")
    if not np.all(np.isfinite(rows)):
        raise ValueError("combination contains non-finite entries")
    outputs, _ = _forward(est, rows[None, :, :])
    return float(outputs[0, 0]), float(outputs[0, 1])


def input_gradient(est, rows, lam):
    """Gradient of predicted (error + lam * ece) w.r.t. every input entry."""
    rows = np.asarray(rows, dtype=np.float64)
    inputs = rows[None, :, :]
    outputs, (caches, final_h) = _forward(est, inputs)
    d_out = np.array([[1.0, float(lam)]])
    _, d_inputs = _backward(est, inputs, caches, final_h, d_out)
    grad = d_inputs[0]
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite input gradient")
    return grad


def train_estimator(est, entries, gamma, steps, lr):
    """Full-batch Adam on the weighted squared error.

    Loss per entry is (err_hat - err)^2 + gamma * (ece_hat - ece)^2, averaged
    over the batch. Plain gradient descent stalls far short of usable fits
    within a couple hundred steps on this recurrent model, so Adam
    (beta1=0.9, beta2=0.999) drives the updates. The estimator is updated in
    place; the per-step loss trace is returned.
    """
    entries = list(entries)
    if not entries:
        raise ValueError("cannot train on an empty batch")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    inputs = np.stack([np.asarray(e.rows, dtype=np.float64) for e in entries])
    targets = np.array([[e.err, e.ece] for e in entries])
    weights = np.array([1.0, float(gamma)])
    batch = len(entries)

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    first = {key: np.zeros_like(value) for key, value in est.params.items()}
    second = {key: np.zeros_like(value) for key, value in est.params.items()}

    trace = []
    for step in range(1, steps + 1):
        outputs, (caches, final_h) = _forward(est, inputs)
        diff = outputs - targets
        loss = float(np.mean(np.sum(weights * diff * diff, axis=1)))
        if not np.isfinite(loss):
            raise ValueError("non-finite estimator loss")
        trace.append(loss)
        d_out = 2.0 * weights * diff / batch
        grads, _ = _backward(est, inputs, caches, final_h, d_out)
        for key in est.params:
            first[key] = beta1 * first[key] + (1 - beta1) * grads[key]
            second[key] = beta2 * second[key] + (1 - beta2) * grads[key] ** 2
            m_hat = first[key] / (1 - beta1**step)
            v_hat = second[key] / (1 - beta2**step)
            est.params[key] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return trace


def estimator_loss(est, entries, gamma):
    """Current weighted MSE of the estimator on a batch (no update)."""
    entries = list(entries)
    inputs = np.stack([np.asarray(e.rows, dtype=np.float64) for e in entries])
    targets = np.array([[e.err, e.ece] for e in entries])
    outputs, _ = _forward(est, inputs)
    diff = outputs - targets
    return float(np.mean(diff[:, 0] ** 2 + gamma * diff[:, 1] ** 2))


@dataclass(frozen=True)
class MemoryEntry:
    """One evaluated combination: relaxed rows and its measured targets."""

    rows: np.ndarray
    err: float
    ece: float


class Memory:
    """Bounded FIFO of evaluated combinations (oldest evicted first)."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._entries = deque(maxlen=capacity)

    def push(self, entry):
        self._entries.append(entry)

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def entries(self):
        return list(self._entries)


def _encode_array(arr):
    arr32 = np.ascontiguousarray(arr, dtype="<f4")
    header = struct.pack("<I", arr32.ndim) + struct.pack(
        f"<{arr32.ndim}I", *arr32.shape
    )
    return header + arr32.tobytes()


def _decode_array(buf, offset):
    (rank,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    shape = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    count = int(np.prod(shape)) if rank else 1
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(shape)
    offset += 4 * count
    return arr.astype(np.float64), offset


def save_estimator(est, path):
    """Serialize parameters as f32 blobs (same framing as checkpoint files)."""
    chunks = [struct.pack("<I", len(_PARAM_ORDER))]
    for key in _PARAM_ORDER:
        chunks.append(_encode_array(est.params[key]))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_estimator(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    (count,) = struct.unpack_from("<I", buf, 0)
    if count != len(_PARAM_ORDER):
        raise ValueError(f"expected {len(_PARAM_ORDER)} parameter arrays, found {count}")
    offset = 4
    params = {}
    for key in _PARAM_ORDER:
        params[key], offset = _decode_array(buf, offset)
    hidden = params["b_f"].shape[0]
    input_size = params["w_f"].shape[0] - hidden
    return SurrogateEstimator(input_size, hidden, params)
