"""Fully connected ReLU classifier with manual backprop, SGD/Adam, training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .losses import LossConfig, combined_loss, objective

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, detail: str = ""):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}{': ' + detail if detail else ''}")


@dataclass
class MlpModel:
    """Weights are stored ``(fan_in, fan_out)`` so a layer computes ``x @ W + b``."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("number of layers does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[i], self.layer_dims[i + 1]) or b.shape != (self.layer_dims[i + 1],):
                raise ValueError(f"layer {i} parameter shapes do not chain with layer_dims")

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(list(self.layer_dims), [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def logits(self, x) -> np.ndarray:
        return forward(self, x)[0]


def init(layer_dims, seed: int) -> MlpModel:
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ValueError(f"invalid layer_dims {layer_dims!r}")
    rng = np.random.default_rng(seed)
    weights = [rng.standard_normal((a, b)) / math.sqrt(a) for a, b in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(b) for b in dims[1:]]
    return MlpModel(dims, weights, biases)


def forward(m: MlpModel, x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Logits and the per-layer inputs needed by :func:`backward`."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != m.layer_dims[0]:
        raise ValueError(f"expected input of shape (n, {m.layer_dims[0]}), got {h.shape}")
    cache = []
    last = len(m.weights) - 1
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        cache.append(h)
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h, cache


def backward(m: MlpModel, cache, grad_logits) -> list[np.ndarray]:
    """Parameter gradients in the order of :meth:`MlpModel.params`."""
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape != (cache[0].shape[0], m.n_classes):
        raise ValueError("grad_logits shape does not match the cached forward pass")
    grads: list[np.ndarray] = [None] * (2 * len(m.weights))  # type: ignore[list-item]
    for i in range(len(m.weights) - 1, -1, -1):
        h_in = cache[i]
        grads[2 * i] = h_in.T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            # cache[i] is the post-ReLU activation of layer i-1
            g = (g @ m.weights[i].T) * (h_in > 0.0)
    return grads


@dataclass
class OptimizerState:
    kind: str = "sgd"
    learning_rate: float = 0.05
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first: list[np.ndarray] = field(default_factory=list)
    second: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.momentum < 0:
            raise ValueError("momentum must be >= 0")

    def config(self) -> dict:
        if self.kind == "sgd":
            return {"kind": "sgd", "lr": self.learning_rate, "momentum": self.momentum}
        return {"kind": "adam", "lr": self.learning_rate, "beta1": self.beta1,
                "beta2": self.beta2, "epsilon": self.epsilon}

    def apply(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update ``params`` in place."""
        if not self.first:
            self.first = [np.zeros_like(p) for p in params]
            if self.kind == "adam":
                self.second = [np.zeros_like(p) for p in params]
        self.step_count += 1
        lr = self.learning_rate
        if self.kind == "sgd":
            for p, g, v in zip(params, grads, self.first):
                v *= self.momentum
                v += g
                p -= lr * v
            return
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.first, self.second):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


@dataclass(frozen=True)
class TrainRecord:
    epoch: int
    objective: float
    in_loss: float
    out_loss: float
    train_accuracy: float


def _batch_plan(n_in: int, n_out: int, batch_size: int, rng) -> list[tuple[np.ndarray, np.ndarray]]:
    # The larger set is covered once; the smaller one is cycled through fresh
    # permutations so every step gets one batch of each.
    n_steps = math.ceil(max(n_in, n_out) / batch_size)

    def stream(n: int, sizes: list[int]) -> list[np.ndarray]:
        if n == 0:
            return [np.zeros(0, dtype=np.int64) for _ in sizes]
        need = sum(sizes)
        idx = np.concatenate([rng.permutation(n) for _ in range(math.ceil(need / n))])[:need]
        return np.split(idx, np.cumsum(sizes)[:-1])

    big = max(n_in, n_out)
    sizes = [min(batch_size, big - s * batch_size) for s in range(n_steps)]
    return list(zip(stream(n_in, sizes), stream(n_out, sizes)))


def accuracy(m: MlpModel, x, y) -> float:
    return float(np.mean(np.argmax(m.logits(x), axis=1) == y))


def train(
    model: MlpModel,
    in_x,
    in_y,
    out_x,
    cfg: LossConfig,
    opt: OptimizerState,
    epochs: int,
    batch_size: int,
    seed: int,
) -> tuple[MlpModel, list[TrainRecord]]:
    """Minimise ``L_in + gamma * L_out`` with minibatch steps.

    Returns a trained copy; ``model`` is not modified. Each step pairs one
    in-domain minibatch with one OOD minibatch.
    """
    in_x = np.asarray(in_x, dtype=np.float64)
    in_y = np.asarray(in_y, dtype=np.int64)
    out_x = np.asarray(out_x, dtype=np.float64).reshape(-1, model.layer_dims[0])
    if in_x.shape[0] == 0:
        raise ValueError("in-domain training data is empty")
    if out_x.shape[0] == 0 and cfg.family != "cross_entropy":
        raise ValueError(f"family {cfg.family!r} requires OOD training data")
    if batch_size <= 0 or epochs < 0:
        raise ValueError("batch_size must be > 0 and epochs >= 0")

    m = model.copy()
    rng = np.random.default_rng(seed)
    n_in = in_x.shape[0]
    n_out = out_x.shape[0] if cfg.family != "cross_entropy" else 0
    records = []
    for epoch in range(1, epochs + 1):
        tot_obj = tot_in = tot_out = 0.0
        plan = _batch_plan(n_in, n_out, batch_size, rng)
        for idx_in, idx_out in plan:
            nb_in = idx_in.shape[0]
            x = np.concatenate([in_x[idx_in], out_x[idx_out]]) if n_out else in_x[idx_in]
            z, cache = forward(m, x)
            if not np.all(np.isfinite(z)):
                raise TrainingDiverged(epoch, "logits became non-finite")
            r_in, r_out = combined_loss(z[:nb_in], in_y[idx_in], z[nb_in:], cfg)
            obj = objective(r_in, r_out, cfg)
            if not math.isfinite(obj):
                raise TrainingDiverged(epoch, f"in_loss={r_in.loss}, out_loss={r_out.loss}")
            g = np.concatenate([r_in.grad_logits, r_out.grad_logits]) if n_out else r_in.grad_logits
            opt.apply(m.params(), backward(m, cache, g))
            tot_obj += obj
            tot_in += r_in.loss
            tot_out += r_out.loss
        steps = len(plan)
        rec = TrainRecord(epoch, tot_obj / steps, tot_in / steps, tot_out / steps, accuracy(m, in_x, in_y))
        if not all(np.isfinite(p).all() for p in m.params()):
            raise TrainingDiverged(epoch, "parameters became non-finite")
        records.append(rec)
        if epoch % 100 == 0:
            log.debug("epoch %d objective %.5f acc %.3f", epoch, rec.objective, rec.train_accuracy)
    return m, records


# --- checkpoints -------------------------------------------------------------


def to_checkpoint(m: MlpModel, **extra) -> dict:
    doc = {
        "layer_dims": list(m.layer_dims),
        "weights": [w.tolist() for w in m.weights],
        "biases": [b.tolist() for b in m.biases],
    }
    doc.update(extra)
    return doc


def from_checkpoint(doc: dict) -> MlpModel:
    try:
        dims = [int(d) for d in doc["layer_dims"]]
        weights = [np.array(w, dtype=np.float64).reshape(a, b) for w, a, b in zip(doc["weights"], dims[:-1], dims[1:])]
        biases = [np.array(b, dtype=np.float64) for b in doc["biases"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed checkpoint: {exc}") from exc
    return MlpModel(dims, weights, biases)


def save_checkpoint(m: MlpModel, path, **extra) -> None:
    Path(path).write_text(json.dumps(to_checkpoint(m, **extra), indent=1) + "\n")


def load_checkpoint(path) -> tuple[MlpModel, dict]:
    doc = json.loads(Path(path).read_text())
    return from_checkpoint(doc), doc
