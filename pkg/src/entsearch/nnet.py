"""Dense layers, the dressed hybrid classifier, the classical baseline and training.

Backpropagation is written out by hand: chain rule through the output layer,
parameter-shift partials through the circuit, chain rule through the tanh
input layer. Parameters are updated with Adam on a staircase learning-rate
schedule.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import entanglement as ent
from . import vqc
from .features import FeatureTable

PROB_FLOOR = 1e-12
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

_ACTIVATIONS = {"tanh": np.tanh, "identity": lambda a: a}


@dataclass
class DenseLayer:
    W: np.ndarray  # (n_out, n_in)
    b: np.ndarray  # (n_out,)
    activation: str = "identity"

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64, ndmin=2)
        self.b = np.array(self.b, dtype=np.float64).reshape(-1)
        if self.b.shape[0] != self.W.shape[0]:
            raise ValueError(f"bias length {self.b.shape[0]} does not match {self.W.shape[0]} outputs")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("layer parameters must be finite")

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    @classmethod
    def glorot(cls, n_in: int, n_out: int, activation: str, rng: np.random.Generator) -> "DenseLayer":
        bound = np.sqrt(6.0 / (n_in + n_out))
        return cls(rng.uniform(-bound, bound, size=(n_out, n_in)), np.zeros(n_out), activation)

    def to_json(self) -> dict:
        return {"W": self.W.tolist(), "b": self.b.tolist(), "activation": self.activation}


def dense_forward(layer: DenseLayer, x) -> np.ndarray:
    """phi(W x + b); ``x`` may be a single vector or a (B, n_in) batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.n_in:
        raise ValueError(f"layer expects {layer.n_in} inputs, got {x.shape[-1]}")
    return _ACTIVATIONS[layer.activation](x @ layer.W.T + layer.b)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, label: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[-1]:
        raise IndexError(f"label {label} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[label], PROB_FLOOR)))


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray
    probs: np.ndarray


# ---------------------------------------------------------------- models


@dataclass
class DressedNet:
    l_in: DenseLayer
    theta: np.ndarray
    spec: vqc.CircuitSpec
    l_out: DenseLayer

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        n = self.spec.n_q
        if not (self.l_in.n_out == n == self.theta.shape[0] == self.l_out.n_in):
            raise ValueError(
                f"qubit count mismatch: L_in out={self.l_in.n_out}, theta={self.theta.shape[0]}, "
                f"circuit={n}, L_out in={self.l_out.n_in}")
        if self.l_in.activation != "tanh" or self.l_out.activation != "identity":
            raise ValueError("dressed net needs a tanh input layer and an identity output layer")

    @property
    def n_q(self) -> int:
        return self.spec.n_q

    def parameters(self) -> dict[str, np.ndarray]:
        return {"W_in": self.l_in.W, "b_in": self.l_in.b, "theta": self.theta,
                "W_out": self.l_out.W, "b_out": self.l_out.b}

    def logits(self, x) -> np.ndarray:
        f = dense_forward(self.l_in, np.atleast_2d(x))
        z = vqc.forward_batch(self.spec, f, self.theta)
        return dense_forward(self.l_out, z)

    def loss_and_grads(self, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.asarray(y)
        f = dense_forward(self.l_in, x)
        z, qg = vqc.gradients_batch(self.spec, f, self.theta)
        logits = dense_forward(self.l_out, z)
        g, loss = _ce_head(logits, y)
        dz = g @ self.l_out.W
        da = np.einsum("bj,bij->bi", dz, qg.d_f) * (1.0 - f * f)
        grads = {
            "W_in": da.T @ x,
            "b_in": da.sum(axis=0),
            "theta": np.einsum("bj,bij->i", dz, qg.d_theta),
            "W_out": g.T @ z,
            "b_out": g.sum(axis=0),
        }
        return loss, grads


@dataclass
class ClassicalBaseline:
    l_in: DenseLayer
    l_out: DenseLayer

    def __post_init__(self):
        if self.l_in.n_out != self.l_out.n_in:
            raise ValueError(f"hidden size mismatch: {self.l_in.n_out} vs {self.l_out.n_in}")

    def parameters(self) -> dict[str, np.ndarray]:
        return {"W_in": self.l_in.W, "b_in": self.l_in.b, "W_out": self.l_out.W, "b_out": self.l_out.b}

    def logits(self, x) -> np.ndarray:
        return dense_forward(self.l_out, dense_forward(self.l_in, np.atleast_2d(x)))

    def loss_and_grads(self, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        h = dense_forward(self.l_in, x)
        logits = dense_forward(self.l_out, h)
        g, loss = _ce_head(logits, np.asarray(y))
        da = (g @ self.l_out.W) * (1.0 - h * h)
        return loss, {"W_in": da.T @ x, "b_in": da.sum(axis=0), "W_out": g.T @ h, "b_out": g.sum(axis=0)}


def _ce_head(logits, y):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    p = softmax(logits)
    b = logits.shape[0]
    rows = np.arange(b)
    loss = float(np.mean(-np.log(np.maximum(p[rows, y], PROB_FLOOR))))
    g = p.copy()
    g[rows, y] -= 1.0
    return g / b, loss


def init_dressed(n_in: int, beta: ent.EntanglementMatrix, n_out: int = 2, seed: int = 0) -> DressedNet:
    rng = np.random.default_rng(seed)
    n = beta.n_q
    l_in = DenseLayer.glorot(n_in, n, "tanh", rng)
    l_out = DenseLayer.glorot(n, n_out, "identity", rng)
    theta = rng.normal(0.0, 0.1, size=n)
    return DressedNet(l_in, theta, vqc.CircuitSpec(beta), l_out)


def init_baseline(n_in: int, n_hidden: int = 8, n_out: int = 2, seed: int = 0) -> ClassicalBaseline:
    rng = np.random.default_rng(seed)
    return ClassicalBaseline(DenseLayer.glorot(n_in, n_hidden, "tanh", rng),
                             DenseLayer.glorot(n_hidden, n_out, "identity", rng))


def dressed_forward(net: DressedNet, x) -> Prediction:
    logits = net.logits(x)[0] if np.ndim(x) == 1 else net.logits(x)
    return Prediction(logits, softmax(logits))


def baseline_forward(net: ClassicalBaseline, x) -> Prediction:
    logits = net.logits(x)[0] if np.ndim(x) == 1 else net.logits(x)
    return Prediction(logits, softmax(logits))


def predict_proba(model, x) -> np.ndarray:
    return softmax(model.logits(x))


def accuracy(probs, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot score an empty split")
    # argmax returns the first maximum, so ties go to the lower class index
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def evaluate(model, data: FeatureTable, split: str = "test") -> float:
    x, y = data.split(split)
    if len(y) == 0:
        raise ValueError(f"split {split!r} is empty")
    return accuracy(predict_proba(model, x), y)


# -------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 70
    learning_rate: float = 0.00043
    decay_gamma: float = 0.6
    decay_every: int = 10
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.decay_every < 1:
            raise ValueError("epochs, batch_size and decay_every must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.decay_gamma <= 1:
            raise ValueError("decay_gamma must be in (0, 1]")

    def lr_at(self, epoch: int) -> float:
        """Learning rate used during 0-based ``epoch``."""
        return self.learning_rate * self.decay_gamma ** (epoch // self.decay_every)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    best_epoch: int = -1

    def to_json(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr):
        b1, b2 = ADAM_BETAS
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + ADAM_EPS)


def train(model, data: FeatureTable, cfg: TrainConfig = TrainConfig(), log=None):
    """Minibatch Adam on the train split, model selection on the validation split.

    Returns ``(best_model, history)``. The input model is left untouched; the
    returned copy carries the weights of the epoch with the highest validation
    accuracy (earliest epoch on ties).
    """
    x_tr, y_tr = data.split("train")
    x_va, y_va = data.split("validation")
    if len(y_tr) == 0 or len(y_va) == 0:
        raise ValueError("training needs non-empty train and validation splits")
    model = copy.deepcopy(model)
    params = model.parameters()
    opt = Adam(params)
    rng = np.random.default_rng(cfg.seed)
    hist = TrainHistory()
    best, best_acc = None, -1.0
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(y_tr))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = model.loss_and_grads(x_tr[idx], y_tr[idx])
            opt.step(params, grads, lr)
            total += loss * len(idx)
        tr_acc = accuracy(predict_proba(model, x_tr), y_tr)
        va_acc = accuracy(predict_proba(model, x_va), y_va)
        hist.train_loss.append(total / len(y_tr))
        hist.train_acc.append(tr_acc)
        hist.val_acc.append(va_acc)
        hist.lr.append(lr)
        if isinstance(model, DressedNet):
            hist.theta.append(model.theta.tolist())
        if va_acc > best_acc:
            best, best_acc, hist.best_epoch = copy.deepcopy(model), va_acc, epoch
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs} loss={total / len(y_tr):.4f} "
                f"train_acc={tr_acc:.4f} val_acc={va_acc:.4f}")
    return best, hist


# ------------------------------------------------------------ checkpoints


def model_to_json(model, train_config: TrainConfig | None = None, history: TrainHistory | None = None) -> dict:
    doc = {"kind": "dressed" if isinstance(model, DressedNet) else "baseline",
           "l_in": model.l_in.to_json(), "l_out": model.l_out.to_json()}
    if isinstance(model, DressedNet):
        doc["theta"] = model.theta.tolist()
        doc["beta"] = ent.to_descriptor(model.spec.beta)
    if train_config is not None:
        doc["train_config"] = asdict(train_config)
    if history is not None:
        doc["history"] = history.to_json()
    return doc


def model_from_json(doc: dict):
    l_in = DenseLayer(**doc["l_in"])
    l_out = DenseLayer(**doc["l_out"])
    if doc["kind"] == "dressed":
        beta = ent.from_descriptor(doc["beta"])
        return DressedNet(l_in, doc["theta"], vqc.CircuitSpec(beta), l_out)
    if doc["kind"] == "baseline":
        return ClassicalBaseline(l_in, l_out)
    raise ValueError(f"unknown model kind {doc['kind']!r}")


def save_checkpoint(path, model, train_config=None, history=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json(model, train_config, history), fh)
        fh.write("\n")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_json(json.load(fh))
