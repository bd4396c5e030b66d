"""Feed-forward classifier written directly on numpy.

ReLU hidden layers of 64 units, softmax output, categorical cross-entropy,
Adam, and early stopping on validation categorical accuracy.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

HIDDEN_WIDTH = 64
MAX_EPOCHS = 100
PATIENCE = 5
BATCH_SIZE = 32
LOG_FLOOR = 1e-12

ADAM_LR = 0.001
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-7


class ShapeMismatch(ValueError):
    pass


DimensionMismatch = ShapeMismatch


class EmptyTestSet(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    output_dim: int
    hidden_layers: int = 2
    hidden_width: int = HIDDEN_WIDTH
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.hidden_layers not in (1, 2, 3):
            raise ValueError("hidden_layers must be 1, 2 or 3")
        if self.output_dim < 2:
            raise ValueError("output_dim must be >= 2")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]


class Network:
    """Dense layers stored as ``(fan_in, fan_out)`` weight matrices plus bias rows."""

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ShapeMismatch("need one bias per weight matrix")
        for i, (W, b) in enumerate(zip(weights, biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ShapeMismatch(f"layer {i}: weight {W.shape} / bias {b.shape}")
            if i and weights[i - 1].shape[1] != W.shape[0]:
                raise ShapeMismatch(f"layer {i} does not chain onto layer {i - 1}")
        self.weights = [np.asarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator | None = None) -> "Network":
        # He-style uniform fan-in scaling, zero biases
        rng = np.random.default_rng(config.seed) if rng is None else rng
        sizes = config.layer_sizes
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def hidden_layers(self) -> int:
        return len(self.weights) - 1

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self) -> "Network":
        return Network([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def logits(self, X) -> np.ndarray:
        a = np.asarray(X, dtype=np.float64)
        if a.shape[-1] != self.input_dim:
            raise ShapeMismatch(f"input has {a.shape[-1]} features, network expects {self.input_dim}")
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ W + b, 0.0)
        return a @ self.weights[-1] + self.biases[-1]

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.logits(X), axis=-1)


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def forward(net: Network, x) -> np.ndarray:
    """Class probabilities for one feature vector or a batch of rows."""
    return softmax(net.logits(x))


def loss(probs, labels) -> float:
    """Mean categorical cross-entropy with probabilities floored at 1e-12."""
    P = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    if P.shape != Y.shape:
        raise ShapeMismatch(f"probs {P.shape} vs labels {Y.shape}")
    return float(-np.sum(Y * np.log(np.maximum(P, LOG_FLOOR))) / P.shape[0])


def backward(net: Network, X, Y) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer ``(dW, db)`` of the mean cross-entropy over the batch."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[0] == 0:
        raise ShapeMismatch("empty batch")
    if X.shape[0] != Y.shape[0] or Y.shape[1] != net.output_dim or X.shape[1] != net.input_dim:
        raise ShapeMismatch(f"batch {X.shape} / labels {Y.shape} do not fit the network")

    acts = [X]
    pre = []
    a = X
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        z = a @ W + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    P = softmax(a @ net.weights[-1] + net.biases[-1])

    grads = [None] * len(net.weights)
    dz = (P - Y) / X.shape[0]
    for i in range(len(net.weights) - 1, -1, -1):
        grads[i] = (acts[i].T @ dz, dz.sum(axis=0))
        if i:
            dz = (dz @ net.weights[i].T) * (pre[i - 1] > 0)
    return grads


@dataclass
class AdamState:
    learning_rate: float = ADAM_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    timestep: int = 0

    @classmethod
    def for_network(cls, net: Network, **hyper) -> "AdamState":
        params = net.params()
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params],
                   **hyper)


def adam_step(state: AdamState, net: Network, grads):
    """Bias-corrected Adam update, applied in place. Returns ``(net, state)``."""
    params = net.params()
    flat = [g for pair in grads for g in pair]
    if len(flat) != len(params) or not state.m:
        raise ShapeMismatch("gradients do not match network parameters")
    state.timestep += 1
    t = state.timestep
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, flat, state.m, state.v):
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient {g.shape} vs parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return net, state


@dataclass
class TrainReport:
    epochs_run: int
    train_loss: list[float]
    val_loss: list[float]
    train_accuracy: list[float]
    val_accuracy: list[float]
    stopped_early: bool
    best_epoch: int

    def to_dict(self) -> dict:
        return asdict(self)


def accuracy(net: Network, X, y) -> float:
    return float(np.mean(net.predict(X) == np.asarray(y)))


def train(config: ModelConfig, splits, max_epochs: int = MAX_EPOCHS, patience: int = PATIENCE,
          batch_size: int = BATCH_SIZE):
    """Train on ``splits.train`` with early stopping on ``splits.val``.

    Weights from the epoch with the best validation accuracy are restored.
    All randomness (init and per-epoch shuffles) comes from ``config.seed``.
    Returns ``(Network, TrainReport)``.
    """
    tr, va = splits.train, splits.val
    if len(tr) == 0:
        raise ShapeMismatch("empty training split")
    if tr.X.shape[1] != config.input_dim or tr.num_classes != config.output_dim:
        raise ShapeMismatch("splits do not match model configuration")
    if len(va) == 0:
        va = tr

    rng = np.random.default_rng(config.seed)
    net = Network.init(config, rng)
    state = AdamState.for_network(net)
    Ytr, Yva = tr.Y, va.Y
    n = len(tr)

    hist = {"train_loss": [], "val_loss": [], "train_accuracy": [], "val_accuracy": []}
    best_acc, best_epoch, best_net = -1.0, 0, net.copy()
    wait = 0
    stopped = False
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            adam_step(state, net, backward(net, tr.X[idx], Ytr[idx]))

        p_tr, p_va = forward(net, tr.X), forward(net, va.X)
        hist["train_loss"].append(loss(p_tr, Ytr))
        hist["val_loss"].append(loss(p_va, Yva))
        hist["train_accuracy"].append(float(np.mean(p_tr.argmax(1) == tr.y)))
        val_acc = float(np.mean(p_va.argmax(1) == va.y))
        hist["val_accuracy"].append(val_acc)

        if val_acc > best_acc:
            best_acc, best_epoch, best_net = val_acc, epoch, net.copy()
            wait = 0
        else:
            wait += 1
            if wait >= patience:
                stopped = epoch < max_epochs
                break

    report = TrainReport(epochs_run=epoch, stopped_early=stopped, best_epoch=best_epoch, **hist)
    return best_net, report


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    loss: float
    confusion: np.ndarray   # [predicted, actual]


def confusion_matrix(pred, actual, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(pred), np.asarray(actual)), 1)
    return cm


def macro_f1(cm) -> float:
    """Unweighted mean of per-class F1 over every class of a [pred, actual] matrix."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    predicted = cm.sum(axis=1)
    actual = cm.sum(axis=0)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    # left-to-right sum so the result does not depend on numpy's pairwise blocking
    return sum(f1.tolist()) / len(f1)


def metrics(net: Network, split) -> Metrics:
    if len(split) == 0:
        raise EmptyTestSet("no samples to evaluate")
    probs = forward(net, split.X)
    pred = probs.argmax(axis=1)
    cm = confusion_matrix(pred, split.y, split.num_classes)
    return Metrics(accuracy=float(np.mean(pred == split.y)), macro_f1=macro_f1(cm),
                   loss=loss(probs, split.Y), confusion=cm)
