"""The adviser network: a ReLU MLP with a class-masked 34-way head.

Everything is plain numpy in float64 with hand-written backprop, so the
gradient check in the test suite can compare against finite differences at
tight tolerances.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .labels import LabelConfig, regression_targets, soft_label
from .taxonomy import NUM_KEYPOINTS, TAXONOMY

LOSS_KINDS = ("mse", "cross_entropy", "regression")
MODES = ("classification", "regression-degrees", "regression-radians")
CHECKPOINT_FORMAT = "adviser-mlp"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay: float = 0.95
    lr_decay_every: int = 5
    batch_size: int = 256
    epochs: int = 100
    loss: str = "mse"
    mode: str = "classification"
    hidden: tuple[int, ...] = (128, 64)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for name in ("learning_rate", "momentum", "weight_decay", "lr_decay", "lr_decay_every", "batch_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.loss not in ("mse", "cross_entropy"):
            raise ValueError("loss must be 'mse' or 'cross_entropy'")

    @property
    def loss_kind(self) -> str:
        """Loss actually optimized: regression modes always use masked squared error."""
        return "regression" if self.mode != "classification" else self.loss

    def learning_rate_at(self, epoch: int) -> float:
        """Learning rate used during ``epoch`` (0-based)."""
        return self.learning_rate * self.lr_decay ** (epoch // self.lr_decay_every)


class AdviserNet:
    """Feed-forward net ``features -> 34 logits`` with ReLU hidden layers."""

    def __init__(self, weights, biases):
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError("layer shapes are inconsistent")
        for w_in, w_out in zip(self.weights[:-1], self.weights[1:]):
            if w_in.shape[1] != w_out.shape[0]:
                raise ValueError("consecutive layers do not chain")
        if self.widths[-1] != NUM_KEYPOINTS:
            raise ValueError(f"output width must be {NUM_KEYPOINTS}, got {self.widths[-1]}")

    @classmethod
    def initialize(cls, widths, rng: np.random.Generator) -> "AdviserNet":
        """Fan-in scaled uniform hidden weights, zero biases.

        The output layer starts at zero so the first prediction is uniform over
        each class slice; with random output weights the masked-softmax MSE
        gradients are too small for the fixed schedule to undo the initial
        preference.
        """
        widths = [int(w) for w in widths]
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-2], widths[1:-1]):
            bound = math.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        weights.append(np.zeros((widths[-2], widths[-1])))
        biases.append(np.zeros(widths[-1]))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, widths) -> "AdviserNet":
        widths = [int(w) for w in widths]
        return cls(
            [np.zeros((a, b)) for a, b in zip(widths[:-1], widths[1:])],
            [np.zeros(b) for b in widths[1:]],
        )

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "AdviserNet":
        return AdviserNet(self.weights, self.biases)

    def parameters(self) -> list[np.ndarray]:
        """Weights and biases interleaved, layer by layer."""
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def _activations(self, x: np.ndarray) -> list[np.ndarray]:
        acts = [x]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w + b
            acts.append(np.maximum(z, 0.0) if i < len(self.weights) - 1 else z)
        return acts

    def forward(self, features) -> np.ndarray:
        """Logits for one feature vector (shape ``(F,)``) or a batch (``(n, F)``)."""
        x = np.asarray(features, dtype=float)
        if x.shape[-1] != self.widths[0]:
            raise ValueError(f"expected {self.widths[0]} features, got {x.shape[-1]}")
        return self._activations(x)[-1]

    __call__ = forward


def class_mask(cls) -> np.ndarray:
    mask = np.zeros(NUM_KEYPOINTS, dtype=bool)
    span = TAXONOMY.class_slice(cls)
    mask[span.start:span.stop] = True
    return mask


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise softmax restricted to ``mask``; exact zeros elsewhere."""
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def class_masked_probabilities(logits, cls) -> np.ndarray:
    return masked_softmax(np.asarray(logits, dtype=float), class_mask(cls))


@dataclass
class Batch:
    """Stacked training examples.

    ``targets`` holds soft labels (classification) or error targets
    (regression); ``visible`` marks visible keypoints and ``classes`` marks
    each row's class slice.
    """

    features: np.ndarray
    targets: np.ndarray
    visible: np.ndarray
    classes: np.ndarray

    def __len__(self):
        return self.features.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.features[idx], self.targets[idx], self.visible[idx], self.classes[idx])


def make_batch(records, mode: str = "classification", label_config: LabelConfig = LabelConfig()) -> Batch:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not records:
        raise ValueError("no records")
    if any(r.features is None for r in records):
        raise ValueError("every record needs a feature vector to train or score an adviser")
    feats = np.stack([r.features for r in records])
    visible = np.stack([r.visible_mask() for r in records])
    classes = np.stack([class_mask(r.cls) for r in records])
    if mode == "classification":
        targets = np.stack([soft_label(r, label_config) for r in records])
    else:
        units = mode.split("-", 1)[1]
        targets = np.stack([regression_targets(r, units)[0] for r in records])
    return Batch(feats, targets, visible, classes)


def _per_example_loss(logits, targets, visible, classes, kind):
    """Per-row loss and its gradient w.r.t. the logits (unscaled by batch size)."""
    if kind == "regression":
        n_vis = visible.sum(axis=1, keepdims=True)
        diff = np.where(visible, logits - targets, 0.0)
        loss = (diff**2).sum(axis=1) / n_vis[:, 0]
        return loss, 2.0 * diff / n_vis

    p = masked_softmax(logits, classes)
    if kind == "mse":
        n_cls = classes.sum(axis=1, keepdims=True)
        diff = np.where(classes, p - targets, 0.0)
        loss = (diff**2).sum(axis=1) / n_cls[:, 0]
        g = 2.0 * diff / n_cls
        # softmax Jacobian-vector product
        grad = p * (g - (p * g).sum(axis=1, keepdims=True))
        return loss, grad
    if kind == "cross_entropy":
        y = np.where(visible, targets, 0.0)
        with np.errstate(divide="ignore"):
            logp = np.where(y > 0, np.log(np.where(y > 0, p, 1.0)), 0.0)
        loss = -(y * logp).sum(axis=1)
        grad = np.where(classes, p * y.sum(axis=1, keepdims=True) - y, 0.0)
        return loss, grad
    raise ValueError(f"unknown loss kind {kind!r}")


def batch_loss(net: AdviserNet, batch: Batch, kind: str) -> float:
    """Mean loss of ``net`` over ``batch``."""
    logits = net.forward(batch.features)
    loss, _ = _per_example_loss(logits, batch.targets, batch.visible, batch.classes, kind)
    return float(loss.mean())


def loss(net_output, target, cls, visible_mask, kind: str) -> float:
    """Loss of a single example given the network's raw logits."""
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    target = np.asarray(target, dtype=float)
    if kind != "regression" and not np.isclose(target.sum(), 1.0):
        raise ValueError("classification losses need a soft label target")
    value, _ = _per_example_loss(
        np.asarray(net_output, dtype=float)[None],
        target[None],
        np.asarray(visible_mask, dtype=bool)[None],
        class_mask(cls)[None],
        kind,
    )
    return float(value[0])


def gradients(net: AdviserNet, batch: Batch, kind: str) -> tuple[float, list[np.ndarray]]:
    """Mean batch loss and its gradient for each array of ``net.parameters()``."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    acts = net._activations(batch.features)
    per_loss, delta = _per_example_loss(acts[-1], batch.targets, batch.visible, batch.classes, kind)
    delta = delta / len(batch)
    grads = []
    for layer in range(len(net.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(acts[layer].T @ delta)
        if layer:
            delta = (delta @ net.weights[layer].T) * (acts[layer] > 0)
    grads.reverse()
    return float(per_loss.mean()), grads


def train(net: AdviserNet, batch: Batch, config: TrainConfig = TrainConfig()):
    """SGD with momentum and step learning-rate decay; returns ``(net, losses)``.

    ``losses[e]`` is the example-weighted mean training loss seen during
    epoch ``e``. The input net is left untouched.
    """
    if len(batch) == 0:
        raise ValueError("empty training set")
    net = net.copy()
    kind = config.loss_kind
    rng = np.random.default_rng([config.seed, 1])
    params = net.parameters()
    velocity = [np.zeros_like(p) for p in params]
    decays = [i % 2 == 0 for i in range(len(params))]  # weights only
    trace = []
    n = len(batch)
    for epoch in range(config.epochs):
        lr = config.learning_rate_at(epoch)
        order = rng.permutation(n)
        total = 0.0
        # overflow is caught below as divergence
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                value, grads = gradients(net, batch.subset(idx), kind)
                total += value * len(idx)
                for p, v, g, wd in zip(params, velocity, grads, decays):
                    if wd:
                        g = g + config.weight_decay * p
                    v *= config.momentum
                    v -= lr * g
                    p += v
        epoch_loss = total / n
        if not math.isfinite(epoch_loss) or not all(np.all(np.isfinite(p)) for p in params):
            raise TrainingDivergedError(epoch, epoch_loss)
        trace.append(epoch_loss)
    return net, trace


def initial_net(feature_dim: int, config: TrainConfig) -> AdviserNet:
    widths = [feature_dim, *config.hidden, NUM_KEYPOINTS]
    return AdviserNet.initialize(widths, np.random.default_rng([config.seed, 0]))


def fit(records, config: TrainConfig = TrainConfig(), label_config: LabelConfig = LabelConfig()):
    """Build targets from ``records`` and train a freshly initialized net."""
    batch = make_batch(records, config.mode, label_config)
    return train(initial_net(batch.features.shape[1], config), batch, config)


def scores(net: AdviserNet, records, mode: str = "classification") -> np.ndarray:
    """Per-record scores used for selection.

    Classification: class-masked probabilities (higher is better).
    Regression: raw predicted errors (lower is better).
    """
    feats = np.stack([r.features for r in records])
    logits = net.forward(feats)
    if mode == "classification":
        return masked_softmax(logits, np.stack([class_mask(r.cls) for r in records]))
    return logits


def save_checkpoint(net: AdviserNet, path, mode: str = "classification") -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "mode": mode,
        "widths": net.widths,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path) -> tuple[AdviserNet, str]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an adviser checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    net = AdviserNet(payload["weights"], payload["biases"])
    if net.widths != payload["widths"]:
        raise ValueError("checkpoint widths do not match its parameters")
    return net, payload.get("mode", "classification")

