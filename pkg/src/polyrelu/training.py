"""Losses, momentum SGD and a plain minibatch training loop."""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import StructuralError

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 5
    seed: int = 0
    # multiplicative learning-rate decay applied after every epoch
    lr_decay: float = 1.0
    # L2 penalty on weight matrices and kernels (biases are not decayed)
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    def to_dict(self):
        return asdict(self)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. ``logits``.

    Uses max-subtraction, so large finite logits do not overflow; non-finite
    logits give a non-finite loss.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise StructuralError(f"logits {logits.shape} and labels {labels.shape} do not align")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise StructuralError(f"labels must lie in [0, {c})")
    labels = labels.astype(np.intp)
    with np.errstate(over="ignore", invalid="ignore"):
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = -logp[np.arange(n), labels].mean()
        grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def mse_loss(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise StructuralError(f"mse shapes differ: {a.shape} vs {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        diff = a - b
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size


class SGD:
    """Momentum SGD: ``v <- momentum * v + g``; ``p <- p - lr * v``.

    With ``clip_norm`` the gradient of all trainable parameters is rescaled to
    at most that global L2 norm before the update.  ``weight_decay`` adds
    ``wd * p`` to the gradient of every parameter with two or more axes.
    """

    def __init__(self, learning_rate, momentum=0.0, clip_norm=None, weight_decay=0.0):
        if clip_norm is not None and not clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.clip_norm = clip_norm
        self.weight_decay = float(weight_decay)
        self._velocity = {}

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.learning_rate, cfg.momentum, weight_decay=cfg.weight_decay)

    def _trainable(self, net):
        for layer in net.layers:
            if layer.frozen:
                continue
            for p in layer.params().values():
                if p.grad is not None:
                    yield p

    def step(self, net):
        params = list(self._trainable(net))
        grads = [p.grad + self.weight_decay * p.data if self.weight_decay and p.data.ndim > 1
                 else p.grad for p in params]
        scale = 1.0
        if self.clip_norm is not None:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        for p, g in zip(params, grads):
            key = id(p)
            v = self._velocity.get(key)
            if v is None or v[0] is not p:
                v = (p, np.zeros_like(p.data))
            v[1][...] = self.momentum * v[1] + scale * g
            self._velocity[key] = v
            p.data -= self.learning_rate * v[1]


def sgd_step(net, cfg, optimizer=None):
    """One momentum-SGD update; pass the returned optimizer back in to keep velocity."""
    optimizer = optimizer or SGD.from_config(cfg)
    optimizer.step(net)
    return optimizer


def minibatches(n, batch_size, rng=None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def predict(net, x, batch_size=1000, hook=None):
    """Logits for ``x`` in eval mode, batched, without recording a tape."""
    out = []
    for start in range(0, len(x), batch_size):
        logits, _ = net.forward(x[start:start + batch_size], train=False, record=False, hook=hook)
        out.append(logits)
    return np.concatenate(out)


def fit_classifier(net, x, y, cfg, optimizer=None, epochs=None):
    """Cross-entropy training.  Returns per-epoch mean losses; stops early on a
    non-finite loss (the last entry is then non-finite)."""
    rng = np.random.default_rng(cfg.seed)
    optimizer = optimizer or SGD.from_config(cfg)
    history = []
    for epoch in range(epochs or cfg.epochs):
        total, count = 0.0, 0
        for idx in minibatches(len(x), cfg.batch_size, rng):
            logits, _ = net.forward(x[idx], train=True)
            loss, grad = softmax_cross_entropy(logits, y[idx])
            if not np.isfinite(loss):
                history.append(loss)
                log.warning("non-finite loss in epoch %d", epoch)
                return history
            net.backward(grad)
            optimizer.step(net)
            total += loss * len(idx)
            count += len(idx)
        history.append(total / count)
        optimizer.learning_rate *= cfg.lr_decay
        log.info("epoch %d  loss %.4f", epoch, history[-1])
    return history


def accuracy(net, x, y, batch_size=1000):
    return float(np.mean(predict(net, x, batch_size).argmax(axis=1) == y))
