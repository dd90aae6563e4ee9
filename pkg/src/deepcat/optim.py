"""SGD with Nesterov momentum and per-update learning-rate decay."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DataError, DimensionError
from .heads import loss_onehot


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    decay: float = 1e-6
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not self.decay >= 0:
            raise ConfigurationError(f"decay must be >= 0, got {self.decay}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigurationError(f"clip_norm must be > 0 or None, got {self.clip_norm}")

    def to_dict(self):
        return asdict(self)


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)
    step_count: int = 0


def nesterov_step(params, grads, state: OptimizerState, config: TrainConfig):
    """One Nesterov update of every non-frozen parameter.

    With ``lr_t = lr / (1 + decay * t)``::

        v     <- m * v - lr_t * g
        theta <- theta + m * v - lr_t * g

    ``grads`` lines up with ``params``; a None gradient counts as zero.
    """
    lr = config.learning_rate / (1.0 + config.decay * state.step_count)
    m = config.momentum
    for p, g in zip(params, grads):
        if p.frozen:
            continue
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.name} {p.shape}")
        v = state.velocity.get(p.name)
        if v is None or v.shape != p.shape:
            v = np.zeros_like(p.data)
        v = m * v - lr * g
        state.velocity[p.name] = v
        p.data = p.data + m * v - lr * g
    state.step_count += 1


def clip_by_global_norm(grads, max_norm):
    """Rescale ``grads`` so their joint L2 norm is at most ``max_norm``.

    Distance-based heads without batch normalization can blow up features
    under momentum 0.9; a norm cap keeps the default learning rate usable.
    """
    if max_norm is None:
        return grads
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads if g is not None))
    if total <= max_norm:
        return grads
    factor = max_norm / total
    return [None if g is None else g * factor for g in grads]


def model_parameters(net, head):
    params = list(net.params.values()) + list(head.params.values())
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise ConfigurationError(f"duplicate parameter names in model: {names}")
    return params


def fit(net, head, dataset, config: TrainConfig, state: OptimizerState | None = None) -> list[dict]:
    """Train ``net`` and ``head`` jointly on one-hot labels.

    Each epoch shuffles with seed ``config.seed + epoch``.  Returns one
    record per epoch with the example-weighted mean minibatch loss and the
    accuracy of the minibatch predictions made before each update.
    """
    if len(dataset) == 0:
        raise DataError("cannot fit on an empty dataset")
    if dataset.n_classes != head.n_classes:
        raise DataError(f"dataset has {dataset.n_classes} classes, head has {head.n_classes}")
    params = model_parameters(net, head)
    state = state or OptimizerState()
    history = []
    n = len(dataset)
    for epoch in range(config.epochs):
        order = np.random.default_rng(config.seed + epoch).permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            labels = dataset.labels[idx]
            for p in params:
                p.grad = None
            with ad.Tape():
                logits = head.logits(net.forward(dataset.inputs[idx]))
                loss = loss_onehot(logits, labels)
                ad.backward(loss)
            grads = clip_by_global_norm([p.grad for p in params], config.clip_norm)
            nesterov_step(params, grads, state, config)
            total_loss += loss.item() * len(idx)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == labels))
        mean_loss = total_loss / n
        if not math.isfinite(mean_loss):
            raise FloatingPointError(f"training loss became non-finite at epoch {epoch}")
        history.append({"epoch": epoch, "loss": mean_loss, "accuracy": correct / n})
    return history
