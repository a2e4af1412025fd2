"""Mini-batch Adam with validation early stopping."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DataError, NumericalError
from . import autograd as ag
from .layers import Module
from .models import NeuralData

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 1000
    patience: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 0:
            raise ValueError("epochs and batch_size must be positive, patience non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    @classmethod
    def mnn(cls, **overrides) -> TrainConfig:
        return cls(**{"epochs": 1000, "patience": 20, **overrides})

    @classmethod
    def mlp_lstm(cls, **overrides) -> TrainConfig:
        return cls(**{"epochs": 10000, "patience": 50, **overrides})

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Bias-corrected Adam over a fixed parameter dict."""

    def __init__(self, params: dict[str, ag.Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g, m, v = p.grad, self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            denom = np.sqrt(v / c2)
            denom += self.eps
            p.data -= self.lr * (m / c1) / denom


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based; 0 means no epoch ran
    stopped_early: bool = False
    seconds: float = 0.0

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch - 1]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> History:
        return cls(**d)


def predict(model: Module, data: NeuralData, batch_size: int = 256) -> np.ndarray:
    """Evaluation-mode forward pass in chunks; returns model units."""
    was_training = model.training
    model.eval()
    try:
        with ag.no_grad():
            parts = [model(data.subset(slice(i, i + batch_size))).data for i in range(0, len(data), batch_size)]
    finally:
        model.train(was_training)
    return np.concatenate(parts) if parts else np.empty(0)


def _mse(model, data) -> float:
    return float(np.mean((predict(model, data) - data.target) ** 2))


def train(model: Module, train_data: NeuralData, val_data: NeuralData, config: TrainConfig) -> tuple[Module, History]:
    """Fit ``model`` in place and return it restored to its best-validation epoch."""
    if len(train_data) == 0 or len(val_data) == 0:
        raise DataError("training and validation splits must be non-empty")
    if train_data.target is None or val_data.target is None:
        raise DataError("training and validation data need targets")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    history = History()
    best_state, best_val, stale = model.state_dict(), np.inf, 0
    patience = max(config.patience, 1)
    start = time.perf_counter()
    n = len(train_data)

    for epoch in range(1, config.epochs + 1):
        model.train()
        order = rng.permutation(n)
        total = 0.0
        for i in range(0, n, config.batch_size):
            batch = train_data.subset(order[i : i + config.batch_size])
            model.zero_grad()
            loss = ag.mse_loss(model(batch), batch.target)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch}, batch {i // config.batch_size}; "
                    f"try a smaller learning rate (now {config.learning_rate})"
                )
            loss.backward()
            opt.step()
            total += value * len(batch)
        train_loss = total / n
        val_loss = _mse(model, val_data)
        if not np.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)

        if val_loss < best_val:
            best_val, stale = val_loss, 0
            best_state = model.state_dict()
            history.best_epoch = epoch
        else:
            stale += 1
        log.debug("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)
        if stale >= patience:
            history.stopped_early = True
            break

    model.load_state_dict(best_state)
    model.eval()
    history.seconds = time.perf_counter() - start
    log.info("trained %d epochs, best epoch %d (val %.6g)", len(history.val_loss), history.best_epoch, best_val)
    return model, history
