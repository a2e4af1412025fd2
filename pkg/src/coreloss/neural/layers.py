"""Parameterized layers built on the autograd primitives."""

from __future__ import annotations

import math

import numpy as np

from ..errors import DataError
from . import autograd as ag
from .autograd import Tensor


class Module:
    """Holds parameters and submodules as attributes; mirrors the usual NN idiom."""

    training = True

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def modules(self):
        yield self
        for value in vars(self).values():
            items = value if isinstance(value, (list, tuple)) else (value,)
            for item in items:
                if isinstance(item, Module):
                    yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise DataError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DataError(f"parameter {name}: shape {value.shape}, expected {p.shape}")
            p.data = value.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _fan_in_uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense(Module):
    """x @ W + b, optionally followed by ReLU."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, activation=None):
        self.W = _param(_fan_in_uniform(rng, (in_features, out_features), in_features))
        self.b = _param(np.zeros(out_features))
        if activation not in (None, "relu"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.activation = activation

    def forward(self, x):
        x = ag.as_tensor(x)
        if x.shape[-1] != self.W.shape[0]:
            raise DataError(f"dense layer expects {self.W.shape[0]} inputs, got {x.shape[-1]}")
        out = ag.add(ag.matmul(x, self.W), self.b)
        return ag.relu(out) if self.activation == "relu" else out


class Conv1d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, padding=1):
        fan_in = in_channels * kernel_size
        self.W = _param(_fan_in_uniform(rng, (out_channels, in_channels, kernel_size), fan_in))
        self.b = _param(np.zeros(out_channels))
        self.padding = padding

    def forward(self, x):
        return ag.conv1d(ag.as_tensor(x), self.W, self.b, self.padding)


class Embedding(Module):
    def __init__(self, vocab_size: int, dim: int, rng):
        self.table = _param(rng.normal(0.0, 1.0, size=(vocab_size, dim)))

    def forward(self, index):
        return ag.embedding(self.table, index)


class Dropout(Module):
    def __init__(self, rate: float, rng: np.random.Generator):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng

    def forward(self, x):
        return ag.dropout(x, self.rate, self.rng, self.training)


class LSTMCell(Module):
    """Gate weights act on the concatenation [h_prev, x_t]."""

    def __init__(self, input_size: int, hidden_size: int, rng):
        shape = (hidden_size + input_size, hidden_size)
        bound = 1.0 / math.sqrt(hidden_size)
        for gate in ("f", "i", "C", "o"):
            setattr(self, f"W_{gate}", _param(rng.uniform(-bound, bound, size=shape)))
            setattr(self, f"b_{gate}", _param(np.zeros(hidden_size)))
        self.b_f.data[:] = 1.0
        self.input_size = input_size
        self.hidden_size = hidden_size

    def forward(self, x_t, h_prev, c_prev):
        return lstm_step(x_t, h_prev, c_prev, self)


def lstm_step(x_t, h_prev, c_prev, cell: LSTMCell):
    """One LSTM update; returns (h_t, C_t)."""
    x_t, h_prev, c_prev = ag.as_tensor(x_t), ag.as_tensor(h_prev), ag.as_tensor(c_prev)
    if x_t.shape[-1] != cell.input_size or h_prev.shape[-1] != cell.hidden_size:
        raise DataError(
            f"lstm step expects input {cell.input_size} and hidden {cell.hidden_size}, "
            f"got {x_t.shape[-1]} and {h_prev.shape[-1]}"
        )
    hx = ag.concat([h_prev, x_t], axis=-1)
    f = ag.sigmoid(hx @ cell.W_f + cell.b_f)
    i = ag.sigmoid(hx @ cell.W_i + cell.b_i)
    c_tilde = ag.tanh(hx @ cell.W_C + cell.b_C)
    c = f * c_prev + i * c_tilde
    o = ag.sigmoid(hx @ cell.W_o + cell.b_o)
    h = o * ag.tanh(c)
    return h, c


class LSTM(Module):
    """Stacked LSTM over (batch, time, features); returns the last layer's final h."""

    def __init__(self, input_size: int, hidden_size: int, num_layers: int, rng):
        self.cells = [
            LSTMCell(input_size if layer == 0 else hidden_size, hidden_size, rng)
            for layer in range(num_layers)
        ]
        self.hidden_size = hidden_size

    def forward(self, x):
        x = ag.as_tensor(x)
        batch, steps, _ = x.shape
        inputs = [ag.select(x, (slice(None), t, slice(None))) for t in range(steps)]
        h = None
        for cell in self.cells:
            h = Tensor(np.zeros((batch, self.hidden_size)))
            c = Tensor(np.zeros((batch, self.hidden_size)))
            outputs = []
            for x_t in inputs:
                h, c = lstm_step(x_t, h, c, cell)
                outputs.append(h)
            inputs = outputs
        return h
