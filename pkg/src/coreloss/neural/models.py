"""The two waveform regressors: MNN (embedding + 1-D CNN + dense head) and MLP-LSTM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from . import autograd as ag
from .layers import LSTM, Conv1d, Dense, Dropout, Embedding, Module


@dataclass
class NeuralData:
    """Encoded model inputs: standardized flux and scalars, category indices, target."""

    flux: np.ndarray
    material: np.ndarray
    waveform: np.ndarray
    linear: np.ndarray
    target: np.ndarray | None = None

    def __post_init__(self):
        n = self.flux.shape[0]
        for name in ("material", "waveform", "linear"):
            if getattr(self, name).shape[0] != n:
                raise DataError(f"{name} has {getattr(self, name).shape[0]} rows, flux has {n}")
        if self.target is not None and self.target.shape != (n,):
            raise DataError("target must be a vector with one entry per sample")

    def __len__(self):
        return self.flux.shape[0]

    def subset(self, idx) -> NeuralData:
        return NeuralData(
            self.flux[idx], self.material[idx], self.waveform[idx], self.linear[idx],
            None if self.target is None else self.target[idx],
        )  # fmt: skip


class MNN(Module):
    """conv(1->16) -> ReLU -> pool -> conv(16->32) -> ReLU -> pool -> flatten,
    concatenated with material/waveform embeddings and the scalar inputs,
    then dense 128 -> 64 -> 1 with ReLU between.
    """

    kind = "mnn"

    def __init__(
        self,
        n_materials: int,
        n_waveforms: int,
        seq_len: int = 1024,
        channels: tuple[int, ...] = (16, 32),
        kernel_size: int = 3,
        padding: int = 1,
        pool: int = 2,
        hidden: tuple[int, ...] = (128, 64),
        material_dim: int = 4,
        waveform_dim: int = 3,
        n_linear: int = 2,
        seed: int = 0,
    ):
        self.config = dict(
            n_materials=n_materials, n_waveforms=n_waveforms, seq_len=seq_len,
            channels=list(channels), kernel_size=kernel_size, padding=padding, pool=pool,
            hidden=list(hidden), material_dim=material_dim, waveform_dim=waveform_dim,
            n_linear=n_linear, seed=seed,
        )  # fmt: skip
        rng = np.random.default_rng(seed)
        self.material_embedding = Embedding(n_materials, material_dim, rng)
        self.waveform_embedding = Embedding(n_waveforms, waveform_dim, rng)
        convs, length, in_ch = [], seq_len, 1
        for out_ch in channels:
            convs.append(Conv1d(in_ch, out_ch, kernel_size, rng, padding=padding))
            length = length + 2 * padding - kernel_size + 1
            if length % pool:
                raise DataError(f"sequence length {length} is not divisible by the pool size {pool}")
            length //= pool
            in_ch = out_ch
        self.convs = convs
        self.pool = pool
        self.seq_len = seq_len
        self.flat_features = in_ch * length
        self.fc_in_features = self.flat_features + material_dim + waveform_dim + n_linear
        sizes = [self.fc_in_features, *hidden]
        self.hidden_layers = [Dense(a, b, rng, activation="relu") for a, b in zip(sizes[:-1], sizes[1:])]
        self.head = Dense(sizes[-1], 1, rng)

    def features(self, data: NeuralData) -> ag.Tensor:
        """The concatenated vector entering the dense head."""
        flux = np.asarray(data.flux, dtype=np.float64)
        if flux.ndim != 2 or flux.shape[1] != self.seq_len:
            raise DataError(f"MNN expects flux rows of length {self.seq_len}, got shape {flux.shape}")
        x = ag.Tensor(flux[:, None, :])
        for conv in self.convs:
            x = ag.maxpool1d(ag.relu(conv(x)), self.pool)
        flat = ag.reshape(x, (flux.shape[0], -1))
        return ag.concat(
            [flat, self.material_embedding(data.material), self.waveform_embedding(data.waveform),
             ag.Tensor(data.linear)],
            axis=-1,
        )  # fmt: skip

    def forward(self, data: NeuralData) -> ag.Tensor:
        x = self.features(data)
        for layer in self.hidden_layers:
            x = layer(x)
        return ag.reshape(self.head(x), (len(data),))


class MlpLstm(Module):
    """MLP over scalar + one-hot categorical inputs, stacked LSTM over the reshaped
    flux, concatenated into a dense ReLU/dropout layer and a scalar head.
    """

    kind = "mlp-lstm"

    def __init__(
        self,
        n_materials: int,
        n_waveforms: int,
        seq_shape: tuple[int, int] = (32, 32),
        mlp_hidden: tuple[int, ...] = (128, 64),
        lstm_hidden: int = 128,
        lstm_layers: int = 2,
        fc_hidden: int = 128,
        dropout: float = 0.5,
        n_linear: int = 2,
        seed: int = 0,
    ):
        self.config = dict(
            n_materials=n_materials, n_waveforms=n_waveforms, seq_shape=list(seq_shape),
            mlp_hidden=list(mlp_hidden), lstm_hidden=lstm_hidden, lstm_layers=lstm_layers,
            fc_hidden=fc_hidden, dropout=dropout, n_linear=n_linear, seed=seed,
        )  # fmt: skip
        rng = np.random.default_rng(seed)
        drop_rng = np.random.default_rng([seed, 1])
        self.n_materials = n_materials
        self.n_waveforms = n_waveforms
        self.seq_shape = tuple(seq_shape)
        sizes = [n_linear + n_materials + n_waveforms, *mlp_hidden]
        self.mlp = [Dense(a, b, rng, activation="relu") for a, b in zip(sizes[:-1], sizes[1:])]
        self.mlp_dropout = [Dropout(dropout, drop_rng) for _ in self.mlp]
        self.lstm = LSTM(self.seq_shape[1], lstm_hidden, lstm_layers, rng)
        self.fc = Dense(sizes[-1] + lstm_hidden, fc_hidden, rng, activation="relu")
        self.fc_dropout = Dropout(dropout, drop_rng)
        self.head = Dense(fc_hidden, 1, rng)

    def _one_hot(self, index, size):
        index = np.asarray(index)
        if index.size and (index.min() < 0 or index.max() >= size):
            raise DataError(f"category index out of range for vocabulary of {size}")
        return np.eye(size)[index]

    def forward(self, data: NeuralData) -> ag.Tensor:
        n = len(data)
        steps, width = self.seq_shape
        flux = np.asarray(data.flux, dtype=np.float64)
        if flux.ndim != 2 or flux.shape[1] != steps * width:
            raise DataError(f"MLP-LSTM expects flux rows of length {steps * width}, got shape {flux.shape}")
        scalars = np.concatenate(
            [data.linear, self._one_hot(data.material, self.n_materials),
             self._one_hot(data.waveform, self.n_waveforms)],
            axis=1,
        )  # fmt: skip
        x = ag.Tensor(scalars)
        for layer, drop in zip(self.mlp, self.mlp_dropout):
            x = drop(layer(x))
        h = self.lstm(ag.Tensor(flux.reshape(n, steps, width)))
        z = self.fc_dropout(self.fc(ag.concat([x, h], axis=-1)))
        return ag.reshape(self.head(z), (n,))


def build_model(kind: str, config: dict) -> Module:
    if kind == MNN.kind:
        return MNN(**config)
    if kind == MlpLstm.kind:
        return MlpLstm(**config)
    raise DataError(f"unknown neural model kind {kind!r}")
