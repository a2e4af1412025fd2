"""Small numpy neural-network stack: autograd core, layers, MNN / MLP-LSTM, training."""

from .autograd import Tensor, no_grad
from .layers import LSTM, Conv1d, Dense, Dropout, Embedding, LSTMCell, Module, lstm_step
from .models import MNN, MlpLstm, NeuralData, build_model
from .training import Adam, History, TrainConfig, predict, train

__all__ = [
    "Tensor", "no_grad", "Module", "Dense", "Conv1d", "Embedding", "Dropout", "LSTMCell",
    "LSTM", "lstm_step", "MNN", "MlpLstm", "NeuralData", "build_model", "Adam", "History",
    "TrainConfig", "predict", "train",
]  # fmt: skip
