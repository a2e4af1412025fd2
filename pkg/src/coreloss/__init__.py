"""Magnetic core loss modelling: empirical Steinmetz/iGSE equations, tree ensembles,
small numpy neural networks (MNN, MLP-LSTM) and a validation-weighted hybrid."""

__version__ = "0.1.0"
