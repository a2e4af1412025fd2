"""Loss models over whole datasets.

Each wrapper owns its input encoding (vocabularies, standardizer, target
transform), so ``fit(train, val)`` and ``predict(ds)`` speak in datasets and
W/m^3. ``state()``/``from_state()`` give a JSON-ready description used by the
model file.
"""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import asdict
from typing import ClassVar

import numpy as np

from . import trees
from .data import Dataset, Standardizer, fit_standardizer
from .empirical import IgseModel, SteinmetzCoeffs, igse_fit, igse_predict_batch, se_fit, se_predict
from .errors import DataError
from .evaluation import HybridWeights, MetricsReport, fit_hybrid_weights
from .neural import MNN, History, MlpLstm, NeuralData, TrainConfig, build_model
from .neural import predict as neural_predict
from .neural import train as neural_train
from .waveform import FEATURE_NAMES, FEATURE_SET_VERSION, FLUX_LENGTH, feature_matrix

log = logging.getLogger(__name__)

TREE_FEATURE_NAMES = (*FEATURE_NAMES, "temperature_z", "frequency_z", "material_index", "waveform_index")
NEURAL_INPUT_NAMES = (f"flux[{FLUX_LENGTH}]", "temperature_z", "frequency_z", "material_index", "waveform_index")
EMPIRICAL_INPUT_NAMES = ("material", "frequency_Hz", f"flux[{FLUX_LENGTH}]")
TARGET_TRANSFORMS = ("log", "none")

assert len(TREE_FEATURE_NAMES) == 37


def feature_checksum(names) -> str:
    text = FEATURE_SET_VERSION + "\n" + "\n".join(names)
    return hashlib.sha256(text.encode()).hexdigest()


class Vocab:
    """Category -> index tables, frozen at training time."""

    def __init__(self, materials, waveforms):
        self.materials = tuple(materials)
        self.waveforms = tuple(waveforms)

    @classmethod
    def from_dataset(cls, ds: Dataset) -> Vocab:
        return cls(ds.material_vocab, ds.waveform_vocab)

    def encode(self, ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
        return _lookup(self.materials, ds.materials, "material"), _lookup(self.waveforms, ds.waveform_classes, "waveform")

    def to_dict(self) -> dict:
        return {"materials": list(self.materials), "waveforms": list(self.waveforms)}

    @classmethod
    def from_dict(cls, d) -> Vocab:
        return cls(d["materials"], d["waveforms"])


def _lookup(vocab, values, what) -> np.ndarray:
    table = {v: i for i, v in enumerate(vocab)}
    try:
        return np.array([table[v] for v in values], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"{what} {exc.args[0]!r} is not in the training vocabulary {list(vocab)}") from None


class LossModel:
    kind: ClassVar[str] = ""
    input_names: ClassVar[tuple[str, ...]] = ()

    fitted = False

    @classmethod
    def checksum(cls) -> str:
        return feature_checksum(cls.input_names)

    def _require_fitted(self):
        if not self.fitted:
            raise DataError(f"{self.kind} model is not trained")

    def fit(self, train: Dataset, val: Dataset | None = None):
        raise NotImplementedError

    def predict(self, ds: Dataset) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, ds: Dataset) -> MetricsReport:
        """Metrics in W/m^3 on a labeled dataset."""
        self._require_fitted()
        if len(ds) == 0:
            raise DataError("cannot evaluate on an empty split")
        if not ds.labeled:
            raise DataError("evaluation needs a labeled dataset")
        return MetricsReport.compute(ds.loss, self.predict(ds))

    def state(self) -> dict:
        raise NotImplementedError

    @classmethod
    def from_state(cls, state: dict) -> LossModel:
        raise NotImplementedError


def _require_labels(ds: Dataset, what: str):
    if len(ds) == 0:
        raise DataError(f"{what} split is empty")
    if not ds.labeled:
        raise DataError(f"{what} split has missing losses")


# -- tree ensembles --------------------------------------------------------------------


def tree_features(ds: Dataset, vocab: Vocab, scaler: Standardizer) -> np.ndarray:
    """The 37-column matrix: sequence features, standardized T and f, category codes."""
    mat, wav = vocab.encode(ds)
    return np.column_stack([
        feature_matrix(ds.waveforms()),
        scaler.transform("temperature", ds.temperature),
        scaler.transform("frequency", ds.frequency),
        mat, wav,
    ])  # fmt: skip


class TreeEnsembleModel(LossModel):
    input_names = TREE_FEATURE_NAMES

    def __init__(self, params=None, seed: int = 0, target: str = "log"):
        if target not in TARGET_TRANSFORMS:
            raise DataError(f"target transform must be one of {TARGET_TRANSFORMS}, got {target!r}")
        self.params = params if params is not None else self.default_params()
        self.seed = seed
        self.target = target
        self.vocab: Vocab | None = None
        self.scaler: Standardizer | None = None
        self.ensemble = None

    def _y(self, ds: Dataset) -> np.ndarray:
        return np.log(ds.loss) if self.target == "log" else ds.loss

    def _to_loss(self, raw: np.ndarray) -> np.ndarray:
        return np.exp(raw) if self.target == "log" else raw

    def features(self, ds: Dataset) -> np.ndarray:
        self._require_fitted()
        return tree_features(ds, self.vocab, self.scaler)

    def predict(self, ds: Dataset) -> np.ndarray:
        X = self.features(ds)
        return self._to_loss(self.ensemble.predict(X))

    def _prepare(self, train: Dataset) -> np.ndarray:
        _require_labels(train, "training")
        self.vocab = Vocab.from_dataset(train)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # a constant T channel is legitimate here
            self.scaler = fit_standardizer(train)
        return tree_features(train, self.vocab, self.scaler)

    def _base_state(self) -> dict:
        return {"params": asdict(self.params), "seed": self.seed, "target": self.target,
                "vocab": self.vocab.to_dict(), "scaler": self.scaler.to_dict()}

    def _load_base(self, state):
        self.vocab = Vocab.from_dict(state["vocab"])
        self.scaler = Standardizer.from_dict(state["scaler"])
        self.fitted = True


def _trees_state(tree_list) -> list[dict]:
    return [t.to_arrays() for t in tree_list]


def _trees_from_state(items) -> list[trees.DecisionTree]:
    return [trees.DecisionTree.from_arrays(d) for d in items]


class RandomForestModel(TreeEnsembleModel):
    kind = "rf"

    @staticmethod
    def default_params():
        return trees.ForestParams()

    def fit(self, train: Dataset, val: Dataset | None = None):
        X = self._prepare(train)
        self.ensemble = trees.rf_train(X, self._y(train), self.params, self.seed)
        self.fitted = True
        return self

    def state(self) -> dict:
        self._require_fitted()
        return {**self._base_state(), "trees": _trees_state(self.ensemble.trees)}

    @classmethod
    def from_state(cls, state) -> RandomForestModel:
        params = trees.ForestParams(**state["params"])
        m = cls(params, state["seed"], state["target"])
        m._load_base(state)
        m.ensemble = trees.ForestModel(_trees_from_state(state["trees"]), len(TREE_FEATURE_NAMES), m.seed, params)
        return m


class BoostedTreesModel(TreeEnsembleModel):
    kind = "gbt"

    @staticmethod
    def default_params():
        return trees.GbtParams()

    def fit(self, train: Dataset, val: Dataset | None = None):
        if val is None:
            raise DataError("gradient boosting needs a validation split for early stopping")
        X = self._prepare(train)
        _require_labels(val, "validation")
        X_val = tree_features(val, self.vocab, self.scaler)
        self.ensemble = trees.gbt_train(X, self._y(train), X_val, self._y(val), self.params, self.seed)
        self.fitted = True
        log.info("boosting stopped with best iteration %d of %d", self.ensemble.best_iteration, len(self.ensemble.trees))
        return self

    def state(self) -> dict:
        self._require_fitted()
        e = self.ensemble
        return {**self._base_state(), "base_score": e.base_score, "learning_rate": e.learning_rate,
                "best_iteration": e.best_iteration, "train_mse": e.train_mse, "valid_mse": e.valid_mse,
                "trees": _trees_state(e.trees)}  # fmt: skip

    @classmethod
    def from_state(cls, state) -> BoostedTreesModel:
        params = trees.GbtParams(**state["params"])
        m = cls(params, state["seed"], state["target"])
        m._load_base(state)
        m.ensemble = trees.GbtModel(
            state["base_score"], _trees_from_state(state["trees"]), state["learning_rate"],
            state["best_iteration"], len(TREE_FEATURE_NAMES), params,
            list(state["train_mse"]), list(state["valid_mse"]),
        )  # fmt: skip
        return m


# -- neural networks -------------------------------------------------------------------

NEURAL_CHANNELS = ("temperature", "frequency", "flux", "log_loss")


class NeuralLossModel(LossModel):
    """MNN or MLP-LSTM trained on the standardized log loss."""

    input_names = NEURAL_INPUT_NAMES

    def __init__(self, arch: dict | None = None, config: TrainConfig | None = None, seed: int = 0):
        self.arch = dict(arch or {})
        self.config = config if config is not None else self.default_config(seed)
        self.seed = seed
        self.vocab: Vocab | None = None
        self.scaler: Standardizer | None = None
        self.network = None
        self.history: History | None = None

    @staticmethod
    def default_config(seed: int) -> TrainConfig:
        return TrainConfig.mnn(seed=seed)

    def encode(self, ds: Dataset, with_target: bool = True) -> NeuralData:
        mat, wav = self.vocab.encode(ds)
        linear = np.column_stack([self.scaler.transform("temperature", ds.temperature),
                                  self.scaler.transform("frequency", ds.frequency)])
        target = self.scaler.transform("log_loss", np.log(ds.loss)) if with_target else None
        return NeuralData(self.scaler.transform("flux", ds.flux), mat, wav, linear, target)

    def fit(self, train: Dataset, val: Dataset | None = None):
        if val is None:
            raise DataError("neural training needs a validation split for early stopping")
        _require_labels(train, "training")
        _require_labels(val, "validation")
        self.vocab = Vocab.from_dataset(train)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            self.scaler = fit_standardizer(train, NEURAL_CHANNELS)
        self.network = self._build()
        self.network, self.history = neural_train(self.network, self.encode(train), self.encode(val), self.config)
        self.fitted = True
        return self

    def _build(self):
        arch = {"seed": self.seed, **self.arch,
                "n_materials": len(self.vocab.materials), "n_waveforms": len(self.vocab.waveforms)}
        return build_model(self.kind, arch)

    def predict(self, ds: Dataset) -> np.ndarray:
        self._require_fitted()
        z = neural_predict(self.network, self.encode(ds, with_target=False))
        return np.exp(self.scaler.inverse("log_loss", z))

    def state(self) -> dict:
        self._require_fitted()
        return {
            "arch": self.network.config,
            "train_config": self.config.to_dict(),
            "seed": self.seed,
            "vocab": self.vocab.to_dict(),
            "scaler": self.scaler.to_dict(),
            "parameters": self.network.state_dict(),
            "history": self.history.to_dict(),
        }

    @classmethod
    def from_state(cls, state) -> NeuralLossModel:
        m = cls(state["arch"], TrainConfig(**state["train_config"]), state["seed"])
        m.vocab = Vocab.from_dict(state["vocab"])
        m.scaler = Standardizer.from_dict(state["scaler"])
        m.network = build_model(cls.kind, state["arch"])
        m.network.load_state_dict(state["parameters"])
        m.network.eval()
        m.history = History.from_dict(state["history"])
        m.fitted = True
        return m


class MnnModel(NeuralLossModel):
    kind = MNN.kind


class MlpLstmModel(NeuralLossModel):
    kind = MlpLstm.kind

    @staticmethod
    def default_config(seed: int) -> TrainConfig:
        return TrainConfig.mlp_lstm(seed=seed)


# -- empirical equations ---------------------------------------------------------------


def _coeffs_state(c: SteinmetzCoeffs) -> dict:
    return {"k": c.k, "a": c.a, "b": c.b, "material": c.material}


class SteinmetzModel(LossModel):
    """Per-material SE fitted on the sine rows; B_max is max(B) of each waveform."""

    kind = "se"
    input_names = EMPIRICAL_INPUT_NAMES

    def __init__(self, refine: bool = False):
        self.refine = refine
        self.coeffs: dict[str, SteinmetzCoeffs] = {}

    def fit(self, train: Dataset, val: Dataset | None = None):
        _require_labels(train, "training")
        self.coeffs = {}
        for material in train.material_vocab:
            rows = train.where((np.asarray(train.materials) == material) & (np.asarray(train.waveform_classes) == "sine"))
            if len(rows) == 0:
                raise DataError(f"material {material!r} has no sine rows to fit the Steinmetz equation")
            self.coeffs[material] = se_fit(rows.frequency, rows.flux.max(axis=1), rows.loss,
                                           refine=self.refine, material=material)
        self.fitted = True
        return self

    def predict(self, ds: Dataset) -> np.ndarray:
        self._require_fitted()
        out = np.empty(len(ds))
        mats = np.asarray(ds.materials)
        for material in np.unique(mats):
            if material not in self.coeffs:
                raise DataError(f"no Steinmetz coefficients for material {material!r}")
            rows = mats == material
            out[rows] = se_predict(self.coeffs[material], ds.frequency[rows], ds.flux[rows].max(axis=1))
        return out

    def state(self) -> dict:
        self._require_fitted()
        return {"refine": self.refine, "coeffs": {m: _coeffs_state(c) for m, c in self.coeffs.items()}}

    @classmethod
    def from_state(cls, state) -> SteinmetzModel:
        m = cls(state["refine"])
        m.coeffs = {name: SteinmetzCoeffs(**c) for name, c in state["coeffs"].items()}
        m.fitted = True
        return m


class IgseLossModel(LossModel):
    """Per-material iGSE fitted on all waveform rows."""

    kind = "igse"
    input_names = EMPIRICAL_INPUT_NAMES

    def __init__(self, max_iter: int = 2000):
        self.max_iter = max_iter
        self.models: dict[str, IgseModel] = {}

    def fit(self, train: Dataset, val: Dataset | None = None):
        _require_labels(train, "training")
        self.models = {}
        for material in train.material_vocab:
            rows = train.where(np.asarray(train.materials) == material)
            self.models[material] = igse_fit(rows.flux, rows.frequency, rows.loss,
                                             waveform_class=rows.waveform_classes, material=material,
                                             max_iter=self.max_iter)  # fmt: skip
        self.fitted = True
        return self

    def predict(self, ds: Dataset) -> np.ndarray:
        self._require_fitted()
        out = np.empty(len(ds))
        mats = np.asarray(ds.materials)
        for material in np.unique(mats):
            if material not in self.models:
                raise DataError(f"no iGSE coefficients for material {material!r}")
            rows = mats == material
            out[rows] = igse_predict_batch(self.models[material], ds.flux[rows], ds.frequency[rows])
        return out

    def state(self) -> dict:
        self._require_fitted()
        return {"max_iter": self.max_iter,
                "models": {m: {**_coeffs_state(x.coeffs), "converged": x.converged, "degenerate": x.degenerate}
                           for m, x in self.models.items()}}  # fmt: skip

    @classmethod
    def from_state(cls, state) -> IgseLossModel:
        m = cls(state["max_iter"])
        for name, d in state["models"].items():
            c = SteinmetzCoeffs(d["k"], d["a"], d["b"], d["material"])
            m.models[name] = IgseModel(c, converged=d["converged"], degenerate=d["degenerate"])
        m.fitted = True
        return m


def material_table(model: LossModel, ds: Dataset, waveform: str | None = None) -> list[dict]:
    """Per-material coefficient and error rows (SE: sine rows only)."""
    rows = []
    for material in ds.material_vocab:
        mask = np.asarray(ds.materials) == material
        if waveform is not None:
            mask &= np.asarray(ds.waveform_classes) == waveform
        part = ds.where(mask)
        if len(part) == 0:
            continue
        if isinstance(model, SteinmetzModel):
            c = model.coeffs[material]
        else:
            c = model.models[material].coeffs
        report = model.evaluate(part)
        rows.append({"material": material, "k": c.k, "a": c.a, "b": c.b, "n": report.n,
                     "mape_pct": report.mape, "max_ape_pct": report.max_ape,
                     "r2": report.r2})
    return rows


# -- hybrid ----------------------------------------------------------------------------


class HybridModel(LossModel):
    """w1 * first + w2 * second with weights picked on the validation split."""

    kind = "hybrid"

    def __init__(self, first: LossModel, second: LossModel, weights: HybridWeights | None = None):
        self.first, self.second = first, second
        self.weights = weights
        self.fitted = weights is not None

    @property
    def input_names(self):
        return (f"{self.first.kind}:{self.first.checksum()}", f"{self.second.kind}:{self.second.checksum()}")

    def checksum(self) -> str:
        return feature_checksum(self.input_names)

    def fit(self, train: Dataset | None = None, val: Dataset | None = None):
        """Fit the blend weights only; the components must already be trained."""
        if val is None:
            raise DataError("hybrid weights are fit on a validation split")
        _require_labels(val, "validation")
        self.weights = fit_hybrid_weights(self.first.predict(val), self.second.predict(val), val.loss)
        self.fitted = True
        return self

    def predict(self, ds: Dataset) -> np.ndarray:
        self._require_fitted()
        return self.weights.blend(self.first.predict(ds), self.second.predict(ds))

    def state(self) -> dict:
        self._require_fitted()
        return {"weights": self.weights.to_dict(),
                "first": {"kind": self.first.kind, "state": self.first.state()},
                "second": {"kind": self.second.kind, "state": self.second.state()}}

    @classmethod
    def from_state(cls, state) -> HybridModel:
        first = MODEL_KINDS[state["first"]["kind"]].from_state(state["first"]["state"])
        second = MODEL_KINDS[state["second"]["kind"]].from_state(state["second"]["state"])
        return cls(first, second, HybridWeights.from_dict(state["weights"]))


MODEL_KINDS: dict[str, type[LossModel]] = {
    cls.kind: cls
    for cls in (RandomForestModel, BoostedTreesModel, MnnModel, MlpLstmModel, SteinmetzModel, IgseLossModel, HybridModel)
}
