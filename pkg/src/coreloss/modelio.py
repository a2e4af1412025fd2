"""Versioned JSON model files.

Layout::

    {"format": "coreloss-model", "version": 1, "kind": "gbt",
     "feature_checksum": "<sha256 of the input order>",
     "payload_sha256": "<sha256 of the canonical payload JSON>",
     "payload": {...}}

Arrays are stored as base64 of their little-endian bytes with dtype and shape,
so floats round-trip bit-exactly.
"""

from __future__ import annotations

import base64
import hashlib
import json

import numpy as np

from ._io import atomic_write_text
from .errors import ModelFileError
from .pipeline import MODEL_KINDS, HybridModel, LossModel

MODEL_FORMAT = "coreloss-model"
MODEL_VERSION = 1
_ARRAY_TAG = "__ndarray__"


def _encode(obj):
    if isinstance(obj, np.ndarray):
        arr = np.ascontiguousarray(obj)
        dtype = arr.dtype.newbyteorder("<")
        return {_ARRAY_TAG: base64.b64encode(arr.astype(dtype).tobytes()).decode("ascii"),
                "dtype": dtype.str, "shape": list(arr.shape)}
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if _ARRAY_TAG in obj:
            raw = base64.b64decode(obj[_ARRAY_TAG])
            return np.frombuffer(raw, dtype=np.dtype(obj["dtype"])).reshape(obj["shape"]).copy()
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def _canonical(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=True)


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def model_document(model: LossModel) -> dict:
    payload = _encode(model.state())
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model.kind,
        "feature_checksum": model.checksum(),
        "payload_sha256": _digest(_canonical(payload)),
        "payload": payload,
    }


def save_model(model: LossModel, path) -> None:
    atomic_write_text(path, json.dumps(model_document(model), sort_keys=True) + "\n")


def load_model(path, expect_kind: str | tuple[str, ...] | None = None) -> LossModel:
    """Read and verify a model file; ``expect_kind`` restricts the accepted kinds."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc.strerror}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFileError(f"model file {path} is not valid JSON: {exc}") from exc
    return model_from_document(doc, expect_kind, source=str(path))


def model_from_document(doc, expect_kind=None, source="<document>") -> LossModel:
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFileError(f"{source} is not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFileError(f"{source} has format version {doc.get('version')!r}; this build reads version {MODEL_VERSION}")
    kind = doc.get("kind")
    if kind not in MODEL_KINDS:
        raise ModelFileError(f"{source} has unknown model kind {kind!r}")
    if expect_kind is not None:
        allowed = (expect_kind,) if isinstance(expect_kind, str) else tuple(expect_kind)
        if kind not in allowed:
            raise ModelFileError(f"{source} holds a {kind!r} model, expected {' or '.join(map(repr, allowed))}")
    payload = doc.get("payload")
    if _digest(_canonical(payload)) != doc.get("payload_sha256"):
        raise ModelFileError(f"{source} failed its payload checksum; the file is corrupted or was edited")
    cls = MODEL_KINDS[kind]
    if cls is not HybridModel and doc.get("feature_checksum") != cls.checksum():
        raise ModelFileError(
            f"{source} was built for a different feature order (checksum {str(doc.get('feature_checksum'))[:12]}...); "
            f"this build expects {cls.checksum()[:12]}..."
        )
    try:
        model = cls.from_state(_decode(payload))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"{source} has a malformed {kind} payload: {exc}") from exc
    if cls is HybridModel and doc.get("feature_checksum") != model.checksum():
        raise ModelFileError(f"{source} hybrid components disagree with the stored feature checksum")
    return model
