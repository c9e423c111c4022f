"""Model checkpoints: one versioned JSON file, weights as base64 float64 blobs.

The ``checksum`` field is the SHA-256 of the canonical JSON encoding
(sorted keys, no whitespace) of every other field. Parameter blocks are
listed in the model's flat order.
"""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np

from .data import _atomic_write
from .errors import CheckpointVersionError, CorruptCheckpointError, InvalidArgumentError
from .models import PredictionModel, RecognitionModel, TrainingConfig
from .nn import Params
from .vocabulary import ActionVocabulary

CHECKPOINT_FORMAT = "anticipate-checkpoint"
CHECKPOINT_VERSION = 1


def _canonical(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_array(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def decode_array(data: str, shape) -> np.ndarray:
    raw = base64.b64decode(data.encode("ascii"), validate=True)
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def checkpoint_dict(model) -> dict:
    if isinstance(model, PredictionModel):
        labels = {"vocabulary": list(model.vocabulary.symbols)}
        classes = model.vocab_size
    elif isinstance(model, RecognitionModel):
        labels = {"intentions": list(model.intentions.symbols)}
        classes = model.n_classes
    else:
        raise InvalidArgumentError(f"cannot checkpoint {type(model).__name__}")
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "dims": {"feature_dim": model.feature_dim, "embed_dim": model.embed_dim,
                 "hidden_dim": model.hidden_dim, "n_classes": classes},
        "dropout": model.dropout,
        "seed": model.seed,
        **labels,
        "config": None if model.config is None else model.config.to_dict(),
        "params": [{"name": k, "shape": list(v.shape), "dtype": "<f8", "data": encode_array(v)}
                   for k, v in model.params.items()],
    }
    payload["checksum"] = hashlib.sha256(_canonical(payload)).hexdigest()
    return payload


def save_checkpoint(model, path) -> Path:
    path = Path(path)
    _atomic_write(path, json.dumps(checkpoint_dict(model), indent=1) + "\n")
    return path


def model_from_dict(payload: dict):
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpointError("not an anticipate checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {payload.get('version')!r}, this build reads {CHECKPOINT_VERSION}")
    body = {k: v for k, v in payload.items() if k != "checksum"}
    if hashlib.sha256(_canonical(body)).hexdigest() != payload.get("checksum"):
        raise CorruptCheckpointError("checksum mismatch")
    try:
        params = Params({p["name"]: decode_array(p["data"], p["shape"]) for p in payload["params"]})
        dims = payload["dims"]
        config = None if payload["config"] is None else TrainingConfig.from_dict(payload["config"])
        common = dict(params=params, feature_dim=dims["feature_dim"], hidden_dim=dims["hidden_dim"],
                      embed_dim=dims["embed_dim"], dropout=payload["dropout"], seed=payload["seed"], config=config)
        if payload["kind"] == "prediction":
            return PredictionModel(vocabulary=ActionVocabulary(payload["vocabulary"]), **common)
        if payload["kind"] == "recognition":
            return RecognitionModel(intentions=ActionVocabulary(payload["intentions"]), **common)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"malformed checkpoint: {exc}") from None
    raise CorruptCheckpointError(f"unknown model kind {payload.get('kind')!r}")


def load_checkpoint(path):
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpointError(f"{path} is not a complete checkpoint: {exc}") from None
    return model_from_dict(payload)
