"""Versioned model checkpoints: config header plus named parameter blobs."""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .models import ModelConfig, SequenceModel, init_model

__all__ = ["save_model", "load_model", "CHECKPOINT_VERSION"]

CHECKPOINT_VERSION = 1


def save_model(
    model: SequenceModel,
    path: str | Path,
    *,
    optimizer_state: dict | None = None,
    extra: dict | None = None,
) -> None:
    """Write parameters (bit-exact) with the config and optional train state."""
    meta = {
        "format": "hypolab-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "extra": extra or {},
        "has_optimizer": optimizer_state is not None,
    }
    arrays: dict[str, np.ndarray] = {
        f"param:{name}": p.data for name, p in model.parameters().items()
    }
    if optimizer_state is not None:
        arrays["opt:step"] = np.asarray(optimizer_state["step"], dtype=np.int64)
        for name, arr in optimizer_state["m"].items():
            arrays[f"opt:m:{name}"] = arr
        for name, arr in optimizer_state["v"].items():
            arrays[f"opt:v:{name}"] = arr
    arrays["meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        np.savez(f, **arrays)
    tmp.replace(path)


def load_model(
    path: str | Path, *, expect_config: ModelConfig | None = None
) -> tuple[SequenceModel, dict | None, dict]:
    """Rebuild a model from a checkpoint; returns (model, optimizer_state, extra)."""
    try:
        with np.load(path) as z:
            data = {k: z[k] for k in z.files}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if "meta" not in data:
        raise CheckpointError(f"{path} has no checkpoint metadata")
    try:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from exc
    if meta.get("format") != "hypolab-checkpoint":
        raise CheckpointError(f"{path} is not a model checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {meta.get('version')} != {CHECKPOINT_VERSION}"
        )
    config = ModelConfig.from_dict(meta["config"])
    if expect_config is not None and config != expect_config:
        raise CheckpointError(
            f"checkpoint config {config} does not match expected {expect_config}"
        )
    model = init_model(config)
    for name, p in model.parameters().items():
        key = f"param:{name}"
        if key not in data:
            raise CheckpointError(f"checkpoint is missing parameter {name}")
        arr = data[key]
        if arr.shape != p.data.shape or arr.dtype != p.data.dtype:
            raise CheckpointError(
                f"parameter {name}: checkpoint has {arr.dtype}{arr.shape}, "
                f"model needs {p.data.dtype}{p.data.shape}"
            )
        p.data = np.ascontiguousarray(arr)
    optimizer_state = None
    if meta.get("has_optimizer"):
        optimizer_state = {
            "step": int(data["opt:step"]),
            "m": {
                k.removeprefix("opt:m:"): np.ascontiguousarray(v)
                for k, v in data.items()
                if k.startswith("opt:m:")
            },
            "v": {
                k.removeprefix("opt:v:"): np.ascontiguousarray(v)
                for k, v in data.items()
                if k.startswith("opt:v:")
            },
        }
    return model, optimizer_state, meta.get("extra", {})
