"""Versioned JSON container shared by predictor and surrogate checkpoints."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CheckpointError

FORMAT = "moedge-checkpoint"
VERSION = 1


def arrays_to_lists(arrays: dict[str, np.ndarray]) -> dict[str, Any]:
    return {k: np.asarray(v, dtype=float).tolist() for k, v in sorted(arrays.items())}


def lists_to_arrays(d: dict[str, Any]) -> dict[str, np.ndarray]:
    return {k: np.asarray(v, dtype=float) for k, v in d.items()}


def dumps(kind: str, payload: dict[str, Any]) -> str:
    doc = {"format": FORMAT, "version": VERSION, "kind": kind, **payload}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def save(path: str | Path, kind: str, payload: dict[str, Any]) -> None:
    Path(path).write_text(dumps(kind, payload), encoding="utf-8")


def load(path: str | Path, kind: str) -> dict[str, Any]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported version {doc.get('version')}")
    if doc.get("kind") != kind:
        raise CheckpointError(f"{path}: holds a {doc.get('kind')!r} model, expected {kind!r}")
    return doc
