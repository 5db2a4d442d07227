"""Checkpoint round-trip for point and variational predictors."""

from __future__ import annotations

from pathlib import Path

from .. import checkpoint
from ..errors import CheckpointError
from ..trace import Normalizer
from .network import LstmArch
from .training import PointParams, VariationalParams

POINT_KIND = "point-lstm"
VARIATIONAL_KIND = "variational-lstm"


def _check_shapes(arch: LstmArch, arrays: dict, path) -> None:
    for name, shape in arch.shapes().items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name}")
        if tuple(arrays[name].shape) != shape:
            raise CheckpointError(
                f"{path}: parameter {name} has shape {tuple(arrays[name].shape)}, architecture needs {shape}"
            )


def _normalizer(d):
    return None if d is None else Normalizer.from_dict(d)


def point_payload(p: PointParams) -> dict:
    return {
        "arch": p.arch.to_dict(),
        "weights": checkpoint.arrays_to_lists(p.weights),
        "normalizer": None if p.normalizer is None else p.normalizer.to_dict(),
        "loss_curve": list(p.loss_curve),
    }


def variational_payload(p: VariationalParams) -> dict:
    return {
        "arch": p.arch.to_dict(),
        "mean": checkpoint.arrays_to_lists(p.mean),
        "rho": checkpoint.arrays_to_lists(p.rho),
        "log_noise_var": float(p.log_noise_var),
        "normalizer": None if p.normalizer is None else p.normalizer.to_dict(),
        "loss_curve": list(p.loss_curve),
    }


def save_point(p: PointParams, path: str | Path) -> None:
    checkpoint.save(path, POINT_KIND, point_payload(p))


def save_variational(p: VariationalParams, path: str | Path) -> None:
    checkpoint.save(path, VARIATIONAL_KIND, variational_payload(p))


def load_point(path: str | Path, arch: LstmArch | None = None) -> PointParams:
    """Load a point model; if ``arch`` is given it must match the stored one."""
    doc = checkpoint.load(path, POINT_KIND)
    stored = LstmArch.from_dict(doc["arch"])
    if arch is not None and arch != stored:
        raise CheckpointError(f"{path}: architecture {stored} does not match requested {arch}")
    weights = checkpoint.lists_to_arrays(doc["weights"])
    _check_shapes(stored, weights, path)
    return PointParams(stored, weights, _normalizer(doc["normalizer"]), list(doc["loss_curve"]))


def load_variational(path: str | Path, arch: LstmArch | None = None) -> VariationalParams:
    doc = checkpoint.load(path, VARIATIONAL_KIND)
    stored = LstmArch.from_dict(doc["arch"])
    if arch is not None and arch != stored:
        raise CheckpointError(f"{path}: architecture {stored} does not match requested {arch}")
    mean = checkpoint.lists_to_arrays(doc["mean"])
    rho = checkpoint.lists_to_arrays(doc["rho"])
    _check_shapes(stored, mean, path)
    _check_shapes(stored, rho, path)
    return VariationalParams(
        stored, mean, rho, float(doc["log_noise_var"]), _normalizer(doc["normalizer"]), list(doc["loss_curve"])
    )
