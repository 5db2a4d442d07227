"""MLP regressor standing in for the worst-case CVaR solver at planning time.

Training data come from sweeping :func:`wc_cvar_sdp` over the operating
range of one resource model; the regressor sees ``(mu, sigma, z, eps)`` and
the resource constants stay implicit. Fitting is delegated to scikit-learn;
the fitted weights are exported so evaluation is a plain numpy forward pass.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import checkpoint
from ..errors import TrainingDiverged
from .cvar import AmbiguityMoments, ResourceModel, wc_cvar_sdp

DATASET_HEADER = ("mu", "sigma", "z", "epsilon", "zeta_star")


@dataclass(frozen=True)
class SweepSpec:
    mu_range: tuple[float, float] = (0.0, 10.0)
    sigma_range: tuple[float, float] = (0.0, 3.0)
    z_values: tuple[int, ...] = (0, 1, 2, 3)
    eps_values: tuple[float, ...] = (0.05,)
    num_points: int = 10_000
    seed: int = 0


@dataclass(frozen=True)
class SurrogateConfig:
    hidden: tuple[int, ...] = (64, 64, 64, 64)
    epochs: int = 500
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    holdout_fraction: float = 0.1


@dataclass
class SurrogateParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float
    lo: np.ndarray
    hi: np.ndarray
    report: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        # weight decay leaves dead units with subnormal weights, which make
        # every matmul an order of magnitude slower
        tiny = np.finfo(float).tiny
        for arr in (*self.weights, *self.biases):
            arr[np.abs(arr) < tiny] = 0.0

    def to_dict(self) -> dict:
        return {
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "report": self.report,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateParams":
        return cls(
            weights=[np.array(w, float) for w in d["weights"]],
            biases=[np.array(b, float) for b in d["biases"]],
            x_mean=np.asarray(d["x_mean"], float),
            x_scale=np.asarray(d["x_scale"], float),
            y_mean=float(d["y_mean"]),
            y_scale=float(d["y_scale"]),
            lo=np.asarray(d["lo"], float),
            hi=np.asarray(d["hi"], float),
            report=dict(d.get("report", {})),
        )


def generate_sdp_dataset(rm: ResourceModel, sweep: SweepSpec) -> np.ndarray:
    """Rows ``(mu, sigma, z, eps, zeta_star)`` sampled uniformly over the sweep."""
    rng = np.random.default_rng(sweep.seed)
    n = sweep.num_points
    mu = rng.uniform(*sweep.mu_range, size=n)
    sigma = rng.uniform(*sweep.sigma_range, size=n)
    z = rng.choice(np.asarray(sweep.z_values), size=n)
    eps = rng.choice(np.asarray(sweep.eps_values, dtype=float), size=n)
    zeta = np.array(
        [
            wc_cvar_sdp(rm, AmbiguityMoments(float(m), float(s)), int(k), float(e)).zeta_star
            for m, s, k, e in zip(mu, sigma, z, eps)
        ]
    )
    return np.column_stack([mu, sigma, z.astype(float), eps, zeta])


def write_dataset_csv(rows: np.ndarray, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_HEADER)
        for mu, s, z, e, zeta in rows:
            w.writerow([repr(float(mu)), repr(float(s)), int(z), repr(float(e)), repr(float(zeta))])


def read_dataset_csv(path: str | Path) -> np.ndarray:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != DATASET_HEADER:
            raise ValueError(f"{path}: expected header {','.join(DATASET_HEADER)}")
        rows = [[float(x) for x in r] for r in reader if r]
    if not rows:
        raise ValueError(f"{path}: empty dataset")
    return np.asarray(rows)


def _features(mu, sigma, z, eps) -> np.ndarray:
    mu, sigma, z, eps = np.broadcast_arrays(
        np.asarray(mu, float), np.asarray(sigma, float), np.asarray(z, float), np.asarray(eps, float)
    )
    return np.column_stack([mu.ravel(), sigma.ravel(), z.ravel(), np.log(eps.ravel())])


def _forward(params: SurrogateParams, x: np.ndarray) -> np.ndarray:
    h = (x - params.x_mean) / params.x_scale
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            np.maximum(h, 0.0, out=h)
    return h[:, 0] * params.y_scale + params.y_mean


def surrogate_train(dataset: np.ndarray, cfg: SurrogateConfig = SurrogateConfig()) -> SurrogateParams:
    """Fit the MLP by MSE and report hold-out error against the SDP targets."""
    from sklearn.exceptions import ConvergenceWarning
    from sklearn.neural_network import MLPRegressor

    data = np.asarray(dataset, dtype=float)
    if data.ndim != 2 or data.shape[1] != 5 or len(data) < 2:
        raise ValueError("dataset must be an (n>=2, 5) array of mu,sigma,z,eps,zeta")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(data))
    n_hold = max(1, int(round(cfg.holdout_fraction * len(data)))) if cfg.holdout_fraction > 0 else 0
    hold, train = data[perm[:n_hold]], data[perm[n_hold:]]

    x = _features(*train[:, :4].T)
    y = train[:, 4]
    x_mean = x.mean(axis=0)
    x_scale = np.where(x.std(axis=0) > 0, x.std(axis=0), 1.0)
    y_mean = float(y.mean())
    y_scale = float(y.std()) if y.std() > 0 else 1.0

    model = MLPRegressor(
        hidden_layer_sizes=cfg.hidden,
        activation="relu",
        solver="adam",
        batch_size=min(cfg.batch_size, len(train)),
        learning_rate_init=cfg.learning_rate,
        max_iter=cfg.epochs,
        tol=0.0,
        n_iter_no_change=cfg.epochs + 1,
        shuffle=True,
        random_state=cfg.seed,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        model.fit((x - x_mean) / x_scale, (y - y_mean) / y_scale)
    curve = [float(v) for v in model.loss_curve_]
    for epoch, loss in enumerate(curve, start=1):
        if not math.isfinite(loss):
            raise TrainingDiverged(epoch)

    weights = [np.array(w, float) for w in model.coefs_]
    biases = [np.array(b, float) for b in model.intercepts_]
    if y.std() == 0:
        # constant target: the exact fit is a zero read-out around y_mean
        weights[-1] = np.zeros_like(weights[-1])
        biases[-1] = np.zeros_like(biases[-1])
    params = SurrogateParams(
        weights=weights,
        biases=biases,
        x_mean=x_mean,
        x_scale=x_scale,
        y_mean=y_mean,
        y_scale=y_scale,
        lo=data[:, :4].min(axis=0),
        hi=data[:, :4].max(axis=0),
    )
    report = {"epochs": len(curve), "final_loss": curve[-1] if curve else float("nan")}
    if n_hold:
        pred = _forward(params, _features(*hold[:, :4].T))
        mae = float(np.mean(np.abs(pred - hold[:, 4])))
        report.update(
            holdout_mae=mae,
            holdout_mean_abs_target=float(np.mean(np.abs(hold[:, 4]))),
            holdout_points=int(n_hold),
        )
    params.report = report
    params.report["loss_curve"] = curve
    return params


def surrogate_eval(
    params: SurrogateParams,
    mu: float | Sequence[float],
    sigma: float | Sequence[float],
    z: int | Sequence[int],
    eps: float | Sequence[float],
) -> np.ndarray:
    """Batch forward pass; returns one prediction per broadcast input row."""
    return _forward(params, _features(mu, sigma, z, eps))


def out_of_range(params: SurrogateParams, mu, sigma, z, eps) -> np.ndarray:
    """Boolean mask of inputs outside the box spanned by the training sweep."""
    raw = _features(mu, sigma, z, eps)
    raw[:, 3] = np.exp(raw[:, 3])
    return np.any((raw < params.lo - 1e-12) | (raw > params.hi + 1e-12), axis=1)


SURROGATE_KIND = "wc-cvar-surrogate"


def model_key(rm: ResourceModel) -> str:
    """Stable identifier of a resource model, used to key surrogate banks."""
    return json.dumps(rm.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass
class SurrogateBank:
    """One fitted surrogate per distinct resource model."""

    models: dict[str, SurrogateParams] = field(default_factory=dict)

    def add(self, rm: ResourceModel, params: SurrogateParams) -> None:
        self.models[model_key(rm)] = params

    def get(self, rm: ResourceModel) -> SurrogateParams:
        try:
            return self.models[model_key(rm)]
        except KeyError:
            raise KeyError(f"no surrogate trained for resource model {rm.to_dict()}") from None

    def __contains__(self, rm: ResourceModel) -> bool:
        return model_key(rm) in self.models

    def save(self, path: str | Path) -> None:
        entries = [
            {"resource_model": json.loads(k), "params": p.to_dict()} for k, p in sorted(self.models.items())
        ]
        checkpoint.save(path, SURROGATE_KIND, {"models": entries})

    @classmethod
    def load(cls, path: str | Path) -> "SurrogateBank":
        doc = checkpoint.load(path, SURROGATE_KIND)
        bank = cls()
        for e in doc["models"]:
            bank.add(ResourceModel.from_dict(e["resource_model"]), SurrogateParams.from_dict(e["params"]))
        return bank
