"""Windowing, point and variational (Bayes-by-backprop) training, forecasting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import TrainingDiverged
from ..trace import DemandTrace, Normalizer
from .network import PARAM_NAMES, LstmArch, backward, forward, init_params

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class WindowedDataset:
    inputs: np.ndarray  # (N, L_in)
    labels: np.ndarray  # (N, L_pred)

    @property
    def L_in(self) -> int:
        return self.inputs.shape[1]

    @property
    def L_pred(self) -> int:
        return self.labels.shape[1]

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, idx: np.ndarray) -> "WindowedDataset":
        return WindowedDataset(self.inputs[idx], self.labels[idx])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    batch_size: int = 128
    learning_rate: float = 5e-4
    seed: int = 0
    mc_train_samples: int = 1
    prior_sd: float = 1.0
    rho_init: float = -5.0
    log_noise_var_init: float = math.log(1e-2)

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.mc_train_samples < 1:
            raise ValueError("batch_size and mc_train_samples must be >= 1")
        if not self.prior_sd > 0:
            raise ValueError("prior_sd must be > 0")


@dataclass
class PointParams:
    arch: LstmArch
    weights: dict[str, np.ndarray]
    normalizer: Normalizer | None = None
    loss_curve: list[float] = field(default_factory=list)


@dataclass
class VariationalParams:
    arch: LstmArch
    mean: dict[str, np.ndarray]
    rho: dict[str, np.ndarray]
    log_noise_var: float
    normalizer: Normalizer | None = None
    loss_curve: list[float] = field(default_factory=list)

    def weight_sd(self) -> dict[str, np.ndarray]:
        return {k: softplus(v) for k, v in self.rho.items()}

    def sample_weights(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        return {
            k: self.mean[k] + softplus(self.rho[k]) * rng.standard_normal(self.mean[k].shape)
            for k in PARAM_NAMES
        }


@dataclass(frozen=True)
class Forecast:
    """Predictive statistics per cell (rows) and horizon step (columns)."""

    cells: tuple[int, ...]
    mu: np.ndarray  # (n, L_pred)
    sigma: np.ndarray  # (n, L_pred)
    samples: np.ndarray  # (n, S, L_pred)

    @property
    def horizon(self) -> int:
        return self.mu.shape[1]

    def row(self, cell: int) -> int:
        return self.cells.index(cell)

    def upper_ci(self) -> np.ndarray:
        """Gaussian 95% band upper edge, ``mu + 2*sigma``."""
        return self.mu + 2.0 * self.sigma


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# Windowing
# ---------------------------------------------------------------------------


def build_windows(
    trace: DemandTrace, L_in: int, L_pred: int, normalizer: Normalizer | None = None
) -> WindowedDataset:
    """Stride-1 windows of ``L_in + L_pred`` steps, pooled cell by cell."""
    if L_in < 1 or L_pred < 1:
        raise ValueError("L_in and L_pred must be positive")
    span = L_in + L_pred
    if trace.num_steps < span:
        raise ValueError(f"trace of {trace.num_steps} steps is shorter than L_in+L_pred={span}")
    values = normalizer.apply_trace(trace) if normalizer is not None else trace.values
    n_per = trace.num_steps - span + 1
    windows = np.lib.stride_tricks.sliding_window_view(values, span, axis=0)
    # (n_per, cells, span) -> cell-major pooling
    pooled = np.ascontiguousarray(windows.transpose(1, 0, 2)).reshape(-1, span)
    assert pooled.shape[0] == n_per * trace.num_cells
    return WindowedDataset(pooled[:, :L_in].copy(), pooled[:, L_in:].copy())


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def mse_loss(weights, x, y, activation="standard"):
    pred, cache = forward(weights, x[:, :, None], activation)
    diff = pred - y
    loss = float(np.mean(diff * diff))
    grads = backward(weights, cache, 2.0 * diff / diff.size)
    return loss, grads


def gaussian_kl(mean: np.ndarray, sd: np.ndarray, prior_sd: float) -> float:
    return float(np.sum(np.log(prior_sd / sd) + (sd * sd + mean * mean) / (2 * prior_sd**2) - 0.5))


def variational_loss(
    vp: dict[str, np.ndarray],
    x: np.ndarray,
    y: np.ndarray,
    noise: list[dict[str, np.ndarray]],
    num_batches: int,
    prior_sd: float,
    activation: str = "standard",
):
    """Minibatch objective ``KL/num_batches + mean_s NLL_s`` and its gradient.

    ``vp`` holds ``m:<name>``, ``r:<name>`` and ``lv`` (log noise variance).
    ``noise`` is one standard-normal draw per Monte Carlo weight sample.
    """
    lv = float(vp["lv"][0])
    var = math.exp(lv)
    grads = {k: np.zeros_like(v) for k, v in vp.items()}
    nll_total = 0.0
    for eps in noise:
        sd = {k: softplus(vp["r:" + k]) for k in PARAM_NAMES}
        theta = {k: vp["m:" + k] + sd[k] * eps[k] for k in PARAM_NAMES}
        pred, cache = forward(theta, x[:, :, None], activation)
        resid = y - pred
        nll = 0.5 * float(np.sum(LOG_2PI + lv + resid * resid / var))
        nll_total += nll
        g_theta = backward(theta, cache, -resid / var)
        for k in PARAM_NAMES:
            grads["m:" + k] += g_theta[k]
            grads["r:" + k] += g_theta[k] * eps[k] * _sigmoid(vp["r:" + k])
        grads["lv"][0] += 0.5 * float(np.sum(1.0 - resid * resid / var))
    n_mc = len(noise)
    for k in grads:
        grads[k] /= n_mc
    kl = 0.0
    for k in PARAM_NAMES:
        m = vp["m:" + k]
        r = vp["r:" + k]
        s = softplus(r)
        kl += gaussian_kl(m, s, prior_sd)
        grads["m:" + k] += (m / prior_sd**2) / num_batches
        grads["r:" + k] += ((-1.0 / s + s / prior_sd**2) * _sigmoid(r)) / num_batches
    return kl / num_batches + nll_total / n_mc, grads


# ---------------------------------------------------------------------------
# Optimizer and training loops
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _check_data(data: WindowedDataset, arch: LstmArch) -> None:
    if len(data) == 0:
        raise ValueError("training dataset is empty")
    if arch.input_size != 1:
        raise ValueError("demand windows are scalar; arch.input_size must be 1")
    if data.L_pred != arch.output_size:
        raise ValueError(f"arch.output_size={arch.output_size} but labels have {data.L_pred} steps")


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def train_point(
    data: WindowedDataset, arch: LstmArch, cfg: TrainConfig, normalizer: Normalizer | None = None
) -> PointParams:
    """Point-estimate LSTM trained on mean squared error."""
    _check_data(data, arch)
    rng = np.random.default_rng(cfg.seed)
    weights = init_params(arch, rng)
    opt = Adam(weights, cfg.learning_rate)
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for idx in _batches(len(data), cfg.batch_size, rng):
            loss, grads = mse_loss(weights, data.inputs[idx], data.labels[idx], arch.activation)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            opt.step(weights, grads)
            losses.append(loss)
        curve.append(float(np.mean(losses)))
    return PointParams(arch, weights, normalizer, curve)


def _flat_variational(mean, rho, lv) -> dict[str, np.ndarray]:
    flat = {"m:" + k: v.copy() for k, v in mean.items()}
    flat.update({"r:" + k: v.copy() for k, v in rho.items()})
    flat["lv"] = np.array([lv], dtype=float)
    return flat


def train_variational(
    data: WindowedDataset, arch: LstmArch, cfg: TrainConfig, normalizer: Normalizer | None = None
) -> VariationalParams:
    """Bayes-by-backprop with a factorized Gaussian posterior.

    Each minibatch draws ``cfg.mc_train_samples`` weight samples through the
    reparameterization ``theta = m + softplus(rho) * eps``; the KL to the
    ``N(0, prior_sd^2)`` prior is weighted uniformly by ``1/num_batches``.
    """
    _check_data(data, arch)
    rng = np.random.default_rng(cfg.seed)
    mean = init_params(arch, rng)
    rho = {k: np.full_like(v, cfg.rho_init) for k, v in mean.items()}
    flat = _flat_variational(mean, rho, cfg.log_noise_var_init)
    opt = Adam(flat, cfg.learning_rate)
    num_batches = math.ceil(len(data) / cfg.batch_size)
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for idx in _batches(len(data), cfg.batch_size, rng):
            noise = [
                {k: rng.standard_normal(mean[k].shape) for k in PARAM_NAMES}
                for _ in range(cfg.mc_train_samples)
            ]
            loss, grads = variational_loss(
                flat, data.inputs[idx], data.labels[idx], noise, num_batches, cfg.prior_sd, arch.activation
            )
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            opt.step(flat, grads)
            losses.append(loss)
        curve.append(float(np.mean(losses)))
    return VariationalParams(
        arch,
        {k: flat["m:" + k] for k in PARAM_NAMES},
        {k: flat["r:" + k] for k in PARAM_NAMES},
        float(flat["lv"][0]),
        normalizer,
        curve,
    )


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def _normalized_histories(normalizer, histories, cells):
    h = np.atleast_2d(np.asarray(histories, dtype=float))
    if normalizer is None:
        return h
    return normalizer.apply(h.T, cells).T


def _cols(normalizer: Normalizer, cells: Sequence[int]) -> list[int]:
    return [normalizer.cells.index(c) for c in cells]


def _denormalize(normalizer, values: np.ndarray, cells) -> np.ndarray:
    if normalizer is None:
        return values
    j = _cols(normalizer, cells)
    shape = (len(j),) + (1,) * (values.ndim - 1)
    return values * normalizer.scale[j].reshape(shape) + normalizer.offset[j].reshape(shape)


def predict_point(weights: dict[str, np.ndarray], x: np.ndarray, activation="standard") -> np.ndarray:
    return forward(weights, np.asarray(x, float)[:, :, None], activation)[0]


def forecast_cells(
    params: VariationalParams,
    histories: np.ndarray,
    cells: Sequence[int],
    S: int = 30,
    seed: int = 0,
    include_noise: bool = True,
) -> Forecast:
    """Monte Carlo marginal forecast for several cells at once.

    Each of the ``S`` draws samples a full weight set, predicts every cell,
    and (with ``include_noise``) adds observation noise. Samples are mapped
    back to demand units and clipped at zero before summarizing.
    """
    if S < 2:
        raise ValueError("S must be >= 2 for a sample standard deviation")
    cells = tuple(cells)
    h = np.atleast_2d(np.asarray(histories, dtype=float))
    if h.shape[0] != len(cells) or h.shape[1] == 0:
        raise ValueError("histories must be (num_cells, L_in) with L_in >= 1")
    x = _normalized_histories(params.normalizer, h, cells)
    rng = np.random.default_rng(seed)
    noise_sd = math.exp(0.5 * params.log_noise_var)
    draws = np.empty((len(cells), S, params.arch.output_size))
    for s in range(S):
        theta = params.sample_weights(rng)
        pred = predict_point(theta, x, params.arch.activation)
        if include_noise and noise_sd > 0:
            pred = pred + noise_sd * rng.standard_normal(pred.shape)
        draws[:, s] = pred
    samples = np.clip(_denormalize(params.normalizer, draws, cells), 0.0, None)
    return Forecast(cells, samples.mean(axis=1), samples.std(axis=1, ddof=1), samples)


def forecast(
    params: VariationalParams, history: Sequence[float], S: int = 30, seed: int = 0, cell: int | None = None
) -> Forecast:
    """Single-cell forecast from the last ``L_in`` demands."""
    if cell is None:
        cell = params.normalizer.cells[0] if params.normalizer is not None else 0
    return forecast_cells(params, np.asarray(history, float)[None, :], (cell,), S, seed)


def point_forecast_cells(params: PointParams, histories: np.ndarray, cells: Sequence[int]) -> Forecast:
    """Deterministic forecast; one sample per cell and zero spread."""
    cells = tuple(cells)
    h = np.atleast_2d(np.asarray(histories, dtype=float))
    x = _normalized_histories(params.normalizer, h, cells)
    pred = predict_point(params.weights, x, params.arch.activation)
    values = np.clip(_denormalize(params.normalizer, pred, cells), 0.0, None)
    return Forecast(cells, values, np.zeros_like(values), values[:, None, :])
