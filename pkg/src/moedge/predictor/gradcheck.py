"""Central finite-difference check of the hand-written LSTM gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import PARAM_NAMES, LstmArch, init_params
from .training import mse_loss, variational_loss

# Entries smaller than this fraction of the largest gradient entry are
# compared against that floor instead of their own magnitude.
GRAD_FLOOR_REL = 1e-3


@dataclass(frozen=True)
class GradCheckReport:
    loss: str
    num_params: int
    max_rel_error: float
    max_abs_error: float
    worst_param: str
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def gradient_check(
    arch: LstmArch,
    loss: str = "mse",
    tolerance: float = 1e-4,
    seq_len: int = 5,
    batch: int = 4,
    step: float = 1e-5,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients to ``(L(w+h) - L(w-h)) / 2h`` for every scalar.

    ``loss`` is ``"mse"`` (point network) or ``"variational"`` (weight-space
    noise held fixed so the objective is deterministic). Relative error is
    ``|a - n| / max(|a|, |n|, GRAD_FLOOR_REL * max_j |a_j|)``.
    """
    if seq_len < 1:
        raise ValueError("input sequence must have at least one step")
    if arch.hidden_size > 16:
        raise ValueError("gradient check is meant for tiny networks (hidden <= 16)")
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, seq_len))
    y = rng.normal(size=(batch, arch.output_size))
    base = init_params(arch, rng)
    for k in base:
        base[k] = base[k] + 0.1 * rng.normal(size=base[k].shape)

    if loss == "mse":
        params = base

        def evaluate(p):
            return mse_loss(p, x, y, arch.activation)

    elif loss == "variational":
        params = {"m:" + k: v for k, v in base.items()}
        params.update({"r:" + k: rng.uniform(-3.0, -1.0, size=v.shape) for k, v in base.items()})
        params["lv"] = np.array([np.log(0.5)])
        noise = [{k: rng.standard_normal(base[k].shape) for k in PARAM_NAMES}]

        def evaluate(p):
            return variational_loss(p, x, y, noise, 3, 1.0, arch.activation)

    else:
        raise ValueError(f"unknown loss {loss!r}")

    _, analytic = evaluate(params)
    floor = GRAD_FLOOR_REL * max(float(np.abs(g).max()) for g in analytic.values())
    worst = (0.0, 0.0, "")
    count = 0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = evaluate(params)[0]
            flat[j] = orig - step
            down = evaluate(params)[0]
            flat[j] = orig
            numeric = (up - down) / (2 * step)
            a = analytic[name].reshape(-1)[j]
            abs_err = abs(a - numeric)
            rel = abs_err / max(abs(a), abs(numeric), floor)
            count += 1
            if rel > worst[0]:
                worst = (rel, abs_err, f"{name}[{j}]")
    return GradCheckReport(loss, count, worst[0], worst[1], worst[2], tolerance)
