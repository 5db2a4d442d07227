"""Single-layer LSTM with a dense read-out, forward and hand-written BPTT.

Parameters live in a flat ``dict[str, ndarray]``:
``Wx (I, 4H)``, ``Wh (H, 4H)``, ``b (4H,)``, ``Wy (H, O)``, ``by (O,)``.
Gate blocks are ordered input, forget, candidate, output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

PARAM_NAMES = ("Wx", "Wh", "b", "Wy", "by")


@dataclass(frozen=True)
class LstmArch:
    input_size: int = 1
    hidden_size: int = 50
    output_size: int = 12
    layers: int = 1
    # "linear" swaps every gate/cell nonlinearity for the identity (gradient checks)
    activation: str = "standard"

    def __post_init__(self) -> None:
        if min(self.input_size, self.hidden_size, self.output_size, self.layers) <= 0:
            raise ValueError("all LSTM sizes must be positive")
        if self.layers != 1:
            raise ValueError("only single-layer LSTMs are supported")
        if self.activation not in ("standard", "linear"):
            raise ValueError(f"unknown activation {self.activation!r}")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        i, h, o = self.input_size, self.hidden_size, self.output_size
        return {"Wx": (i, 4 * h), "Wh": (h, 4 * h), "b": (4 * h,), "Wy": (h, o), "by": (o,)}

    def num_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LstmArch":
        return cls(**d)


def init_params(arch: LstmArch, rng: np.random.Generator) -> dict[str, np.ndarray]:
    h = arch.hidden_size
    shapes = arch.shapes()
    params = {}
    for name in ("Wx", "Wh", "Wy"):
        fan_in, fan_out = shapes[name]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-limit, limit, size=shapes[name])
    params["b"] = np.zeros(4 * h)
    params["b"][h : 2 * h] = 1.0
    params["by"] = np.zeros(arch.output_size)
    return params


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def forward(
    params: dict[str, np.ndarray], x: np.ndarray, activation: str = "standard"
) -> tuple[np.ndarray, list]:
    """Run a batch ``x (B, T, I)``; returns predictions ``(B, O)`` and a tape."""
    if x.ndim != 3 or x.shape[1] == 0:
        raise ValueError("input must be (batch, steps>=1, features)")
    B, T, _ = x.shape
    H = params["Wh"].shape[0]
    linear = activation == "linear"
    sig = (lambda v: v) if linear else _sigmoid
    tanh = (lambda v: v) if linear else np.tanh
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    tape = []
    xw = x @ params["Wx"] + params["b"]
    for t in range(T):
        a = xw[:, t] + h @ params["Wh"]
        i = sig(a[:, :H])
        f = sig(a[:, H : 2 * H])
        g = tanh(a[:, 2 * H : 3 * H])
        o = sig(a[:, 3 * H :])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = tanh(c)
        h = o * tc
        tape.append((h_prev, c_prev, i, f, g, o, tc))
    y = h @ params["Wy"] + params["by"]
    return y, [x, h, tape, linear]


def backward(
    params: dict[str, np.ndarray], cache: list, dy: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given ``dy = dL/dy``; full BPTT."""
    x, h_last, tape, linear = cache
    H = params["Wh"].shape[0]
    grads = {
        "Wy": h_last.T @ dy,
        "by": dy.sum(axis=0),
        "Wx": np.zeros_like(params["Wx"]),
        "Wh": np.zeros_like(params["Wh"]),
        "b": np.zeros_like(params["b"]),
    }
    dh = dy @ params["Wy"].T
    dc = np.zeros_like(dh)
    da = np.empty((dh.shape[0], 4 * H))
    WhT = params["Wh"].T
    for t in range(len(tape) - 1, -1, -1):
        h_prev, c_prev, i, f, g, o, tc = tape[t]
        do = dh * tc
        if linear:
            dc = dc + dh * o
            da[:, :H] = dc * g
            da[:, H : 2 * H] = dc * c_prev
            da[:, 2 * H : 3 * H] = dc * i
            da[:, 3 * H :] = do
        else:
            dc = dc + dh * o * (1.0 - tc * tc)
            da[:, :H] = dc * g * i * (1.0 - i)
            da[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
            da[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
            da[:, 3 * H :] = do * o * (1.0 - o)
        grads["Wx"] += x[:, t].T @ da
        grads["Wh"] += h_prev.T @ da
        grads["b"] += da.sum(axis=0)
        dh = da @ WhT
        dc = dc * f
    return grads
