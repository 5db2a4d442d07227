"""MU state machine, environment lookup and realized per-step accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigurationError
from ..planner import IDL, OPT, TRA, Action, Costs, TransitMatrix
from ..robust.cvar import ResourceModel, excess_demand, utility
from ..trace import DemandTrace


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything the simulator needs besides traces and trained models.

    Cells are addressed by column index into the simulated trace; ``models``
    holds one resource model per column.
    """

    models: tuple[ResourceModel, ...]
    transit: TransitMatrix
    m: int = 3
    costs: Costs = field(default_factory=Costs)
    P: float = 5e5
    epsilon: float = 0.05
    eta: float = 0.8
    L_in: int = 144
    L_pred: int = 12
    S: int = 30
    step_minutes: int = 10
    seed: int = 0
    order: str = "fixed"
    initial_cells: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ConfigurationError("need at least one MU")
        if not 0 < self.epsilon < 1:
            raise ConfigurationError("epsilon must lie in (0, 1)")
        if not 0 < self.eta <= 1:
            raise ConfigurationError("eta must lie in (0, 1]")
        if min(self.L_in, self.L_pred) < 1 or self.S < 2:
            raise ConfigurationError("L_in, L_pred must be >= 1 and S >= 2")
        if self.P < 0:
            raise ConfigurationError("penalty constant must be >= 0")
        if self.transit.n != len(self.models):
            raise ConfigurationError("transit matrix size differs from the number of cells")
        if self.initial_cells is not None:
            if len(self.initial_cells) != self.m:
                raise ConfigurationError("initial_cells needs one entry per MU")
            if any(not 0 <= c < self.num_cells for c in self.initial_cells):
                raise ConfigurationError("initial cell index out of range")

    @property
    def num_cells(self) -> int:
        return len(self.models)

    def start_cells(self) -> tuple[int, ...]:
        if self.initial_cells is not None:
            return self.initial_cells
        return tuple(i % self.num_cells for i in range(self.m))


@dataclass(frozen=True)
class MuState:
    mode: str
    location: int  # current cell, or transit origin
    destination: int | None = None
    remaining_transit: int = 0

    def __post_init__(self) -> None:
        if self.mode not in (OPT, TRA, IDL):
            raise ValueError(f"unknown mode {self.mode!r}")
        if (self.remaining_transit > 0) != (self.mode == TRA):
            raise ValueError("remaining_transit > 0 exactly when in transit")
        if self.mode == TRA and self.destination is None:
            raise ValueError("MU in transit needs a destination")

    @property
    def schedulable(self) -> bool:
        return self.mode != TRA


def initial_states(scenario: ScenarioConfig, mode: str = IDL) -> list[MuState]:
    return [MuState(mode, c) for c in scenario.start_cells()]


def step_environment(trace: DemandTrace, t: int) -> np.ndarray:
    if not 0 <= t < trace.num_steps:
        raise IndexError(f"step {t} outside trace of {trace.num_steps} steps")
    return trace.values[t].copy()


def apply_actions(
    states: Sequence[MuState], actions: Sequence[Action], transit: TransitMatrix
) -> list[MuState]:
    """Transition each MU at the start of a step."""
    if len(actions) != len(states):
        raise ValueError("need one action per MU")
    out = []
    for i, (s, a) in enumerate(zip(states, actions)):
        if not s.schedulable:
            if a.mode is not None:
                raise RuntimeError(f"MU {i} is in transit and cannot take action {a.mode!r}")
            out.append(s)
            continue
        if a.mode is None:
            raise RuntimeError(f"MU {i} is schedulable but received no action")
        if a.mode == TRA:
            if a.destination is None or a.destination == s.location:
                raise ValueError(f"MU {i}: transit needs a destination other than cell {s.location}")
            out.append(MuState(TRA, s.location, a.destination, transit(s.location, a.destination)))
        elif a.mode in (OPT, IDL):
            out.append(MuState(a.mode, s.location))
        else:
            raise ValueError(f"unknown mode {a.mode!r}")
    return out


def end_step(states: Sequence[MuState]) -> list[MuState]:
    """Advance transit by one step; arrivals become idle at the destination."""
    out = []
    for s in states:
        if s.mode == TRA:
            left = s.remaining_transit - 1
            out.append(MuState(IDL, s.destination) if left == 0 else MuState(TRA, s.location, s.destination, left))
        else:
            out.append(s)
    return out


def mode_counts(states: Sequence[MuState]) -> dict[str, int]:
    counts = {OPT: 0, TRA: 0, IDL: 0}
    for s in states:
        counts[s.mode] += 1
    return counts


def operational_counts(states: Sequence[MuState], num_cells: int) -> np.ndarray:
    z = np.zeros(num_cells, dtype=int)
    for s in states:
        if s.mode == OPT:
            z[s.location] += 1
    return z


@dataclass(frozen=True)
class StepLedger:
    step: int
    demand: np.ndarray  # per cell
    utility: np.ndarray
    penalty: np.ndarray
    excess: np.ndarray  # realized excess demand, may be -inf
    z_opt: int
    z_tra: int
    z_idl: int
    cost: float
    profit: float

    @property
    def violations(self) -> int:
        return int(np.sum(self.excess > 0))

    @property
    def total_excess(self) -> float:
        return float(np.sum(np.maximum(self.excess, 0.0)))


def realized_profit(
    models: Sequence[ResourceModel],
    demands: np.ndarray,
    states: Sequence[MuState],
    costs: Costs,
    P: float,
    step: int = 0,
) -> StepLedger:
    n = len(models)
    if len(demands) != n:
        raise ValueError("one demand per cell required")
    z = operational_counts(states, n)
    util = np.array([utility(models[a], float(demands[a]), int(z[a])) for a in range(n)])
    excess = np.array([excess_demand(models[a], float(demands[a]), int(z[a])) for a in range(n)])
    if np.any(excess == math.inf):
        bad = int(np.argmax(excess == math.inf))
        raise ConfigurationError(f"cell {bad} cannot meet its fixed resource needs with {z[bad]} MUs")
    penalty = P * np.maximum(excess, 0.0)
    counts = mode_counts(states)
    cost = costs.c_opt * counts[OPT] + costs.c_tra * counts[TRA] + costs.c_idl * counts[IDL]
    profit = float(np.sum(util - penalty) - cost)
    return StepLedger(step, np.asarray(demands, float).copy(), util, penalty, excess, counts[OPT], counts[TRA], counts[IDL], float(cost), profit)
