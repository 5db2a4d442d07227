"""Finite-horizon MU planning on a time-expanded DAG.

Cells are addressed by column index ``0..n-1`` and horizon steps by offset
``j``: node ``(a, j)`` is "in cell ``a`` at the end of step ``t + j``", so
``j = 0`` is the decision instant and an edge leaving ``(a, j)`` covers
step ``t + j + 1``. Gains at offset ``j`` are discounted by ``eta**j``.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Protocol, Sequence

import numpy as np

from .robust.cvar import (
    AmbiguityMoments,
    ResourceModel,
    excess_demand,
    expected_penalty,
    expected_utility,
    wc_cvar_sdp,
)

OPT, TRA, IDL = "opt", "tra", "idl"
RISK_ENGINES = ("sdp", "surrogate", "point")
_TIE = 1e-12


class Action(NamedTuple):
    mode: str | None  # None: no action (MU in transit)
    destination: int | None = None


NO_ACTION = Action(None, None)


@dataclass(frozen=True)
class Costs:
    c_opt: float = 1.0
    c_tra: float = 1.0
    c_idl: float = 0.5

    def __post_init__(self) -> None:
        if min(self.c_opt, self.c_tra, self.c_idl) < 0:
            raise ValueError("MU costs must be nonnegative")

    def of(self, mode: str) -> float:
        return {OPT: self.c_opt, TRA: self.c_tra, IDL: self.c_idl}[mode]


@dataclass(frozen=True)
class TransitMatrix:
    steps: np.ndarray  # (n, n) integer steps, zero diagonal

    def __post_init__(self) -> None:
        s = np.asarray(self.steps)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError("transit matrix must be square")
        if not np.array_equal(s, s.T):
            raise ValueError("transit matrix must be symmetric")
        if np.any(np.diag(s) != 0):
            raise ValueError("transit matrix diagonal must be zero")
        off = s[~np.eye(len(s), dtype=bool)]
        if np.any(off < 1):
            raise ValueError("transit times between distinct cells must be >= 1 step")
        object.__setattr__(self, "steps", s.astype(int))

    @property
    def n(self) -> int:
        return self.steps.shape[0]

    def __call__(self, a: int, b: int) -> int:
        return int(self.steps[a, b])

    @classmethod
    def uniform(cls, n: int, steps: int = 1) -> "TransitMatrix":
        return cls(steps * (1 - np.eye(n, dtype=int)))

    @classmethod
    def from_centroids(
        cls, centroids_m: np.ndarray, speed_kmh: float = 15.0, step_minutes: int = 10
    ) -> "TransitMatrix":
        """Centroid distance over speed, rounded up to whole steps (min 1)."""
        c = np.asarray(centroids_m, dtype=float)
        dist = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1))
        per_step = speed_kmh * 1000.0 / 60.0 * step_minutes
        steps = np.maximum(np.ceil(dist / per_step - 1e-12), 1).astype(int)
        np.fill_diagonal(steps, 0)
        return cls(steps)


# ---------------------------------------------------------------------------
# Step values and gains
# ---------------------------------------------------------------------------


class StepValues(Protocol):
    """Expected ``U - P`` of cell ``a`` at offset ``j`` (step ``t+1+j``) with ``z`` MUs."""

    num_cells: int
    horizon: int

    def value(self, a: int, j: int, z: int) -> float: ...


@dataclass
class TableValues:
    """Explicit ``(n, L, z_max + 1)`` value table; mainly for tests."""

    table: np.ndarray

    @property
    def num_cells(self) -> int:
        return self.table.shape[0]

    @property
    def horizon(self) -> int:
        return self.table.shape[1]

    def value(self, a: int, j: int, z: int) -> float:
        return float(self.table[a, j, min(z, self.table.shape[2] - 1)])


@dataclass
class ForecastValues:
    """Values from forecast samples (utility) and a risk engine (penalty).

    ``zeta_fn`` is only used by the ``surrogate`` engine; it maps
    ``(cell_index, mu, sigma, z)`` arrays to estimated excess demand.
    """

    mu: np.ndarray  # (n, L)
    sigma: np.ndarray  # (n, L)
    samples: np.ndarray  # (n, S, L)
    models: Sequence[ResourceModel]
    P: float
    epsilon: float
    engine: str = "sdp"
    zeta_fn: Callable[[int, np.ndarray, np.ndarray, int], np.ndarray] | None = None
    risk_seconds: float = 0.0
    risk_evaluations: int = 0
    _zeta: dict = field(default_factory=dict, repr=False)
    _util: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.engine not in RISK_ENGINES:
            raise ValueError(f"unknown risk engine {self.engine!r}")
        if self.engine == "surrogate" and self.zeta_fn is None:
            raise ValueError("surrogate engine needs zeta_fn")
        if self.mu.shape != self.sigma.shape or self.samples.shape[::2] != self.mu.shape:
            raise ValueError("forecast arrays disagree in shape")
        if len(self.models) != self.mu.shape[0]:
            raise ValueError("need one resource model per cell")

    @property
    def num_cells(self) -> int:
        return self.mu.shape[0]

    @property
    def horizon(self) -> int:
        return self.mu.shape[1]

    def zeta(self, a: int, z: int) -> np.ndarray:
        """Estimated excess demand of cell ``a`` over the horizon with ``z`` MUs."""
        key = (a, z)
        if key not in self._zeta:
            start = time.perf_counter()
            rm = self.models[a]
            if self.engine == "sdp":
                out = np.array(
                    [
                        wc_cvar_sdp(rm, AmbiguityMoments(float(m), float(s)), z, self.epsilon).zeta_star
                        for m, s in zip(self.mu[a], self.sigma[a])
                    ]
                )
            elif self.engine == "point":
                out = np.asarray(excess_demand(rm, self.mu[a], z), dtype=float)
            else:
                out = np.asarray(self.zeta_fn(a, self.mu[a], self.sigma[a], z), dtype=float)
            self.risk_seconds += time.perf_counter() - start
            self.risk_evaluations += self.horizon
            self._zeta[key] = out
        return self._zeta[key]

    def value(self, a: int, j: int, z: int) -> float:
        key = (a, j, z)
        if key not in self._util:
            self._util[key] = expected_utility(self.models[a], self.samples[a, :, j], z)
        return self._util[key] - expected_penalty(float(self.zeta(a, z)[j]), self.P)


@dataclass(frozen=True)
class GainTable:
    """Discounted reward gains for one MU given the occupancy of earlier MUs."""

    opt: np.ndarray  # (n, L)
    idl: np.ndarray  # (n, L)
    transit: TransitMatrix
    c_tra: float
    eta: float

    @property
    def num_cells(self) -> int:
        return self.opt.shape[0]

    @property
    def horizon(self) -> int:
        return self.opt.shape[1]

    def tra(self, a: int, b: int, j: int) -> float:
        """Gain of leaving ``a`` for ``b`` at offset ``j``; cost accrues per transit step."""
        T = self.transit(a, b)
        return -self.c_tra * sum(self.eta ** (j + s) for s in range(T))


def reward_gains(
    values: StepValues,
    occupancy: np.ndarray,
    costs: Costs,
    eta: float,
    transit: TransitMatrix,
) -> GainTable:
    """``opt`` gain ``[V(z+1) - V(z)] - c_opt`` and ``idl`` gain ``-c_idl``, discounted."""
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    n, L = values.num_cells, values.horizon
    if occupancy.shape != (n, L):
        raise ValueError(f"occupancy shape {occupancy.shape} != {(n, L)}")
    if transit.n != n:
        raise ValueError("transit matrix does not match the number of cells")
    disc = eta ** np.arange(L)
    opt = np.empty((n, L))
    for a in range(n):
        for j in range(L):
            z = int(occupancy[a, j])
            opt[a, j] = values.value(a, j, z + 1) - values.value(a, j, z) - costs.c_opt
    opt *= disc
    idl = np.broadcast_to(-costs.c_idl * disc, (n, L)).copy()
    return GainTable(opt, idl, transit, costs.c_tra, eta)


# ---------------------------------------------------------------------------
# Graph and shortest path
# ---------------------------------------------------------------------------


@dataclass
class PlanGraph:
    num_cells: int
    horizon: int
    source: tuple[int, int]
    stay_edges: dict[tuple[int, int], tuple[float, str]]
    transit_edges: dict[tuple[int, int], list[tuple[int, int, float]]]

    @property
    def nodes(self) -> list[tuple[int, int]]:
        return [(a, j) for j in range(self.horizon + 1) for a in range(self.num_cells)]

    def num_edges(self) -> int:
        return len(self.stay_edges) + sum(len(v) for v in self.transit_edges.values())

    def to_dict(self) -> dict:
        return {
            "source": list(self.source),
            "stay": [
                {"from": [a, j], "to": [a, j + 1], "length": l, "mode": m}
                for (a, j), (l, m) in sorted(self.stay_edges.items())
            ],
            "transit": [
                {"from": [a, j], "to": [b, k], "length": l}
                for (a, j), edges in sorted(self.transit_edges.items())
                for b, k, l in edges
            ],
        }


def build_plan_graph(gains: GainTable, start_cell: int, horizon: int | None = None) -> PlanGraph:
    L = gains.horizon if horizon is None else horizon
    if L > gains.horizon:
        raise ValueError("gain table does not cover the horizon")
    n = gains.num_cells
    stay: dict[tuple[int, int], tuple[float, str]] = {}
    transit: dict[tuple[int, int], list[tuple[int, int, float]]] = {}
    for j in range(L):
        for a in range(n):
            l_opt, l_idl = -gains.opt[a, j], -gains.idl[a, j]
            stay[(a, j)] = (l_opt, OPT) if l_opt < l_idl else (l_idl, IDL)
            out = []
            for b in range(n):
                if b == a:
                    continue
                k = j + gains.transit(a, b)
                if k <= L:
                    out.append((b, k, -gains.tra(a, b, j)))
            transit[(a, j)] = out
    return PlanGraph(n, L, (start_cell, 0), stay, transit)


@dataclass
class MuPlan:
    path: list[tuple[int, int]]
    modes: list[str]
    length: float

    @property
    def reward(self) -> float:
        return -self.length

    @property
    def first_action(self) -> Action:
        if not self.modes:
            return NO_ACTION
        if self.modes[0] == TRA:
            return Action(TRA, self.path[1][0])
        return Action(self.modes[0], None)

    @property
    def tentative_actions(self) -> list[tuple[str, int]]:
        return [(m, dst[0]) for m, dst in zip(self.modes[1:], self.path[2:])]

    def operational_nodes(self) -> list[tuple[int, int]]:
        """``(cell, offset)`` pairs where this plan is operational."""
        return [node for node, m in zip(self.path, self.modes) if m == OPT]

    def to_dict(self) -> dict:
        return {"path": [list(p) for p in self.path], "modes": self.modes, "length": self.length}


def min_length_path(g: PlanGraph) -> MuPlan:
    """Exact shortest source-to-terminal path via one reverse-topological sweep.

    Nodes are ordered by offset, which every edge strictly increases. Ties
    prefer the stay edge, then the transit edge to the lower cell index.
    """
    n, L = g.num_cells, g.horizon
    dist = np.full((n, L + 1), math.inf)
    dist[:, L] = 0.0
    choice: dict[tuple[int, int], tuple[int, int, str]] = {}
    for j in range(L - 1, -1, -1):
        for a in range(n):
            length, mode = g.stay_edges[(a, j)]
            best = length + dist[a, j + 1]
            pick = (a, j + 1, mode)
            for b, k, l in g.transit_edges.get((a, j), ()):
                cand = l + dist[b, k]
                if cand < best - _TIE * (1.0 + abs(best)):
                    best, pick = cand, (b, k, TRA)
            dist[a, j] = best
            choice[(a, j)] = pick
    a, j = g.source
    if not math.isfinite(dist[a, j]):
        raise RuntimeError("no terminal node reachable from the source")
    path, modes = [(a, j)], []
    while j < L:
        b, k, mode = choice[(a, j)]
        path.append((b, k))
        modes.append(mode)
        a, j = b, k
    return MuPlan(path, modes, float(dist[g.source]))


# ---------------------------------------------------------------------------
# Multiple MUs
# ---------------------------------------------------------------------------


def plan_single(
    start_cell: int,
    values: StepValues,
    occupancy: np.ndarray,
    costs: Costs,
    eta: float,
    transit: TransitMatrix,
) -> MuPlan:
    gains = reward_gains(values, occupancy, costs, eta, transit)
    return min_length_path(build_plan_graph(gains, start_cell))


def plan_multi(
    starts: Sequence[int | None],
    values: StepValues,
    costs: Costs,
    eta: float,
    transit: TransitMatrix,
    order: str = "fixed",
    committed: np.ndarray | None = None,
) -> list[MuPlan | None]:
    """Plan MUs one at a time, folding earlier operational placements into ``z``.

    ``starts[i]`` is the cell of MU ``i`` at the decision instant, or
    ``None`` if it is in transit (no plan). ``committed`` pre-loads occupancy,
    e.g. arrivals of in-transit MUs. ``order="greedy"`` plans every remaining
    MU and commits the one with the largest reward first.
    """
    if order not in ("fixed", "greedy"):
        raise ValueError(f"unknown order {order!r}")
    n, L = values.num_cells, values.horizon
    occ = np.zeros((n, L), dtype=int) if committed is None else committed.astype(int).copy()
    plans: list[MuPlan | None] = [None] * len(starts)
    pending = [i for i, s in enumerate(starts) if s is not None]

    def commit(i: int, plan: MuPlan) -> None:
        plans[i] = plan
        for a, j in plan.operational_nodes():
            occ[a, j] += 1

    if order == "fixed":
        for i in pending:
            commit(i, plan_single(starts[i], values, occ, costs, eta, transit))
        return plans

    while pending:
        trial = [(plan_single(starts[i], values, occ, costs, eta, transit), i) for i in pending]
        plan, i = min(trial, key=lambda pi: (pi[0].length, pi[1]))
        commit(i, plan)
        pending.remove(i)
    return plans


def extract_next_actions(plans: Sequence[MuPlan | None]) -> list[Action]:
    return [NO_ACTION if p is None else p.first_action for p in plans]


def dump_plans(graphs: Sequence[PlanGraph], plans: Sequence[MuPlan | None]) -> str:
    doc = {
        "graphs": [g.to_dict() for g in graphs],
        "plans": [None if p is None else p.to_dict() for p in plans],
    }
    return json.dumps(doc, indent=2, sort_keys=True)
