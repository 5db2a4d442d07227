"""Receding-horizon policy drivers (SP, MP, LP) and the ST/GD baselines."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigurationError, MissingArtifact
from ..planner import (
    IDL,
    NO_ACTION,
    OPT,
    TRA,
    Action,
    ForecastValues,
    extract_next_actions,
    plan_multi,
)
from ..predictor.training import PointParams, VariationalParams, forecast_cells, point_forecast_cells
from ..robust.surrogate import SurrogateBank, out_of_range, surrogate_eval
from ..trace import DemandTrace
from .env import (
    MuState,
    ScenarioConfig,
    StepLedger,
    apply_actions,
    end_step,
    initial_states,
    realized_profit,
    step_environment,
)
from .metrics import SimReport, collect_metrics

POLICIES = ("SP", "MP", "LP", "ST", "GD")
_NEEDS = {
    "SP": ("variational",),
    "MP": ("variational", "surrogate"),
    "LP": ("point",),
    "GD": ("variational",),
    "ST": ("train_trace",),
}


@dataclass
class Artifacts:
    variational: VariationalParams | None = None
    point: PointParams | None = None
    surrogate: SurrogateBank | None = None
    train_trace: DemandTrace | None = None


@dataclass
class SimRun:
    report: SimReport
    ledgers: list[StepLedger]
    action_log: list[tuple]
    timings: list[dict[str, float]] = field(default_factory=list)


def required_artifacts(policy: str) -> tuple[str, ...]:
    if policy not in _NEEDS:
        raise ValueError(f"unknown policy {policy!r}; choose from {', '.join(POLICIES)}")
    return _NEEDS[policy]


def baseline_static(scenario: ScenarioConfig, train_trace: DemandTrace) -> tuple[int, ...]:
    """Column indices of the ``m`` cells with the largest total training demand."""
    n = train_trace.num_cells
    if scenario.m > n:
        raise ConfigurationError(f"static placement needs m <= {n} cells, got m={scenario.m}")
    totals = train_trace.values.sum(axis=0)
    order = sorted(range(n), key=lambda a: (-totals[a], a))
    return tuple(sorted(order[: scenario.m]))


def baseline_greedy(mu: np.ndarray, scenario: ScenarioConfig, states: Sequence[MuState]) -> list[Action]:
    """Send MUs to the top-``m`` cells by mean forecast, pairing nearest first.

    In-transit MUs take part in the pairing from their destination but keep
    travelling. Unpaired schedulable MUs idle.
    """
    n = mu.shape[0]
    means = mu.mean(axis=1)
    targets = sorted(range(n), key=lambda a: (-means[a], a))[: scenario.m]
    pos = [s.location if s.schedulable else s.destination for s in states]
    pairs = sorted(
        (scenario.transit(pos[i], b), i, b) for i in range(len(states)) for b in targets
    )
    assigned: dict[int, int] = {}
    taken: set[int] = set()
    for _, i, b in pairs:
        if i not in assigned and b not in taken:
            assigned[i] = b
            taken.add(b)
    actions = []
    for i, s in enumerate(states):
        if not s.schedulable:
            actions.append(NO_ACTION)
        elif i not in assigned:
            actions.append(Action(IDL))
        elif assigned[i] == s.location:
            actions.append(Action(OPT))
        else:
            actions.append(Action(TRA, assigned[i]))
    return actions


def _committed(states: Sequence[MuState], n: int, L: int) -> np.ndarray:
    occ = np.zeros((n, L), dtype=int)
    for s in states:
        if not s.schedulable and s.remaining_transit < L:
            occ[s.destination, s.remaining_transit :] += 1
    return occ


def _surrogate_fn(bank: SurrogateBank, scenario: ScenarioConfig, flagged: list[int]):
    """Surrogate risk engine; ``flagged[0]`` counts inputs outside the trained box."""
    params = [bank.get(rm) for rm in scenario.models]

    def fn(a, mu, sigma, z):
        flagged[0] += int(np.sum(out_of_range(params[a], mu, sigma, z, scenario.epsilon)))
        return surrogate_eval(params[a], mu, sigma, z, scenario.epsilon)

    return fn


def _plan_step(policy, scenario, art, hist, cells, states, seed, timing, zeta_fn=None):
    """Forecast and plan one decision round; returns the actions."""
    start = time.perf_counter()
    if policy == "LP":
        fc = point_forecast_cells(art.point, hist, cells)
    else:
        fc = forecast_cells(art.variational, hist, cells, S=scenario.S, seed=seed)
    if fc.horizon != scenario.L_pred:
        raise ConfigurationError(f"predictor horizon {fc.horizon} differs from L_pred={scenario.L_pred}")
    timing["forecast_s"] = time.perf_counter() - start

    start = time.perf_counter()
    if policy == "GD":
        actions = baseline_greedy(fc.mu, scenario, states)
        risk = 0.0
    else:
        engine = {"SP": "sdp", "MP": "surrogate", "LP": "point"}[policy]
        values = ForecastValues(
            fc.mu, fc.sigma, fc.samples, scenario.models, scenario.P, scenario.epsilon, engine,
            zeta_fn=zeta_fn if engine == "surrogate" else None,
        )
        starts = [s.location if s.schedulable else None for s in states]
        committed = _committed(states, scenario.num_cells, scenario.L_pred)
        plans = plan_multi(
            starts, values, scenario.costs, scenario.eta, scenario.transit, scenario.order, committed
        )
        actions = extract_next_actions(plans)
        risk = values.risk_seconds
    total = time.perf_counter() - start
    timing["risk_s"] = risk
    timing["plan_s"] = total - risk
    timing["decision_s"] = timing["forecast_s"] + total
    return actions


def run_policy(
    scenario: ScenarioConfig, trace: DemandTrace, policy: str, artifacts: Artifacts | None = None
) -> SimRun:
    """Simulate ``policy`` over ``trace``; the first ``L_in`` steps are warm-up.

    At the end of step ``t`` the policy sees demands up to ``t`` and picks
    actions for step ``t + 1``; only the first planned action is executed.
    """
    art = artifacts or Artifacts()
    for name in required_artifacts(policy):
        if getattr(art, name) is None:
            raise MissingArtifact(f"policy {policy} needs the {name} artifact")
    if trace.num_cells != scenario.num_cells:
        raise ConfigurationError("trace and scenario disagree on the number of cells")
    if trace.num_steps <= scenario.L_in:
        raise ConfigurationError("trace is not longer than the warm-up window")

    if policy == "ST":
        placement = baseline_static(scenario, art.train_trace)
        states = [MuState(OPT, c) for c in placement]
    else:
        states = initial_states(scenario)

    flagged = [0]
    zeta_fn = _surrogate_fn(art.surrogate, scenario, flagged) if policy == "MP" else None
    ledgers, log, timings = [], [], []
    for t in range(trace.num_steps):
        if t >= scenario.L_in:
            if policy == "ST":
                actions = [Action(OPT)] * scenario.m
            else:
                timing: dict[str, float] = {}
                hist = trace.values[t - scenario.L_in : t].T
                seed = scenario.seed * 1_000_003 + t
                actions = _plan_step(policy, scenario, art, hist, trace.cells, states, seed, timing, zeta_fn)
                timings.append(timing)
            states = apply_actions(states, actions, scenario.transit)
            for i, s in enumerate(states):
                log.append((t, i, s.mode, trace.cells[s.location],
                            None if s.destination is None else trace.cells[s.destination]))
        d = step_environment(trace, t)
        ledger = realized_profit(scenario.models, d, states, scenario.costs, scenario.P, step=t)
        if t >= scenario.L_in:
            ledgers.append(ledger)
        states = end_step(states)

    meta = {
        "P": scenario.P,
        "epsilon": scenario.epsilon,
        "L_pred": scenario.L_pred,
        "L_in": scenario.L_in,
        "m": scenario.m,
        "seed": scenario.seed,
        "cells": list(trace.cells),
    }
    if policy == "MP":
        meta["surrogate_out_of_range"] = flagged[0]
    report = collect_metrics(
        ledgers, policy, timings, steps_per_day=(24 * 60) // scenario.step_minutes, meta=meta
    )
    return SimRun(report, ledgers, log, timings)
