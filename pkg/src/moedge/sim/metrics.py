"""Aggregate per-step ledgers into a report and serialize runs."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import StepLedger

REPORT_SCHEMA = "moedge-report"
REPORT_VERSION = 1
ACTION_LOG_HEADER = ("step", "mu_id", "mode", "location", "destination")
LEDGER_HEADER = (
    "step", "profit", "utility", "penalty", "cost", "excess", "violations", "z_opt", "z_tra", "z_idl",
)


@dataclass
class SimReport:
    policy: str
    num_steps: int
    average_profit: float
    total_profit: float
    violation_count: int
    total_excess: float
    utility_total: float
    penalty_total: float
    cost_total: float
    mode_ratios: dict[str, float]
    transit_ratio_by_time_of_day: list[float | None]
    demand_by_time_of_day: list[float | None]
    meta: dict = field(default_factory=dict)
    # wall-clock means per decision step; kept out of the deterministic JSON
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("timings")
        return {"schema": REPORT_SCHEMA, "version": REPORT_VERSION, **d}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SimReport":
        if d.get("schema") != REPORT_SCHEMA or d.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema')!r} v{d.get('version')}")
        body = {k: v for k, v in d.items() if k not in ("schema", "version")}
        return cls(**body)


def collect_metrics(
    ledgers: Sequence[StepLedger],
    policy: str = "",
    timings: Sequence[dict[str, float]] = (),
    steps_per_day: int = 144,
    meta: dict | None = None,
) -> SimReport:
    n = len(ledgers)
    profits = np.array([l.profit for l in ledgers])
    m = max((l.z_opt + l.z_tra + l.z_idl for l in ledgers), default=0)
    if n and m:
        ratios = {
            mode: float(np.mean([getattr(l, "z_" + mode) / m for l in ledgers])) for mode in ("opt", "tra", "idl")
        }
    else:
        ratios = {"opt": 0.0, "tra": 0.0, "idl": 0.0}
    by_tod: list[list[float]] = [[] for _ in range(steps_per_day)]
    demand_tod: list[list[float]] = [[] for _ in range(steps_per_day)]
    for l in ledgers:
        demand_tod[l.step % steps_per_day].append(float(l.demand.sum()))
        if m:
            by_tod[l.step % steps_per_day].append(l.z_tra / m)
    tod = [float(np.mean(v)) if v else None for v in by_tod]
    mean_timings = {}
    if timings:
        for key in timings[0]:
            mean_timings[key] = float(np.mean([t[key] for t in timings]))
    return SimReport(
        policy=policy,
        num_steps=n,
        average_profit=float(profits.mean()) if n else 0.0,
        total_profit=float(profits.sum()),
        violation_count=int(sum(l.violations for l in ledgers)),
        total_excess=float(sum(l.total_excess for l in ledgers)),
        utility_total=float(sum(float(l.utility.sum()) for l in ledgers)),
        penalty_total=float(sum(float(l.penalty.sum()) for l in ledgers)),
        cost_total=float(sum(l.cost for l in ledgers)),
        mode_ratios=ratios,
        transit_ratio_by_time_of_day=tod,
        demand_by_time_of_day=[float(np.mean(v)) if v else None for v in demand_tod],
        meta=dict(meta or {}),
        timings=mean_timings,
    )


def _num(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else str(x)


def write_ledger_csv(ledgers: Sequence[StepLedger], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEDGER_HEADER)
        for l in ledgers:
            w.writerow([
                l.step, _num(l.profit), _num(l.utility.sum()), _num(l.penalty.sum()), _num(l.cost),
                _num(l.total_excess), l.violations, l.z_opt, l.z_tra, l.z_idl,
            ])


def write_action_log(rows: Sequence[tuple], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ACTION_LOG_HEADER)
        for step, mu, mode, loc, dst in rows:
            w.writerow([step, mu, mode, loc, "" if dst is None else dst])


def write_timings(timings: Sequence[dict[str, float]], path: str | Path) -> None:
    Path(path).write_text(json.dumps(list(timings), indent=1) + "\n", encoding="utf-8")
