"""Command-line front end: ``ingest``, ``train``, ``simulate``, ``report``.

Every command reads one JSON config (unknown keys are rejected), writes
under ``--out-dir`` with stable file names, and exits with
0 success, 2 config, 3 training, 4 missing artifact, 5 report schema.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CheckpointError, ConfigurationError, MissingArtifact, TrainingDiverged
from .planner import Costs, TransitMatrix
from .predictor.io import load_point, load_variational, save_point, save_variational
from .predictor.network import LstmArch
from .predictor.training import TrainConfig, build_windows, train_point, train_variational
from .robust.cvar import ResourceModel
from .robust.surrogate import (
    SurrogateBank,
    SurrogateConfig,
    SweepSpec,
    generate_sdp_dataset,
    read_dataset_csv,
    surrogate_train,
    write_dataset_csv,
)
from .sim.env import ScenarioConfig
from .sim.metrics import SimReport, write_action_log, write_ledger_csv, write_timings
from .sim.policies import POLICIES, Artifacts, run_policy
from .trace import (
    GridSpec,
    Normalizer,
    SplitSpec,
    SyntheticProfile,
    TraceError,
    fit_normalizer,
    generate_synthetic_trace,
    ingest_csv,
    merge_cells,
    read_trace_csv,
    select_top_cells,
    split_dataset,
    write_trace_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_TRAINING, EXIT_ARTIFACT, EXIT_SCHEMA = 0, 2, 3, 4, 5

DEFAULTS: dict[str, Any] = {
    "data": {
        "source": "synthetic",
        "raw_csv": None,
        "step_minutes": 10,
        "merge": True,
        "grid": {"source_side_cells": 100, "merge_factor": 4, "cell_side_meters": 235.0},
        "top_cells": 10,
        "synthetic": {
            "num_cells": 10,
            "profile": {
                "kind": "diurnal",
                "mean": 2.0,
                "amplitude": 1.0,
                "period": 144,
                "noise_sd": 0.2,
                "noise": "gaussian",
                "phase_spread": 0.6,
                "two_point_p": 0.5,
            },
        },
        "split": {"d1_steps": 2160, "d2_steps": 2160, "d3_steps": 4464},
        # synthetic cells sit on a grid this many cells wide
        "layout_width": None,
    },
    "scenario": {
        "m": 3,
        "P": 5e5,
        "epsilon": 0.05,
        "eta": 0.8,
        "L_in": 144,
        "L_pred": 12,
        "S": 30,
        "order": "fixed",
        "speed_kmh": 15.0,
        "costs": {"c_opt": 1.0, "c_tra": 1.0, "c_idl": 0.5},
        "resource_model": ResourceModel.reference_default().to_dict(),
        "initial_cells": None,
    },
    "predictor": {
        "hidden": 50,
        "epochs": 400,
        "batch_size": 128,
        "learning_rate": 5e-4,
        "mc_train_samples": 1,
        "prior_sd": 1.0,
        "rho_init": -5.0,
        "log_noise_var_init": math.log(1e-2),
    },
    "surrogate": {
        "dataset": None,
        "num_points": 10000,
        "mu_range": None,
        "sigma_range": None,
        "hidden": [64, 64, 64, 64],
        "epochs": 500,
        "batch_size": 64,
        "learning_rate": 1e-3,
        "holdout_fraction": 0.1,
    },
    "seed": 0,
}

FILES = {
    "d1": "d1.csv",
    "d2": "d2.csv",
    "d3": "d3.csv",
    "normalizer": "normalizer.json",
    "layout": "layout.json",
    "predictor": "predictor.json",
    "point": "point.json",
    "surrogate": "surrogate.json",
    "sdp_dataset": "sdp_dataset.csv",
}


class ConfigError(ConfigurationError):
    pass


class SchemaError(ValueError):
    pass


def _merge(base: dict, user: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in user.items():
        name = f"{where}.{key}" if where else key
        if key not in base:
            raise ConfigError(f"unknown config key {name!r}")
        if isinstance(base[key], dict) and key != "resource_model":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {name!r} must be an object")
            out[key] = _merge(base[key], value, name)
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        user = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    return _merge(DEFAULTS, user, "")


@dataclass
class RunConfig:
    raw: dict
    out_dir: Path

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def path(self, name: str) -> Path:
        return self.out_dir / FILES[name]

    def resource_model(self) -> ResourceModel:
        try:
            return ResourceModel.from_dict(self.raw["scenario"]["resource_model"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"scenario.resource_model: {exc}") from None

    def arch(self) -> LstmArch:
        return LstmArch(1, int(self.raw["predictor"]["hidden"]), int(self.raw["scenario"]["L_pred"]))

    def train_config(self) -> TrainConfig:
        p = self.raw["predictor"]
        kw = {k: p[k] for k in p if k != "hidden"}
        try:
            return TrainConfig(seed=self.seed, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"predictor: {exc}") from None

    def scenario(self, cells: tuple[int, ...]) -> ScenarioConfig:
        s = self.raw["scenario"]
        layout = _read_json(self.path("layout"), "layout")
        pos = {int(c): xy for c, xy in layout["centroids"].items()}
        missing = [c for c in cells if c not in pos]
        if missing:
            raise ConfigError(f"layout has no centroid for cells {missing}")
        centroids = np.array([pos[c] for c in cells], dtype=float)
        try:
            transit = TransitMatrix.from_centroids(
                centroids, float(s["speed_kmh"]), int(self.raw["data"]["step_minutes"])
            )
            return ScenarioConfig(
                models=(self.resource_model(),) * len(cells),
                transit=transit,
                m=int(s["m"]),
                costs=Costs(**s["costs"]),
                P=float(s["P"]),
                epsilon=float(s["epsilon"]),
                eta=float(s["eta"]),
                L_in=int(s["L_in"]),
                L_pred=int(s["L_pred"]),
                S=int(s["S"]),
                step_minutes=int(self.raw["data"]["step_minutes"]),
                seed=self.seed,
                order=s["order"],
                initial_cells=None if s["initial_cells"] is None else tuple(s["initial_cells"]),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"scenario: {exc}") from None


def _read_json(path: Path, what: str) -> dict:
    if not path.exists():
        raise MissingArtifact(f"missing {what} file {path}; run the producing command first")
    return json.loads(path.read_text(encoding="utf-8"))


def _write_json(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_trace(cfg: RunConfig, name: str):
    path = cfg.path(name)
    if not path.exists():
        raise MissingArtifact(f"missing trace {path}; run `ingest` first")
    return read_trace_csv(path, int(cfg.raw["data"]["step_minutes"]))


def _write_curve(path: Path, curve) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(curve, start=1):
            w.writerow([i, repr(float(v))])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_ingest(cfg: RunConfig) -> int:
    d = cfg.raw["data"]
    step = int(d["step_minutes"])
    if d["source"] == "csv":
        if not d["raw_csv"]:
            raise ConfigError("data.raw_csv is required when data.source is 'csv'")
        raw_path = Path(d["raw_csv"])
        if not raw_path.exists():
            raise ConfigError(f"data.raw_csv: input file {raw_path} does not exist")
        trace = ingest_csv(raw_path, step)
        grid = GridSpec(**d["grid"])
        if d["merge"]:
            trace = merge_cells(trace, grid)
            width = grid.source_side_cells // grid.merge_factor
            side = grid.cell_side_meters * grid.merge_factor
        else:
            width = d["layout_width"] or grid.source_side_cells
            side = grid.cell_side_meters
    elif d["source"] == "synthetic":
        syn = d["synthetic"]
        sp = d["split"]
        if sp["d3_steps"] is None:
            raise ConfigError("data.split.d3_steps must be set for synthetic data")
        total = int(sp["d1_steps"]) + int(sp["d2_steps"]) + int(sp["d3_steps"])
        try:
            profile = SyntheticProfile(**syn["profile"])
        except TypeError as exc:
            raise ConfigError(f"data.synthetic.profile: {exc}") from None
        trace = generate_synthetic_trace(int(syn["num_cells"]), total, profile, cfg.seed, step)
        width = d["layout_width"] or int(syn["num_cells"])
        side = d["grid"]["cell_side_meters"] * d["grid"]["merge_factor"]
    else:
        raise ConfigError(f"data.source must be 'csv' or 'synthetic', got {d['source']!r}")

    sp = d["split"]
    d3 = sp["d3_steps"] if sp["d3_steps"] is not None else trace.num_steps - sp["d1_steps"] - sp["d2_steps"]
    split = SplitSpec(int(sp["d1_steps"]), int(sp["d2_steps"]), int(d3))
    k = min(int(d["top_cells"]), trace.num_cells)
    trace = select_top_cells(trace, k, window=(0, split.d1_steps))
    d1, d2, d3t = split_dataset(trace, split)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    for name, t in (("d1", d1), ("d2", d2), ("d3", d3t)):
        write_trace_csv(t, cfg.path(name))
    _write_json(cfg.path("normalizer"), fit_normalizer(d1).to_dict())
    centroids = {str(c): [side * (c % width + 0.5), side * (c // width + 0.5)] for c in trace.cells}
    _write_json(cfg.path("layout"), {"centroids": centroids, "cell_side_meters": side})
    print(f"ingested {trace.num_cells} cells: D1={split.d1_steps} D2={split.d2_steps} D3={split.d3_steps} steps")
    return EXIT_OK


def cmd_train(cfg: RunConfig, target: str) -> int:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    if target in ("predictor", "point"):
        d1 = _read_trace(cfg, "d1")
        norm = Normalizer.from_dict(_read_json(cfg.path("normalizer"), "normalizer"))
        s = cfg.raw["scenario"]
        data = build_windows(d1, int(s["L_in"]), int(s["L_pred"]), norm)
        arch, tc = cfg.arch(), cfg.train_config()
        if target == "predictor":
            params = train_variational(data, arch, tc, norm)
            save_variational(params, cfg.path("predictor"))
        else:
            params = train_point(data, arch, tc, norm)
            save_point(params, cfg.path("point"))
        _write_curve(cfg.out_dir / f"{target}_curve.csv", params.loss_curve)
        print(f"trained {target} on {len(data)} windows; final loss {params.loss_curve[-1]:.6g}")
        return EXIT_OK

    if target != "surrogate":
        raise ConfigError(f"unknown train target {target!r}")
    sc = cfg.raw["surrogate"]
    rm = cfg.resource_model()
    if sc["dataset"]:
        ds_path = Path(sc["dataset"])
        if not ds_path.exists():
            raise MissingArtifact(f"surrogate.dataset {ds_path} does not exist")
        rows = read_dataset_csv(ds_path)
    else:
        rows = generate_sdp_dataset(rm, _sweep(cfg))
        write_dataset_csv(rows, cfg.path("sdp_dataset"))
        print(f"generated {len(rows)} SDP samples -> {cfg.path('sdp_dataset')}")
    model_cfg = SurrogateConfig(
        hidden=tuple(sc["hidden"]),
        epochs=int(sc["epochs"]),
        batch_size=int(sc["batch_size"]),
        learning_rate=float(sc["learning_rate"]),
        seed=cfg.seed,
        holdout_fraction=float(sc["holdout_fraction"]),
    )
    params = surrogate_train(rows, model_cfg)
    bank = SurrogateBank()
    bank.add(rm, params)
    bank.save(cfg.path("surrogate"))
    _write_curve(cfg.out_dir / "surrogate_curve.csv", params.report["loss_curve"])
    rep = params.report
    if "holdout_mae" in rep:
        print(f"surrogate hold-out MAE {rep['holdout_mae']:.4g} (mean |zeta*| {rep['holdout_mean_abs_target']:.4g})")
    return EXIT_OK


def _sweep(cfg: RunConfig) -> SweepSpec:
    """Sweep box from config, or scaled to the demand range seen in D2."""
    sc = cfg.raw["surrogate"]
    s = cfg.raw["scenario"]
    mu_range, sigma_range = sc["mu_range"], sc["sigma_range"]
    if mu_range is None or sigma_range is None:
        peak = float(_read_trace(cfg, "d2").values.max())
        peak = peak if peak > 0 else 1.0
        mu_range = mu_range or (0.0, 1.25 * peak)
        sigma_range = sigma_range or (0.0, 0.5 * peak)
    return SweepSpec(
        mu_range=tuple(mu_range),
        sigma_range=tuple(sigma_range),
        z_values=tuple(range(int(s["m"]) + 1)),
        eps_values=(float(s["epsilon"]),),
        num_points=int(sc["num_points"]),
        seed=cfg.seed,
    )


def cmd_simulate(cfg: RunConfig, policy: str) -> int:
    d3 = _read_trace(cfg, "d3")
    scenario = cfg.scenario(d3.cells)
    art = Artifacts()
    if policy in ("SP", "MP", "GD"):
        art.variational = _load(load_variational, cfg.path("predictor"), cfg.arch())
    if policy == "LP":
        art.point = _load(load_point, cfg.path("point"), cfg.arch())
    if policy == "MP":
        path = cfg.path("surrogate")
        if not path.exists():
            raise MissingArtifact(f"policy MP needs a surrogate at {path}; run `train --target surrogate`")
        art.surrogate = SurrogateBank.load(path)
        if cfg.resource_model() not in art.surrogate:
            raise MissingArtifact("surrogate checkpoint has no model for the configured resource model")
    if policy == "ST":
        art.train_trace = _read_trace(cfg, "d1")
    run = run_policy(scenario, d3, policy, art)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    tag = policy.lower()
    (cfg.out_dir / f"report_{tag}.json").write_text(run.report.to_json(), encoding="utf-8")
    write_ledger_csv(run.ledgers, cfg.out_dir / f"ledger_{tag}.csv")
    write_action_log(run.action_log, cfg.out_dir / f"actions_{tag}.csv")
    write_timings(run.timings, cfg.out_dir / f"timings_{tag}.json")
    r = run.report
    print(f"{policy}: average profit {r.average_profit:.6g}, violations {r.violation_count}")
    return EXIT_OK


def _load(fn, path: Path, arch: LstmArch):
    if not path.exists():
        raise MissingArtifact(f"missing checkpoint {path}; run `train` first")
    return fn(path, arch)


def _load_report(path: Path) -> SimReport:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return SimReport.from_dict(doc)
    except OSError as exc:
        raise MissingArtifact(f"cannot read report {path}: {exc.strerror}") from None
    except (json.JSONDecodeError, TypeError, ValueError, AttributeError) as exc:
        raise SchemaError(f"{path}: {exc}") from None


def cmd_report(cfg: RunConfig, paths: list[str]) -> int:
    if not paths:
        raise ConfigError("report needs at least one report file")
    reports = [_load_report(Path(p)) for p in paths]
    keys = {tuple(sorted(r.to_dict())) for r in reports}
    if len(keys) > 1:
        raise SchemaError("reports have differing fields")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    rows = sorted(reports, key=lambda r: (r.policy, r.meta.get("L_pred", 0), r.meta.get("P", 0), r.meta.get("seed", 0)))
    with (cfg.out_dir / "comparison.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "L_pred", "P", "seed", "average_profit", "violation_count", "total_excess", "steps"])
        for r in rows:
            w.writerow([r.policy, r.meta.get("L_pred"), r.meta.get("P"), r.meta.get("seed"),
                        repr(r.average_profit), r.violation_count, repr(r.total_excess), r.num_steps])
    by_p = sorted(reports, key=lambda r: (r.meta.get("P", 0), r.policy, r.meta.get("seed", 0)))
    with (cfg.out_dir / "penalty_sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["P", "policy", "seed", "utility_total", "penalty_total", "total_excess", "average_profit"])
        for r in by_p:
            w.writerow([r.meta.get("P"), r.policy, r.meta.get("seed"), repr(r.utility_total),
                        repr(r.penalty_total), repr(r.total_excess), repr(r.average_profit)])
    _write_action_modes(cfg.out_dir, rows)
    _write_runtime(cfg.out_dir, paths, rows)
    print(f"summarized {len(reports)} report(s) in {cfg.out_dir}")
    return EXIT_OK


def _write_action_modes(out: Path, reports: list[SimReport]) -> None:
    n = max(len(r.transit_ratio_by_time_of_day) for r in reports)
    with (out / "action_modes.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["step_of_day"]
        for i, r in enumerate(reports):
            header += [f"{r.policy}_{i}_transit_ratio", f"{r.policy}_{i}_demand"]
        w.writerow(header)
        for k in range(n):
            row: list = [k]
            for r in reports:
                for series in (r.transit_ratio_by_time_of_day, r.demand_by_time_of_day):
                    v = series[k] if k < len(series) else None
                    row.append("" if v is None else repr(v))
            w.writerow(row)
    (out / "action_modes.svg").write_text(_svg(reports), encoding="utf-8")


def _svg(reports: list[SimReport], width: int = 640, height: int = 240) -> str:
    """Transit ratio by step of day, one polyline per report."""
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for i, r in enumerate(reports):
        series = r.transit_ratio_by_time_of_day
        n = max(len(series) - 1, 1)
        pts = [
            f"{20 + (width - 40) * k / n:.2f},{height - 20 - (height - 40) * v:.2f}"
            for k, v in enumerate(series)
            if v is not None
        ]
        if pts:
            lines.append(
                f'<polyline fill="none" stroke="{colors[i % len(colors)]}" stroke-width="1.5" points="{" ".join(pts)}"/>'
            )
        lines.append(f'<text x="{width - 120}" y="{16 + 14 * i}" font-size="11" fill="{colors[i % len(colors)]}">{r.policy}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _write_runtime(out: Path, paths: list[str], reports: list[SimReport]) -> None:
    """Mean decision time per report, from timing files beside each report."""
    rows = []
    for p in paths:
        path = Path(p)
        tpath = path.with_name(path.name.replace("report_", "timings_", 1))
        if tpath != path and tpath.exists():
            t = json.loads(tpath.read_text(encoding="utf-8"))
            mean = lambda k: float(np.mean([s[k] for s in t])) if t else 0.0
            rows.append([path.name, mean("forecast_s"), mean("risk_s"), mean("plan_s"), mean("decision_s")])
    if rows:
        with (out / "runtime.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["report", "forecast_s", "risk_s", "plan_s", "decision_s"])
            w.writerows(rows)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moedge", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON config; omitted keys take defaults")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out-dir", default="out", help="artifact directory (default: out)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", help="build D1/D2/D3 traces and the normalizer")
    p = sub.add_parser("train", help="train the predictor, point model or surrogate")
    p.add_argument("--target", choices=("predictor", "point", "surrogate"), default="predictor")
    p = sub.add_parser("simulate", help="run one policy over D3")
    p.add_argument("--policy", choices=POLICIES, default="SP")
    p = sub.add_parser("report", help="summarize report JSON files")
    p.add_argument("reports", nargs="*")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config)
        if args.seed is not None:
            raw["seed"] = args.seed
        cfg = RunConfig(raw, Path(args.out_dir))
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.target)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.policy)
        return cmd_report(cfg, args.reports)
    except (ConfigurationError, TraceError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (MissingArtifact, CheckpointError) as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except SchemaError as exc:
        print(f"report schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
