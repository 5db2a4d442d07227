"""Demand traces: CSV ingestion, grid merging, top-k selection, splits,
synthetic generators and per-cell min-max normalization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class TraceError(ValueError):
    """Raised for malformed or inconsistent trace input."""


@dataclass(frozen=True)
class DemandTrace:
    cells: tuple[int, ...]
    values: np.ndarray  # (num_steps, num_cells)
    step_minutes: int = 10

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise TraceError("trace values must be a 2-D matrix")
        if values.shape[0] < 1:
            raise TraceError("trace must have at least one step")
        if values.shape[1] != len(self.cells):
            raise TraceError(
                f"{values.shape[1]} value columns for {len(self.cells)} cells"
            )
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise TraceError("trace values must be finite and nonnegative")
        if self.step_minutes <= 0:
            raise TraceError("step_minutes must be positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "cells", tuple(int(c) for c in self.cells))

    @property
    def num_steps(self) -> int:
        return self.values.shape[0]

    @property
    def num_cells(self) -> int:
        return self.values.shape[1]

    @property
    def steps_per_day(self) -> int:
        return max(1, (24 * 60) // self.step_minutes)

    def column(self, cell: int) -> np.ndarray:
        return self.values[:, self.cells.index(cell)]

    def slice_steps(self, start: int, stop: int) -> "DemandTrace":
        return DemandTrace(self.cells, self.values[start:stop], self.step_minutes)

    def subset(self, cells: Sequence[int]) -> "DemandTrace":
        idx = [self.cells.index(c) for c in cells]
        return DemandTrace(tuple(cells), self.values[:, idx], self.step_minutes)


@dataclass(frozen=True)
class GridSpec:
    source_side_cells: int = 100
    merge_factor: int = 4
    cell_side_meters: float = 235.0

    def __post_init__(self) -> None:
        if self.source_side_cells <= 0 or self.merge_factor <= 0:
            raise TraceError("grid sizes must be positive")
        if self.source_side_cells % self.merge_factor:
            raise TraceError("source_side_cells must be divisible by merge_factor")
        if self.cell_side_meters <= 0:
            raise TraceError("cell_side_meters must be positive")

    @property
    def merged_side_cells(self) -> int:
        return self.source_side_cells // self.merge_factor

    @property
    def merged_side_meters(self) -> float:
        return self.cell_side_meters * self.merge_factor


@dataclass(frozen=True)
class SplitSpec:
    d1_steps: int
    d2_steps: int
    d3_steps: int

    @property
    def total(self) -> int:
        return self.d1_steps + self.d2_steps + self.d3_steps


# ---------------------------------------------------------------------------
# Ingestion and serialization
# ---------------------------------------------------------------------------


def _looks_like_header(row: list[str]) -> bool:
    try:
        float(row[0])
    except (ValueError, IndexError):
        return True
    return False


def ingest_csv(path: str | Path, step_minutes: int = 10) -> DemandTrace:
    """Read ``cell_id,timestamp_ms,demand`` rows and bin them into steps.

    Records falling in the same ``step_minutes`` bucket are summed; buckets
    with no record for a cell are zero-filled. Bucket 0 starts at the
    earliest timestamp floored to a bucket boundary.
    """
    path = Path(path)
    if step_minutes <= 0:
        raise TraceError("step_minutes must be positive")
    records: list[tuple[int, int, float]] = []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not f.strip() for f in row):
                continue
            if lineno == 1 and _looks_like_header(row):
                continue
            if len(row) != 3:
                raise TraceError(f"line {lineno}: expected 3 fields, got {len(row)}")
            try:
                cell = int(row[0])
                ts = int(row[1])
                demand = float(row[2])
            except ValueError as exc:
                raise TraceError(f"line {lineno}: {exc}") from None
            if not math.isfinite(demand):
                raise TraceError(f"line {lineno}: non-finite demand")
            if demand < 0:
                raise TraceError(f"line {lineno}: negative demand {demand}")
            records.append((cell, ts, demand))
    if not records:
        raise TraceError("no records")

    step_ms = step_minutes * 60_000
    arr_ts = np.array([r[1] for r in records], dtype=np.int64)
    t0 = (arr_ts.min() // step_ms) * step_ms
    buckets = (arr_ts - t0) // step_ms
    cells = sorted({r[0] for r in records})
    col = {c: j for j, c in enumerate(cells)}
    values = np.zeros((int(buckets.max()) + 1, len(cells)))
    for (cell, _, demand), b in zip(records, buckets):
        values[b, col[cell]] += demand
    return DemandTrace(tuple(cells), values, step_minutes)


def write_trace_csv(trace: DemandTrace, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + [f"cell_{c}" for c in trace.cells])
        for t, row in enumerate(trace.values):
            w.writerow([t] + [repr(float(v)) for v in row])


def read_trace_csv(path: str | Path, step_minutes: int = 10) -> DemandTrace:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "step":
        raise TraceError(f"{path}: missing trace header")
    try:
        cells = tuple(int(h.removeprefix("cell_")) for h in rows[0][1:])
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except ValueError as exc:
        raise TraceError(f"{path}: {exc}") from None
    if values.size == 0:
        raise TraceError(f"{path}: no steps")
    return DemandTrace(cells, values.reshape(len(rows) - 1, len(cells)), step_minutes)


# ---------------------------------------------------------------------------
# Transformations
# ---------------------------------------------------------------------------


def merge_cells(trace: DemandTrace, grid: GridSpec) -> DemandTrace:
    """Sum ``merge_factor``-square blocks of a row-major source grid.

    Cell positions come from the sorted cell order, so both 0- and 1-based
    source ids work. Merged ids are the row-major block indices.
    """
    side = grid.source_side_cells
    if trace.num_cells != side * side:
        raise TraceError(
            f"trace has {trace.num_cells} cells, grid expects {side * side}"
        )
    f = grid.merge_factor
    order = np.argsort(trace.cells, kind="stable")
    v = trace.values[:, order].reshape(trace.num_steps, side // f, f, side // f, f)
    merged = v.sum(axis=(2, 4)).reshape(trace.num_steps, -1)
    return DemandTrace(tuple(range(merged.shape[1])), merged, trace.step_minutes)


def select_top_cells(
    trace: DemandTrace, k: int, window: tuple[int, int] | None = None
) -> DemandTrace:
    if not 1 <= k <= trace.num_cells:
        raise TraceError(f"k={k} outside 1..{trace.num_cells}")
    start, stop = window if window is not None else (0, trace.num_steps)
    if not 0 <= start < stop <= trace.num_steps:
        raise TraceError(f"window {start}:{stop} outside trace")
    means = trace.values[start:stop].mean(axis=0)
    ranked = sorted(range(trace.num_cells), key=lambda j: (-means[j], trace.cells[j]))
    keep = sorted(ranked[:k], key=lambda j: trace.cells[j])
    return trace.subset([trace.cells[j] for j in keep])


def split_dataset(
    trace: DemandTrace, spec: SplitSpec
) -> tuple[DemandTrace, DemandTrace, DemandTrace]:
    if min(spec.d1_steps, spec.d2_steps, spec.d3_steps) <= 0:
        raise TraceError("all split lengths must be positive")
    if spec.total != trace.num_steps:
        raise TraceError(
            f"split lengths sum to {spec.total}, trace has {trace.num_steps} steps"
        )
    a = spec.d1_steps
    b = a + spec.d2_steps
    return (
        trace.slice_steps(0, a),
        trace.slice_steps(a, b),
        trace.slice_steps(b, trace.num_steps),
    )


# ---------------------------------------------------------------------------
# Synthetic traces
# ---------------------------------------------------------------------------

PROFILES = ("diurnal", "rotating_hotspot", "gaussian_noise")
NOISE_KINDS = ("gaussian", "uniform", "two_point")


@dataclass(frozen=True)
class SyntheticProfile:
    """Parameters for :func:`generate_synthetic_trace`.

    ``diurnal``: ``mean + amplitude * sin(2*pi*t/period + phase_c)`` with the
    phase spread evenly over cells by ``phase_spread`` radians.
    ``rotating_hotspot``: ``mean`` everywhere plus ``amplitude`` in cell
    ``floor(t * n / period) mod n``.
    ``gaussian_noise``: constant ``mean`` (plus an optional sinusoid when
    ``amplitude > 0``).  All kinds add zero-mean noise of sd ``noise_sd``.
    """

    kind: str = "rotating_hotspot"
    mean: float = 1.0
    amplitude: float = 0.0
    period: int = 144
    noise_sd: float = 0.0
    noise: str = "gaussian"
    phase_spread: float = math.pi / 2
    two_point_p: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in PROFILES:
            raise TraceError(f"unknown profile {self.kind!r}; expected one of {PROFILES}")
        if self.noise not in NOISE_KINDS:
            raise TraceError(f"unknown noise {self.noise!r}; expected one of {NOISE_KINDS}")
        for name in ("mean", "amplitude", "noise_sd", "phase_spread"):
            if not math.isfinite(getattr(self, name)):
                raise TraceError(f"profile {name} must be finite")
        if self.amplitude < 0 or self.noise_sd < 0:
            raise TraceError("amplitude and noise_sd must be >= 0")
        if self.period <= 0:
            raise TraceError("period must be positive")
        if not 0 < self.two_point_p < 1:
            raise TraceError("two_point_p must be in (0, 1)")


def profile_mean(profile: SyntheticProfile, num_cells: int, num_steps: int) -> np.ndarray:
    """Noise-free (pre-clipping) mean of each (step, cell)."""
    t = np.arange(num_steps)[:, None]
    c = np.arange(num_cells)[None, :]
    if profile.kind == "rotating_hotspot":
        hot = (t * num_cells // profile.period) % num_cells
        return profile.mean + profile.amplitude * (hot == c)
    phase = profile.phase_spread * c if profile.kind == "diurnal" else 0.0
    wave = np.sin(2 * math.pi * t / profile.period + phase)
    return profile.mean + profile.amplitude * wave + np.zeros((1, num_cells))


def _noise(profile: SyntheticProfile, shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    sd = profile.noise_sd
    if sd == 0:
        return np.zeros(shape)
    if profile.noise == "gaussian":
        return rng.normal(0.0, sd, size=shape)
    if profile.noise == "uniform":
        half = sd * math.sqrt(3.0)
        return rng.uniform(-half, half, size=shape)
    p = profile.two_point_p
    up = sd * math.sqrt((1 - p) / p)
    down = -sd * math.sqrt(p / (1 - p))
    return np.where(rng.random(shape) < p, up, down)


def generate_synthetic_trace(
    num_cells: int,
    num_steps: int,
    profile: SyntheticProfile,
    seed: int,
    step_minutes: int = 10,
) -> DemandTrace:
    if num_cells < 1 or num_steps < 1:
        raise TraceError("num_cells and num_steps must be positive")
    rng = np.random.default_rng(seed)
    base = profile_mean(profile, num_cells, num_steps)
    values = np.clip(base + _noise(profile, base.shape, rng), 0.0, None)
    return DemandTrace(tuple(range(num_cells)), values, step_minutes)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Normalizer:
    """Per-cell min-max scaler. A constant cell keeps scale 1, offset min."""

    cells: tuple[int, ...]
    offset: np.ndarray
    scale: np.ndarray = field(repr=False)

    def _cols(self, cells: Sequence[int] | None) -> list[int]:
        if cells is None:
            return list(range(len(self.cells)))
        return [self.cells.index(c) for c in cells]

    def apply(self, values: np.ndarray, cells: Sequence[int] | None = None) -> np.ndarray:
        j = self._cols(cells)
        return (np.asarray(values, dtype=float) - self.offset[j]) / self.scale[j]

    def invert(self, values: np.ndarray, cells: Sequence[int] | None = None) -> np.ndarray:
        j = self._cols(cells)
        return np.asarray(values, dtype=float) * self.scale[j] + self.offset[j]

    def apply_trace(self, trace: DemandTrace) -> np.ndarray:
        return self.apply(trace.values, trace.cells)

    def to_dict(self) -> dict:
        return {
            "cells": list(self.cells),
            "offset": [float(x) for x in self.offset],
            "scale": [float(x) for x in self.scale],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(tuple(d["cells"]), np.array(d["offset"], float), np.array(d["scale"], float))


def fit_normalizer(trace: DemandTrace) -> Normalizer:
    lo = trace.values.min(axis=0)
    hi = trace.values.max(axis=0)
    span = hi - lo
    scale = np.where(span > 0, span, 1.0)
    return Normalizer(trace.cells, lo.copy(), scale)
