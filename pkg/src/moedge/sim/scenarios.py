"""Ready-made synthetic scenarios for demos, tests and trend checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..planner import Costs, TransitMatrix
from ..robust.cvar import ResourceModel
from ..trace import DemandTrace, SyntheticProfile, generate_synthetic_trace
from .env import ScenarioConfig


@dataclass(frozen=True)
class HotspotSetup:
    """A single hotspot visits ``num_cells`` cells laid out on a line.

    Base demand fits the fixed capacity of every cell; the hotspot needs
    one MU. Cells are ``spacing_m`` apart, so end-to-end moves take two steps.
    """

    num_cells: int = 4
    period: int = 32
    base: float = 0.5
    amplitude: float = 3.0
    noise_sd: float = 0.2
    noise: str = "gaussian"
    train_periods: int = 30
    test_periods: int = 8
    spacing_m: float = 940.0
    speed_kmh: float = 15.0
    m: int = 2
    L_in: int = 32
    L_pred: int = 4
    P: float = 5e5
    costs: Costs = Costs(2.0, 2.0, 0.5)

    def profile(self) -> SyntheticProfile:
        return SyntheticProfile(
            "rotating_hotspot", self.base, self.amplitude, self.period, self.noise_sd, self.noise
        )

    def traces(self, seed: int) -> tuple[DemandTrace, DemandTrace]:
        """Training (D1) and evaluation (D3) traces cut from one generated run."""
        n_train = self.period * self.train_periods
        full = generate_synthetic_trace(
            self.num_cells, n_train + self.period * self.test_periods, self.profile(), seed
        )
        return full.slice_steps(0, n_train), full.slice_steps(n_train, full.num_steps)

    def transit(self) -> TransitMatrix:
        centroids = np.column_stack([self.spacing_m * np.arange(self.num_cells), np.zeros(self.num_cells)])
        return TransitMatrix.from_centroids(centroids, self.speed_kmh)

    def scenario(self, seed: int = 0, **overrides) -> ScenarioConfig:
        kw = dict(
            models=(ResourceModel.reference_default(),) * self.num_cells,
            transit=self.transit(),
            m=self.m,
            costs=self.costs,
            P=self.P,
            L_in=self.L_in,
            L_pred=self.L_pred,
            seed=seed,
        )
        kw.update(overrides)
        return ScenarioConfig(**kw)
