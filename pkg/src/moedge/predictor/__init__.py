from .network import LstmArch
from .training import (
    Forecast,
    PointParams,
    TrainConfig,
    VariationalParams,
    WindowedDataset,
    build_windows,
    forecast,
    forecast_cells,
    point_forecast_cells,
    train_point,
    train_variational,
)

__all__ = [
    "Forecast",
    "LstmArch",
    "PointParams",
    "TrainConfig",
    "VariationalParams",
    "WindowedDataset",
    "build_windows",
    "forecast",
    "forecast_cells",
    "point_forecast_cells",
    "train_point",
    "train_variational",
]
