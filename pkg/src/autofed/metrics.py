"""Forecast error metrics: MAE, RMSE, MSE, and masked MAPE."""

from dataclasses import asdict, dataclass

import numpy as np

from .tensor import ContractError


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    mse: float
    mape_percent: float
    masked_fraction: float

    def as_dict(self):
        return asdict(self)


def evaluate(y_hat, y, mask_threshold=1.0):
    """Per-element mean errors; MAPE is computed only where |y| >= threshold
    (percentage error is undefined near zero demand) and reports the masked
    fraction alongside."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ContractError(f"evaluate: shape mismatch {y_hat.shape} vs {y.shape}")
    if y.size == 0:
        raise ContractError("evaluate: empty input")

    diff = y_hat - y
    mae = float(np.abs(diff).mean())
    mse = float((diff ** 2).mean())
    rmse = float(np.sqrt(mse))

    unmasked = np.abs(y) >= mask_threshold
    masked_fraction = float(1.0 - unmasked.mean())
    if unmasked.any():
        mape = float(100.0 * np.abs(diff[unmasked] / y[unmasked]).mean())
    else:
        mape = 0.0
    return MetricsReport(mae, rmse, mse, mape, masked_fraction)
