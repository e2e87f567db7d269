"""Training objectives: width-plus-violation interval loss and bound MSE."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .autodiff import Tensor, square, tensor


def interval_loss(low: Tensor, high: Tensor, target: np.ndarray,
                  weight: np.ndarray, beta: float) -> Tensor:
    """Mean over elements of beta*(high-low) + weighted one-sided violations.

    Zero iff every interval degenerates onto its covered target; for covered
    targets the loss is exactly beta times the mean width.
    """
    if beta <= 0:
        raise ConfigError(f"interval width penalty beta must be positive, got {beta}")
    if np.any(np.asarray(weight) < 0):
        raise ConfigError("violation weights must be non-negative")
    z = tensor(np.asarray(target, dtype=float))
    w = tensor(np.asarray(weight, dtype=float))
    width = (high - low).scale(beta)
    violation = ((low - z).relu() + (z - high).relu()) * w
    return (width + violation).mean()


def bounds_mse(low: Tensor, high: Tensor, truth: np.ndarray) -> Tensor:
    """MSE driving both interval bounds toward the observed value."""
    z = tensor(np.asarray(truth, dtype=float))
    return (square(low - z) + square(high - z)).mean().scale(0.5)
