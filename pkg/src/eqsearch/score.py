"""Fitness and reporting metrics.

Fitness is the negative mean squared error of the fitted program on the
training split (higher is better).  NMSE divides the squared error by
the target variance of the same split, so a perfect fit scores 0 and the
mean predictor scores exactly 1.  Both induce the same ranking for fixed
data, so the buffer may key on either without changing any argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .dsl import SkeletonProgram
from .evaluation import evaluate


@dataclass(frozen=True)
class Score:
    fitness: float  # -mse
    nmse: float
    split: str


def mse(yhat, y) -> float:
    yhat = np.asarray(yhat, dtype=float)
    y = np.asarray(y, dtype=float)
    if yhat.shape != y.shape or y.ndim != 1 or len(y) < 1:
        raise ValueError(f"shape mismatch: {yhat.shape} vs {y.shape}")
    return float(np.mean((yhat - y) ** 2))


def _target_variance(y: np.ndarray) -> float:
    var = float(np.mean((y - np.mean(y)) ** 2))
    if var == 0.0:
        raise ValueError("NMSE is undefined for a constant target")
    return var


def nmse(yhat, y) -> float:
    y = np.asarray(y, dtype=float)
    return mse(yhat, y) / _target_variance(y)


def nmse_from_mse(mse_value: float, y) -> float:
    """NMSE given an already-computed MSE on targets y (same split)."""
    return mse_value / _target_variance(np.asarray(y, dtype=float))


def fitness(program: SkeletonProgram, params, data: Dataset) -> Score | None:
    """Score a fitted program on a dataset; None marks a discarded hypothesis."""
    outcome = evaluate(program, params, data)
    if not outcome.ok:
        return None
    err = mse(outcome.predictions, data.targets)
    return Score(fitness=-err, nmse=nmse_from_mse(err, data.targets), split=data.split)
