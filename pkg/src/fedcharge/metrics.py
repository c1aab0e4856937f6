"""Error metrics in delivered-energy units (kWh)."""

from __future__ import annotations

import numpy as np


def _check(predictions, targets) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape:
        raise ValueError("predictions and targets must have equal length")
    if p.size == 0:
        raise ValueError("empty inputs")
    return p, t


def mae(predictions, targets) -> float:
    p, t = _check(predictions, targets)
    return float(np.mean(np.abs(p - t)))


def rmse(predictions, targets) -> float:
    p, t = _check(predictions, targets)
    return float(np.sqrt(np.mean((p - t) ** 2)))
