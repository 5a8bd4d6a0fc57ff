"""Registration quality measures: NCCC, point RMSE, execution-time category."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class EvaluationUndefined(ValueError):
    """A metric is undefined for the given input (e.g. a constant image)."""


class NCCC(NamedTuple):
    raw: float  # standard correlation in [-1, 1]
    paper: float  # clamped to [0, 1]; negative correlation reported as 0


def nccc(a, b, mask=None) -> NCCC:
    """Normalised cross-correlation of mean-removed images.

    ``mask`` restricts the computation to the selected pixels, e.g. the
    overlap of a registered slave with the master frame.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        a, b = a[mask], b[mask]
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    if na <= 1e-12 or nb <= 1e-12:
        raise EvaluationUndefined("NCCC undefined for a constant image")
    r = float(np.clip((a @ b) / (na * nb), -1.0, 1.0))
    return NCCC(r, max(0.0, r))


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch {len(pred)} vs {len(truth)}")
    if len(pred) == 0:
        raise ValueError("rmse needs at least one pair")
    return float(np.sqrt(np.mean(np.sum((pred - truth) ** 2, axis=1))))


def time_category(seconds: float) -> str:
    if seconds < 0:
        raise ValueError("negative duration")
    if seconds < 30:
        return "low"
    if seconds <= 60:
        return "medium"
    return "high"
