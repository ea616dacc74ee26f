"""Quantitative data-collapse scores for families of curves.

Each series is a curve ``y(x)`` measured at a parameter value ``t``. A
rescaling maps it to ``(x / t**ax, y * t**ay)``. The score is the mean
pairwise RMS distance between the rescaled curves on their common support,
divided by the RMS magnitude of the curves there. Identical curves score 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np


@dataclass
class Series:
    t: float
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.shape != self.y.shape or self.x.ndim != 1 or len(self.x) < 2:
            raise ValueError("series needs matching 1d x, y with at least two points")
        order = np.argsort(self.x)
        self.x, self.y = self.x[order], self.y[order]


@dataclass
class CollapseScore:
    x_exponent: float
    y_exponent: float
    score: float
    ci: tuple[float, float]
    support: tuple[float, float]
    n_grid: int


def _grid_values(curves: list[tuple[np.ndarray, np.ndarray]], n_grid: int):
    lo = max(c[0][0] for c in curves)
    hi = min(c[0][-1] for c in curves)
    if not hi > lo:
        raise ValueError("rescaled curves do not overlap")
    grid = np.linspace(lo, hi, n_grid)
    return np.array([np.interp(grid, x, y) for x, y in curves]), (float(lo), float(hi))


def _score(vals: np.ndarray, idx: np.ndarray) -> float:
    v = vals[:, idx]
    scale = np.sqrt(np.mean(v**2))
    if scale == 0:
        return 0.0
    pairs = combinations(range(len(v)), 2)
    return float(np.mean([np.sqrt(np.mean((v[a] - v[b]) ** 2)) for a, b in pairs]) / scale)


def rescale(series: Sequence[Series], x_exponent: float, y_exponent: float):
    return [(s.x / s.t**x_exponent, s.y * s.t**y_exponent) for s in series]


def collapse_score(
    series: Sequence[Series],
    x_exponent: float = 0.0,
    y_exponent: float = 0.0,
    n_grid: int = 200,
    n_boot: int = 200,
    seed: int = 0,
    level: float = 0.95,
) -> CollapseScore:
    """Score a family of curves after rescaling ``x -> x / t**x_exponent``,
    ``y -> y * t**y_exponent``.

    Curves are linearly interpolated onto ``n_grid`` points spanning the common
    support. The bootstrap resamples those grid points and reports a
    percentile interval.

    Raises
    ------
    ValueError
        With fewer than two series or no overlap after rescaling.
    """
    if len(series) < 2:
        raise ValueError("need at least two series")
    vals, support = _grid_values(rescale(series, x_exponent, y_exponent), n_grid)
    score = _score(vals, np.arange(n_grid))
    rng = np.random.default_rng(seed)
    boots = [_score(vals, rng.integers(0, n_grid, n_grid)) for _ in range(n_boot)]
    a = (1.0 - level) / 2.0
    ci = (float(np.quantile(boots, a)), float(np.quantile(boots, 1 - a))) if boots else (score, score)
    return CollapseScore(x_exponent, y_exponent, score, ci, support, n_grid)
