"""Error-bounded monotone position models over sorted keys.

The reference model is a greedy piecewise-linear spline: knots are added
only when a segment line can no longer keep every training key within the
configured deviation budget. Any object exposing ``predict``, ``predict_many``,
``error_bound`` and ``size_bytes`` can stand in for it (see ``LinearModel``).
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = ["ModelConfig", "Model", "LinearModel", "train", "predict"]


@dataclass(frozen=True)
class ModelConfig:
    """Fitting knobs: the deviation budget controls knot count."""

    spline_error_budget: int = 128
    min_keys_per_model: int = 16

    def __post_init__(self) -> None:
        if self.spline_error_budget < 1:
            raise ValueError("spline_error_budget must be >= 1")


@dataclass
class Model:
    """Piecewise-linear monotone predictor with a certified error bound.

    ``spline_points`` are strictly increasing in both key and position, and
    every training key's true position is within ``error_bound`` of the
    prediction (certified by an exhaustive scan at fit time).
    """

    spline_points: list[tuple[float, float]]
    error_bound: int
    key_count: int
    domain: tuple[int, int]
    _kx: np.ndarray = field(repr=False, default=None)
    _ky: np.ndarray = field(repr=False, default=None)

    def __post_init__(self) -> None:
        if self._kx is None:
            self._kx = np.array([p[0] for p in self.spline_points], dtype=np.float64)
            self._ky = np.array([p[1] for p in self.spline_points], dtype=np.float64)

    def predict(self, key) -> float:
        """Predicted position for ``key``; out-of-domain keys are clamped."""
        kx = self._kx
        x = float(key)
        if x <= kx[0]:
            return float(self._ky[0])
        if x >= kx[-1]:
            return float(self._ky[-1])
        j = bisect.bisect_right(kx, x) - 1
        x0, x1 = kx[j], kx[j + 1]
        y0, y1 = self._ky[j], self._ky[j + 1]
        return float(y0 + (x - x0) * (y1 - y0) / (x1 - x0))

    def predict_many(self, keys) -> np.ndarray:
        arr = np.asarray(keys, dtype=np.float64)
        return np.interp(arr, self._kx, self._ky)

    @property
    def size_bytes(self) -> int:
        return 16 * len(self.spline_points) + 40


def _check_sorted(keys: np.ndarray) -> None:
    if keys.size == 0:
        raise ValueError("empty training set")
    if keys.size > 1 and not np.all(keys[1:] > keys[:-1]):
        raise ValueError("keys not strictly sorted")


def _fit_knots(xs: np.ndarray, ys: np.ndarray, eps: float) -> tuple[list[float], list[float]]:
    """Greedy corridor fit.

    A segment is kept open while some single slope can interpolate all of its
    points within ``eps``. On close, the knot ordinate is projected onto a
    corridor-feasible slope so interior points stay within ``eps`` of the
    final polyline, not just of the corridor.
    """
    n = len(xs)
    kx = [float(xs[0])]
    ky = [float(ys[0])]
    if n == 1:
        return kx, ky

    x0, y0 = kx[0], ky[0]
    lo, hi = -math.inf, math.inf
    i = 1
    while i < n:
        dx = float(xs[i]) - x0
        s_lo = (float(ys[i]) - eps - y0) / dx
        s_hi = (float(ys[i]) + eps - y0) / dx
        if max(lo, s_lo) <= min(hi, s_hi):
            lo = max(lo, s_lo)
            hi = min(hi, s_hi)
            i += 1
            continue
        # Close the segment at the previous point with a feasible slope.
        j = i - 1
        dxj = float(xs[j]) - x0
        exact = (float(ys[j]) - y0) / dxj if dxj > 0 else hi
        s = min(max(exact, lo), hi)
        if s <= 0.0:
            s = min(hi, 1e-12)  # hi > 0 whenever positions strictly increase
        x0 = float(xs[j])
        y0 = y0 + s * dxj
        kx.append(x0)
        ky.append(y0)
        lo, hi = -math.inf, math.inf
        # Point i is re-examined against the fresh segment.
    if kx[-1] < float(xs[-1]):
        dx = float(xs[-1]) - x0
        exact = (float(ys[-1]) - y0) / dx
        s = min(max(exact, lo), hi)
        if s <= 0.0:
            s = min(hi, 1e-12)
        kx.append(float(xs[-1]))
        ky.append(y0 + s * dx)
    return kx, ky


def train(keys: Sequence[int], cfg: ModelConfig, positions: Optional[Sequence[int]] = None) -> Model:
    """Fit a monotone position model on strictly sorted keys.

    ``positions`` defaults to 0..n-1; callers indexing a gapped layout pass
    the slot index of each key instead.
    """
    karr = np.asarray(keys)
    _check_sorted(karr)
    xs = karr.astype(np.float64)
    if positions is None:
        ys = np.arange(karr.size, dtype=np.float64)
    else:
        ys = np.asarray(positions, dtype=np.float64)
        if ys.size != karr.size:
            raise ValueError("positions length mismatch")
        if ys.size > 1 and not np.all(ys[1:] > ys[:-1]):
            raise ValueError("positions not strictly sorted")

    kx, ky = _fit_knots(xs, ys, float(cfg.spline_error_budget))
    fitted = np.interp(xs, np.asarray(kx), np.asarray(ky))
    max_err = float(np.max(np.abs(fitted - ys))) if karr.size else 0.0
    err = int(math.ceil(max_err - 1e-9)) if max_err > 1e-9 else 0
    points = list(zip(kx, ky))
    return Model(
        spline_points=points,
        error_bound=err,
        key_count=int(karr.size),
        domain=(int(karr[0]), int(karr[-1])),
    )


def predict(m: Model, key) -> float:
    """Module-level alias for ``Model.predict``."""
    return m.predict(key)


@dataclass
class LinearModel:
    """Single least-squares line; a drop-in alternate for ``Model``.

    Certifies its own (typically larger) error bound by scanning the
    training keys, so the last-mile window contract still holds.
    """

    slope: float
    intercept: float
    error_bound: int
    key_count: int
    domain: tuple[int, int]

    @classmethod
    def fit(cls, keys: Sequence[int], positions: Optional[Sequence[int]] = None) -> "LinearModel":
        karr = np.asarray(keys)
        _check_sorted(karr)
        xs = karr.astype(np.float64)
        ys = (
            np.arange(karr.size, dtype=np.float64)
            if positions is None
            else np.asarray(positions, dtype=np.float64)
        )
        if karr.size == 1:
            slope, intercept = 0.0, float(ys[0])
        else:
            slope, intercept = np.polyfit(xs, ys, 1)
            slope = max(float(slope), 0.0)
        fitted = slope * xs + intercept
        err = int(math.ceil(float(np.max(np.abs(fitted - ys)))))
        return cls(slope, float(intercept), err, int(karr.size), (int(karr[0]), int(karr[-1])))

    def predict(self, key) -> float:
        x = min(max(float(key), float(self.domain[0])), float(self.domain[1]))
        return self.slope * x + self.intercept

    def predict_many(self, keys) -> np.ndarray:
        arr = np.clip(
            np.asarray(keys, dtype=np.float64), float(self.domain[0]), float(self.domain[1])
        )
        return self.slope * arr + self.intercept

    @property
    def size_bytes(self) -> int:
        return 48
