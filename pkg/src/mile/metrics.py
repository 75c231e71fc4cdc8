"""Trace diagnostics: consensus error, running averages and log-log rate fits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import TraceRecord, consensus_err
from .errors import EmptyTrace, NonPositiveMetric, TooFewPoints


def consensus_error(X: np.ndarray) -> float:
    """``(1/N) sum_i ||x_i - xbar||^2``; zero iff all rows are equal."""
    return consensus_err(X)


@dataclass(frozen=True)
class Aggregates:
    """Running averages ``(1/T) sum_{t=1}^{T}`` evaluated at round boundaries ``T = k tau``."""

    T: np.ndarray
    grad_norm_avg: np.ndarray
    consensus_err: np.ndarray

    def to_dict(self) -> dict:
        return {"T": self.T.tolist(), "grad_norm_avg": self.grad_norm_avg.tolist(),
                "consensus_err": self.consensus_err.tolist()}


def _series(trace: Sequence[TraceRecord], final: TraceRecord | None, name: str) -> np.ndarray:
    """Metric values at ``t = 1..T``: trace rows from ``t = 1`` plus the final state."""
    vals = [getattr(r, name) for r in trace[1:]]
    if final is not None:
        vals.append(getattr(final, name))
    return np.asarray(vals, dtype=float)


def running_average_metrics(trace: Sequence[TraceRecord], tau: int, final: TraceRecord | None = None) -> Aggregates:
    """Running averages of ``grad_norm_avg`` and ``consensus_err`` at every round boundary.

    The sum starts at ``t = 1``.  With a trace of rows ``t = 0..T-1`` plus the
    final record at ``t = T = tau (K+1)`` this yields ``K + 1`` aggregates at
    ``T = tau, 2 tau, ..., (K+1) tau``; without ``final`` the last boundary is dropped.

    Raises:
        EmptyTrace: no rows at or after ``t = 1``.
    """
    if len(trace) == 0:
        raise EmptyTrace("trace has no rows")
    g = _series(trace, final, "grad_norm_avg")
    c = _series(trace, final, "consensus_err")
    if g.size == 0:
        raise EmptyTrace("trace has no rows with t >= 1")
    counts = np.arange(1, g.size + 1)
    run_g = np.cumsum(g) / counts
    run_c = np.cumsum(c) / counts
    T = np.arange(tau, g.size + 1, tau)
    return Aggregates(T, run_g[T - 1], run_c[T - 1])


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    window: tuple[int, int]

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared,
                "window": list(self.window)}


def fit_rate(T: Sequence[float], metric: Sequence[float], window: float | tuple[int, int] = 0.8) -> RateFit:
    """Least-squares fit of ``log(metric)`` against ``log(T)``.

    ``window`` is either the trailing fraction of points to use or an explicit
    ``(T_min, T_max)`` range.

    Raises:
        TooFewPoints: fewer than 10 points fall in the window.
        NonPositiveMetric: a metric value in the window is ``<= 0``.
    """
    T = np.asarray(T, dtype=float)
    y = np.asarray(metric, dtype=float)
    if isinstance(window, tuple):
        mask = (T >= window[0]) & (T <= window[1])
    else:
        start = int(round(T.size * (1 - window)))
        mask = np.zeros(T.size, dtype=bool)
        mask[start:] = True
    T, y = T[mask], y[mask]
    if T.size < 10:
        raise TooFewPoints(f"{T.size} points in window, need at least 10")
    if np.any(y <= 0):
        raise NonPositiveMetric("rate fit requires positive metric values")
    lx, ly = np.log(T), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2, (int(T[0]), int(T[-1])))


def plateau(aggregates: Aggregates, name: str = "grad_norm_avg") -> float:
    """Final running-average value, the measured floor of a stochastic run."""
    return float(getattr(aggregates, name)[-1])
