"""Scenario quality metrics: autocorrelation, lead-time Pearson matrix, CRPS.

Covariances use the biased (1/n) estimator throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DegenerateInputError


@dataclass
class AutocorrCurve:
    lags: np.ndarray
    values: np.ndarray


def autocorrelation(series, k_max: int) -> AutocorrCurve:
    """R(k) = mean((s_t - mu)(s_{t+k} - mu)) / sigma^2 for k = 0..k_max."""
    s = np.asarray(series, dtype=np.float64)
    if s.ndim != 1:
        raise DataError("autocorrelation expects a 1-D series")
    if not 0 <= k_max < len(s):
        raise ConfigError(f"need 0 <= k_max < len(series), got k_max={k_max}, len={len(s)}")
    # test the raw values: the mean of a constant series can carry rounding error
    if np.ptp(s) == 0:
        raise DegenerateInputError("autocorrelation of a constant series is undefined")
    d = s - s.mean()
    c0 = d @ d
    values = np.empty(k_max + 1)
    values[0] = 1.0
    for lag in range(1, k_max + 1):
        values[lag] = (d[:-lag] @ d[lag:]) / c0
    return AutocorrCurve(np.arange(k_max + 1), values)


def autocorrelation_set(scenarios, k_max: int):
    """Per-scenario curves ``(N, k_max+1)`` and their pooled mean."""
    arr = np.atleast_2d(np.asarray(scenarios, dtype=np.float64))
    per = np.stack([autocorrelation(row, k_max).values for row in arr])
    return per, per.mean(axis=0)


@dataclass
class CorrelationMatrix:
    values: np.ndarray

    def table(self):
        """Flat ``(i, j, rho)`` rows, 1-based lead indices."""
        n = self.values.shape[0]
        return [(i + 1, j + 1, float(self.values[i, j])) for i in range(n) for j in range(n)]


def pearson_matrix(vectors) -> CorrelationMatrix:
    """Pearson correlation between lead times across a set of length-K vectors."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError("need at least two vectors of equal length")
    d = x - x.mean(axis=0)
    var = (d * d).mean(axis=0)
    zero = np.flatnonzero(np.ptp(x, axis=0) == 0)
    if zero.size:
        raise DegenerateInputError(f"lead time column {int(zero[0])} has zero variance")
    cov = d.T @ d / x.shape[0]
    std = np.sqrt(var)
    rho = cov / np.outer(std, std)
    rho = np.clip(np.triu(rho, 1), -1.0, 1.0)
    rho = rho + rho.T
    np.fill_diagonal(rho, 1.0)
    return CorrelationMatrix(rho)


def crps(scenario_values, realization: float, lo: float = 0.0, hi: float = 1.0) -> float:
    """Exact integral over [lo, hi] of (F_hat(p) - 1{p >= y})^2 for the step CDF F_hat.

    Both functions are piecewise constant between the sorted breakpoints
    (scenario values and the realization), so the integral is a finite sum.
    """
    s = np.sort(np.asarray(scenario_values, dtype=np.float64).ravel())
    if s.size == 0:
        raise DataError("CRPS needs at least one scenario")
    y = float(realization)
    if s[0] < lo or s[-1] > hi or not lo <= y <= hi:
        raise DataError(f"scenario values and realization must lie in [{lo}, {hi}]")
    points = np.unique(np.concatenate([[lo, hi, y], s]))
    left, right = points[:-1], points[1:]
    # F_hat and the indicator are constant on each [left, right); evaluate at left
    cdf = np.searchsorted(s, left, side="right") / s.size
    ind = (left >= y).astype(np.float64)
    return float(np.sum((cdf - ind) ** 2 * (right - left)))


@dataclass
class CrpsCurve:
    values: np.ndarray      # one CRPS per lead time (1..k)
    n_instances: int
    n_scenarios: list

    @property
    def leads(self) -> np.ndarray:
        return np.arange(1, len(self.values) + 1)


def crps_curve(scenario_sets, realizations) -> CrpsCurve:
    """Average per-instance CRPS at each lead time.

    ``scenario_sets`` holds one ``(N_i, k)`` array per evaluated instance and
    ``realizations`` the matching ``(k,)`` observed horizons.
    """
    sets = [np.atleast_2d(np.asarray(s, dtype=np.float64)) for s in scenario_sets]
    obs = [np.asarray(r, dtype=np.float64).ravel() for r in realizations]
    if len(sets) != len(obs):
        raise DataError(f"{len(sets)} scenario sets but {len(obs)} realizations")
    if not sets:
        raise DataError("no instances to evaluate")
    k = obs[0].size
    for i, (sset, r) in enumerate(zip(sets, obs)):
        if sset.shape[1] != k or r.size != k:
            raise DataError(f"instance {i}: lead-time count differs from k={k}")
    per = np.array([[crps(sset[:, j], r[j]) for j in range(k)] for sset, r in zip(sets, obs)])
    return CrpsCurve(per.mean(axis=0), len(sets), [s.shape[0] for s in sets])
