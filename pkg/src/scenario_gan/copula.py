"""Empirical Gaussian copula baseline for horizon scenarios.

Each lead time keeps its empirical marginal; dependence between lead times is
a Gaussian copula fitted on rank-based normal scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, rankdata

from .errors import DataError, DegenerateInputError


@dataclass
class CopulaModel:
    marginals: list           # sorted training values, one array per lead time
    correlation: np.ndarray   # (k, k) correlation of Gaussian scores, regularized
    cholesky: np.ndarray      # lower-triangular factor of ``correlation``
    jitter: float = 0.0

    @property
    def k(self) -> int:
        return len(self.marginals)

    @classmethod
    def from_correlation(cls, marginals, correlation) -> "CopulaModel":
        corr = np.asarray(correlation, dtype=np.float64)
        chol, corr, jitter = regularized_cholesky(corr)
        return cls([np.sort(np.asarray(m, dtype=np.float64)) for m in marginals], corr, chol, jitter)


def regularized_cholesky(matrix: np.ndarray, delta: float = 1e-8, max_tries: int = 60):
    """Add ``delta`` to the diagonal until Cholesky succeeds; returns (L, matrix, added)."""
    added = 0.0
    a = matrix.copy()
    for _ in range(max_tries):
        try:
            return np.linalg.cholesky(a), a, added
        except np.linalg.LinAlgError:
            a[np.diag_indices_from(a)] += delta
            added += delta
    raise DegenerateInputError("correlation matrix could not be regularized to positive definite")


def normal_scores(column: np.ndarray) -> np.ndarray:
    """Phi^{-1}(rank / (n + 1)), average ranks for ties."""
    return norm.ppf(rankdata(column) / (len(column) + 1))


def fit_copula(horizons, k: int | None = None) -> CopulaModel:
    """Fit marginals and score correlation on an ``(n, k)`` array of horizon segments."""
    x = np.asarray([getattr(w, "horizon", w) for w in horizons], dtype=np.float64)
    if x.ndim != 2:
        raise DataError("horizon segments must share one length")
    n, kk = x.shape
    if k is not None and kk != k:
        raise DataError(f"horizon segments have length {kk}, expected {k}")
    if n < kk + 1:
        raise DataError(f"need at least k+1={kk + 1} windows, got {n}")
    const = np.flatnonzero(np.ptp(x, axis=0) == 0)
    if const.size:
        raise DegenerateInputError(f"lead time {int(const[0])} has a degenerate marginal")
    scores = np.column_stack([normal_scores(x[:, j]) for j in range(kk)])
    corr = np.corrcoef(scores, rowvar=False)
    corr = (corr + corr.T) / 2.0
    np.fill_diagonal(corr, 1.0)
    return CopulaModel.from_correlation([x[:, j] for j in range(kk)], corr)


def inverse_marginal(sorted_values: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Linear interpolation between order statistics placed at i/(n+1)."""
    n = len(sorted_values)
    probs = np.arange(1, n + 1) / (n + 1)
    return np.interp(u, probs, sorted_values)


def sample_copula(model: CopulaModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """``(n, k)`` scenarios: correlated normals -> uniforms -> empirical quantiles."""
    if n == 0:
        return np.zeros((0, model.k))
    g = rng.standard_normal((n, model.k)) @ model.cholesky.T
    u = norm.cdf(g)
    return np.column_stack([inverse_marginal(m, u[:, j]) for j, m in enumerate(model.marginals)])
