"""Variance of averaged estimators and Gaussian conditional variances."""

from __future__ import annotations

import numpy as np


def averaged_estimator_variance(variances, draws: int = 100_000, seed: int = 0, mean: float = 0.0) -> float:
    """Empirical variance of the mean of independent unbiased Gaussian estimators."""
    sd = np.sqrt(np.asarray(variances, dtype=np.float64))
    rng = np.random.default_rng(seed)
    samples = mean + rng.standard_normal((draws, sd.size)) * sd
    return float(samples.mean(axis=1).var(ddof=1))


def averaged_variance_bound(variances) -> float:
    """The worst single estimator's variance divided by the number of estimators."""
    v = np.asarray(variances, dtype=np.float64)
    return float(v.max() / v.size)


def conditional_variance(cov, index: int) -> float:
    """Var(g_index | all other coordinates) for a jointly Gaussian vector.

    ``cov[i, i] - cov[i, rest] @ inv(cov[rest, rest]) @ cov[rest, i]``
    """
    cov = np.asarray(cov, dtype=np.float64)
    rest = np.arange(cov.shape[0]) != index
    cross = cov[index, rest]
    if not cross.size:
        return float(cov[index, index])
    return float(cov[index, index] - cross @ np.linalg.solve(cov[np.ix_(rest, rest)], cross))


def random_spd(n: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((n, n))
    return a @ a.T + n * 1e-3 * np.eye(n)
