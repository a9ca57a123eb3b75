"""Multiplier bootstrap over firm-level influence values."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

DEFAULT_REPS = 999
IQR_NORMAL = stats.norm.ppf(0.75) - stats.norm.ppf(0.25)


@dataclass
class BootstrapResult:
    se: np.ndarray
    crit: float            # critical value for simultaneous 95% bands
    draws: np.ndarray      # reps x parameters, centred perturbations of the estimates
    reps: int
    seed: int

    def covariance(self) -> np.ndarray:
        return np.atleast_2d(np.cov(self.draws, rowvar=False))

    def bands(self, estimates, uniform: bool = True):
        c = self.crit if uniform else stats.norm.ppf(0.975)
        est = np.asarray(estimates, float)
        return est - c * self.se, est + c * self.se


def _draw_block(influence, seed, reps):
    n = influence.shape[0]
    out = np.empty((len(reps), influence.shape[1]))
    for i, r in enumerate(reps):
        v = np.random.default_rng([seed, r]).integers(0, 2, size=n) * 2.0 - 1.0
        out[i] = v @ influence / n
    return out


def multiplier_bootstrap(influence: np.ndarray, reps: int = DEFAULT_REPS, seed: int = 0,
                         threads: int = 1, alpha: float = 0.05) -> BootstrapResult:
    """Rademacher multiplier bootstrap clustered at the row (firm) level.

    Replication ``r`` draws its multipliers from ``default_rng([seed, r])`` so
    results do not depend on how replications are split across threads.
    Standard errors are the interquartile range of the draws rescaled to a
    normal standard deviation.
    """
    influence = np.atleast_2d(np.asarray(influence, float))
    if influence.shape[0] == 1 and influence.shape[1] > 1:
        influence = influence.T
    if reps < 100:
        logger.warning("bootstrap with %d replications; at least 100 recommended", reps)
    blocks = np.array_split(np.arange(reps), max(1, min(threads, reps)))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: _draw_block(influence, seed, b), blocks))
    else:
        parts = [_draw_block(influence, seed, b) for b in blocks]
    draws = np.vstack(parts)

    q75, q25 = np.percentile(draws, [75, 25], axis=0)
    se = (q75 - q25) / IQR_NORMAL
    se[se < 1e-12 * (1 + np.abs(draws).max(initial=0))] = 0.0
    live = se > 0
    if live.any():
        tmax = np.max(np.abs(draws[:, live]) / se[live], axis=1)
        crit = float(np.quantile(tmax, 1 - alpha))
    else:
        crit = float(stats.norm.ppf(1 - alpha / 2))
    return BootstrapResult(se, crit, draws, reps, seed)


def bootstrap_se(collection, reps: int = DEFAULT_REPS, seed: int = 0, threads: int = 1) -> BootstrapResult:
    """Standard errors and uniform bands for every feasible ATT(g, t) cell."""
    return multiplier_bootstrap(collection.influence_matrix(), reps, seed, threads)


def wald_test(estimates, covariance) -> dict:
    """Joint test that ``estimates`` are all zero, with a pseudo-inverse covariance."""
    b = np.asarray(estimates, float)
    V = np.atleast_2d(covariance)
    df = int(np.linalg.matrix_rank(V))
    if df == 0:
        return {"chi2": np.nan, "df": 0, "pvalue": np.nan}
    stat = float(b @ np.linalg.pinv(V) @ b)
    return {"chi2": stat, "df": df, "pvalue": float(stats.chi2.sf(stat, df))}
