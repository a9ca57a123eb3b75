"""Overall, per-cohort and event-time aggregation of ATT(g, t) cells."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from ..errors import AggregationError, PreconditionError
from .attgt import AttGtCollection
from .inference import DEFAULT_REPS, multiplier_bootstrap, wald_test

logger = logging.getLogger(__name__)


@dataclass
class AggregatedEffect:
    kind: str                      # overall | by_group | by_exposure
    labels: list
    estimates: np.ndarray
    weights: list[dict]            # per label: {(g, t): weight}
    influence: np.ndarray          # firms x labels
    se: np.ndarray = None
    crit: float = np.nan
    summary: dict = field(default_factory=dict)   # pre/post averages for event studies
    pretrend: Optional[dict] = None

    @property
    def ci_low(self):
        return self.estimates - 1.959963984540054 * self.se

    @property
    def ci_high(self):
        return self.estimates + 1.959963984540054 * self.se

    def to_frame(self) -> pd.DataFrame:
        key = {"overall": "label", "by_group": "g", "by_exposure": "e"}[self.kind]
        out = pd.DataFrame({key: self.labels, "estimate": self.estimates, "se": self.se,
                            "ci_low": self.ci_low, "ci_high": self.ci_high,
                            "band_low": self.estimates - self.crit * self.se,
                            "band_high": self.estimates + self.crit * self.se})
        return out


def _cohort_shares(collection: AttGtCollection, cohorts):
    """Cohort weights P(G=g) among ``cohorts`` and their influence values."""
    G = collection.data.cohort
    ind = np.column_stack([(G == g).astype(float) for g in cohorts])
    pi = ind.mean(axis=0)
    total = pi.sum()
    share = pi / total
    inf = (ind - pi) / total - np.outer((ind - pi).sum(axis=1), pi) / total ** 2
    return share, inf


def _combine(collection: AttGtCollection, groups: dict, index: dict, inf_cells: np.ndarray):
    """Cohort-share weighted average of within-cohort averages.

    ``groups`` maps cohort -> {(g, t): within-cohort weight}.
    """
    cohorts = sorted(groups)
    share, share_inf = _cohort_shares(collection, cohorts)
    est = 0.0
    inf = np.zeros(inf_cells.shape[0])
    weights = {}
    for k, g in enumerate(cohorts):
        a_g = 0.0
        inf_g = np.zeros_like(inf)
        for cell_key, w in groups[g].items():
            j = index[cell_key]
            a_g += w * collection.feasible[j].estimate
            inf_g += w * inf_cells[:, j]
            weights[cell_key] = share[k] * w
        est += share[k] * a_g
        inf += share[k] * inf_g + a_g * share_inf[:, k]
    return est, inf, weights


def _post_groups(collection):
    groups = {}
    for c in collection.feasible:
        if c.t >= c.g:
            groups.setdefault(c.g, []).append((c.g, c.t))
    return {g: {k: 1.0 / len(v) for k in v} for g, v in groups.items()}


def _finish(agg: AggregatedEffect, reps, seed, threads):
    boot = multiplier_bootstrap(agg.influence, reps, seed, threads)
    agg.se, agg.crit = boot.se, boot.crit
    return boot


def aggregate_overall(collection: AttGtCollection, reps: int = DEFAULT_REPS, seed: int = 0,
                      threads: int = 1) -> AggregatedEffect:
    """Cohort-share weighted mean over cohorts of each cohort's average post-treatment effect."""
    groups = _post_groups(collection)
    if not groups:
        raise AggregationError("no feasible post-treatment (g, t) cell")
    inf_cells = collection.influence_matrix()
    index = {(c.g, c.t): j for j, c in enumerate(collection.feasible)}
    est, inf, w = _combine(collection, groups, index, inf_cells)
    agg = AggregatedEffect("overall", ["overall"], np.array([est]), [w], inf[:, None])
    _finish(agg, reps, seed, threads)
    return agg


def aggregate_by_group(collection: AttGtCollection, reps: int = DEFAULT_REPS, seed: int = 0,
                       threads: int = 1) -> AggregatedEffect:
    groups = _post_groups(collection)
    if not groups:
        raise AggregationError("no feasible post-treatment (g, t) cell")
    inf_cells = collection.influence_matrix()
    index = {(c.g, c.t): j for j, c in enumerate(collection.feasible)}
    labels, ests, infs, weights = [], [], [], []
    for g in sorted(groups):
        labels.append(g)
        ests.append(sum(w * collection.feasible[index[k]].estimate for k, w in groups[g].items()))
        infs.append(sum(w * inf_cells[:, index[k]] for k, w in groups[g].items()))
        weights.append(dict(groups[g]))
    agg = AggregatedEffect("by_group", labels, np.array(ests), weights, np.column_stack(infs))
    _finish(agg, reps, seed, threads)
    return agg


def event_study(collection: AttGtCollection, window: Optional[Sequence[int]] = None,
                reps: int = DEFAULT_REPS, seed: int = 0, threads: int = 1) -> AggregatedEffect:
    """Effects by exposure ``e = t - g`` with pre/post averages and a joint pretrend test.

    At each ``e`` the cohorts with a feasible (g, g + e) cell are weighted by
    their size. The base-year exposure is identically zero and is omitted, as
    are exposures with no feasible cell.
    """
    base_e = -1 - collection.design.anticipation
    feasible = collection.feasible
    exposures = sorted({c.exposure for c in feasible} - {base_e})
    if window is not None:
        lo, hi = window
        exposures = [e for e in exposures if lo <= e <= hi]
        for e in range(lo, hi + 1):
            if e != base_e and e not in exposures:
                logger.info("event study: exposure %d has no feasible cell; omitted", e)
    pre = [e for e in exposures if e < 0]
    post = [e for e in exposures if e >= 0]
    if not pre or not post:
        raise PreconditionError("event window needs at least one pre and one post exposure")

    inf_cells = collection.influence_matrix()
    index = {(c.g, c.t): j for j, c in enumerate(feasible)}
    ests, infs, weights = [], [], []
    for e in exposures:
        groups = {c.g: {(c.g, c.t): 1.0} for c in feasible if c.exposure == e}
        est, inf, w = _combine(collection, groups, index, inf_cells)
        ests.append(est)
        infs.append(inf)
        weights.append(w)
    ests = np.array(ests)
    infs = np.column_stack(infs)
    is_pre = np.array([e < 0 for e in exposures])
    avg_est = np.array([ests[is_pre].mean(), ests[~is_pre].mean()])
    avg_inf = np.column_stack([infs[:, is_pre].mean(axis=1), infs[:, ~is_pre].mean(axis=1)])

    boot = multiplier_bootstrap(np.column_stack([infs, avg_inf]), reps, seed, threads)
    k = len(exposures)
    agg = AggregatedEffect("by_exposure", exposures, ests, weights, infs)
    agg.se = boot.se[:k]
    agg.crit = boot.crit
    agg.summary = {name: {"estimate": float(avg_est[i]), "se": float(boot.se[k + i])}
                   for i, name in enumerate(("pre_average", "post_average"))}
    pre_cov = np.atleast_2d(np.cov(boot.draws[:, :k][:, is_pre], rowvar=False))
    agg.pretrend = wald_test(ests[is_pre], pre_cov)
    return agg
