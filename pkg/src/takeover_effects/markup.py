"""Firm-year markups from output elasticities and expenditure shares."""

from __future__ import annotations

import logging
from typing import Mapping

import numpy as np
import pandas as pd

from .errors import CoverageError
from .panel import as_frame

logger = logging.getLogger(__name__)

FLEXIBLE_INPUTS = {
    "materials": (("theta_m",), ("materials_cost",)),
    "labor": (("theta_l",), ("labor_cost",)),
    "composite": (("theta_m", "theta_l"), ("materials_cost", "labor_cost")),
}

# reporting window for distribution summaries; estimation outputs are never trimmed
DISPLAY_RANGE = (0.0, 10.0)


def compute_markups(panel, elasticities: Mapping, flexible_input: str = "materials",
                    correct_shares: bool = True) -> pd.DataFrame:
    """Markup = elasticity of the flexible input / its share in sales.

    ``elasticities`` maps industry codes to ``ElasticitySet`` objects. With
    ``correct_shares`` the sales in the denominator are divided by
    ``exp(epsilon_hat)`` so first-stage measurement error does not leak into
    the share. Rows dropped for zero expenditure or missing elasticities are
    counted in ``result.attrs["excluded"]``.
    """
    if flexible_input not in FLEXIBLE_INPUTS:
        raise ValueError(f"unknown flexible input {flexible_input!r}")
    theta_cols, cost_cols = FLEXIBLE_INPUTS[flexible_input]
    frame = as_frame(panel)
    missing = sorted(set(frame["industry"]) - set(elasticities))
    if missing:
        raise CoverageError(f"no elasticities for industries: {', '.join(map(str, missing))}")

    parts = [es.to_frame() for es in elasticities.values()]
    est = pd.concat(parts, ignore_index=True)[["firm_id", "year", *theta_cols, "epsilon_hat"]]
    cols = ["firm_id", "year", "industry", "sales", *dict.fromkeys(cost_cols)]
    merged = frame[cols].merge(est, on=["firm_id", "year"], how="left", validate="one_to_one")

    excluded = {}
    theta = merged[list(theta_cols)].sum(axis=1, min_count=len(theta_cols)).to_numpy()
    expenditure = merged[list(cost_cols)].sum(axis=1).to_numpy()
    no_theta = ~np.isfinite(theta)
    excluded["no elasticity for observation"] = int(no_theta.sum())
    no_spend = ~no_theta & ~(expenditure > 0)
    excluded["zero expenditure"] = int(no_spend.sum())

    sales = merged["sales"].to_numpy(float)
    if correct_shares:
        eps = merged["epsilon_hat"].to_numpy(float)
        sales = sales / np.exp(np.where(np.isfinite(eps), eps, 0.0))
    keep = ~no_theta & ~no_spend
    alpha = np.divide(expenditure, sales, out=np.full(len(sales), np.nan), where=keep)
    out = pd.DataFrame({
        "firm_id": merged["firm_id"], "year": merged["year"], "industry": merged["industry"],
        "mu": np.divide(theta, alpha, out=np.full(len(sales), np.nan), where=keep), "theta": theta, "alpha": alpha,
        "flexible_input": flexible_input, "sales": merged["sales"],
    }).loc[keep].reset_index(drop=True)
    out.attrs["excluded"] = excluded
    for rule, n in excluded.items():
        if n:
            logger.warning("markups: %d rows excluded (%s)", n, rule)
    return out


def aggregate_markups(records: pd.DataFrame, weights: str = "sales", by: str = "year") -> pd.DataFrame:
    """Weighted mean markup per group; rows with nonpositive weight are ignored."""
    keys = {"year": ["year"], "industry-year": ["industry", "year"]}[by]
    if records.empty:
        raise ValueError("no markup records to aggregate")
    if weights == "sales":
        w = records["sales"].where(records["sales"] > 0, 0.0).astype(float)
    elif weights == "none":
        w = pd.Series(1.0, index=records.index)
    else:
        raise ValueError(f"unknown weighting {weights!r}")
    work = records[keys].copy()
    work["wmu"] = w * records["mu"]
    work["w"] = w
    work["n"] = (w > 0).astype(int)
    grouped = work.groupby(keys, sort=True)[["wmu", "w", "n"]].sum().reset_index()
    empty = grouped["w"] <= 0
    for _, row in grouped[empty].iterrows():
        logger.warning("markup group %s has no positive weight; omitted", tuple(row[keys]))
    grouped = grouped[~empty]
    grouped["weighted_mean"] = grouped["wmu"] / grouped["w"]
    return grouped[[*keys, "weighted_mean", "n"]].reset_index(drop=True)


def markup_distribution(records: pd.DataFrame, year, bins: int = 40) -> dict:
    lo, hi = DISPLAY_RANGE
    mu = records.loc[records["year"] == year, "mu"].to_numpy(float)
    mu = mu[(mu > lo) & (mu <= hi)]
    if mu.size == 0:
        raise ValueError(f"no markup records in {year} within the display range")
    counts, edges = np.histogram(mu, bins=bins, range=(lo, hi))
    return {
        "year": year,
        "n": int(mu.size),
        "mean": float(mu.mean()),
        "median": float(np.median(mu)),
        "sd": float(mu.std(ddof=1)) if mu.size > 1 else 0.0,
        "deciles": np.percentile(mu, np.arange(10, 100, 10)).tolist(),
        "hist_counts": counts.tolist(),
        "hist_edges": edges.tolist(),
    }
