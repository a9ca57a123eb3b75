"""Propensity-score nearest-neighbour matching and two-way fixed-effects DiD."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .did.logit import fit_logit
from .errors import PreconditionError, RankError
from .panel import as_frame

logger = logging.getLogger(__name__)

MATCH_COVARIATES = ("log_size", "log_capital_intensity", "tfp", "log_age")
MATCH_CATEGORICAL = ("country", "industry", "year")
VARIANCE_RATIO_BAND = (0.80, 1.20)
FE_TOL = 1e-10


@dataclass(frozen=True)
class PsmDesign:
    covariates: tuple[str, ...] = MATCH_COVARIATES
    categorical: tuple[str, ...] = MATCH_CATEGORICAL
    exact: tuple[str, ...] = ("year",)
    caliper: Optional[float] = None
    tol: float = 1e-10
    max_iter: int = 50


@dataclass
class MatchedSample:
    pairs: pd.DataFrame        # treated_id, control_id, year, distance, treated_pscore, control_pscore
    records: pd.DataFrame      # matching records with their p-scores
    common_support: tuple[float, float]
    caliper: Optional[float] = None
    unmatched: list = field(default_factory=list)
    off_support: list = field(default_factory=list)
    pscore_coef: dict = field(default_factory=dict)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)


def matching_records(panel, design: PsmDesign = PsmDesign(), lag: int = 1) -> pd.DataFrame:
    """One row per treated firm (covariates ``lag`` years before its event) plus
    every firm-year of never-treated firms in those years."""
    frame = as_frame(panel)
    cols = ["firm_id", "year", "cohort", *design.covariates,
            *[c for c in design.categorical if c not in ("year",)]]
    missing = [c for c in cols if c not in frame.columns]
    if missing:
        raise PreconditionError(f"matching: missing columns {missing}")
    data = frame[list(dict.fromkeys(cols))]
    treated = data[np.isfinite(data["cohort"]) & (data["year"] == data["cohort"] - lag)].copy()
    treated["treated"] = 1
    years = np.unique(treated["year"])
    controls = data[np.isinf(data["cohort"]) & data["year"].isin(years)].copy()
    controls["treated"] = 0
    out = pd.concat([treated, controls], ignore_index=True)
    out = out.dropna(subset=list(design.covariates))
    return out.sort_values(["treated", "firm_id", "year"], ascending=[False, True, True]).reset_index(drop=True)


def _dummies(frame, categorical):
    cols, names = [], []
    for c in categorical:
        levels = np.sort(frame[c].astype(str).unique())
        x = frame[c].astype(str).to_numpy()
        for lev in levels[1:]:
            cols.append((x == lev).astype(float))
            names.append(f"{c}={lev}")
    return cols, names


def fit_match_pscore(records: pd.DataFrame, design: PsmDesign = PsmDesign()):
    """Logit of treatment on the matching covariates and indicator sets."""
    X = [np.ones(len(records))] + [records[c].to_numpy(float) for c in design.covariates]
    names = ["const", *design.covariates]
    dcols, dnames = _dummies(records, design.categorical)
    # drop indicator columns that carry no variation among either group
    d = records["treated"].to_numpy()
    for col, name in zip(dcols, dnames):
        if col[d == 1].any() and col[d == 0].any() and not col[d == 0].all():
            X.append(col)
            names.append(name)
    fit = fit_logit(np.column_stack(X), d, names, tol=design.tol, max_iter=design.max_iter)
    out = records.copy()
    out["pscore"] = fit.fitted
    return out, fit


def nn_match(records: pd.DataFrame, caliper: Optional[float] = None,
             exact: Sequence[str] = ("year",), common_support: bool = True) -> MatchedSample:
    """Greedy one-to-one nearest-neighbour matching without replacement.

    Treated units are processed in descending p-score order (ties by
    firm_id); each takes the closest unused control within its exact-match
    stratum, ties going to the lowest control firm_id. A control firm is used
    at most once. With ``common_support`` treated units outside [min, max]
    of control p-scores are dropped.
    """
    if "pscore" not in records:
        raise PreconditionError("records carry no pscore column")
    tr = records[records["treated"] == 1]
    co = records[records["treated"] == 0].sort_values(["firm_id", *exact], kind="mergesort")
    if co.empty:
        raise PreconditionError("no control records to match")
    support = (float(co["pscore"].min()), float(co["pscore"].max()))
    order = tr.assign(_neg=-tr["pscore"]).sort_values(["_neg", "firm_id"], kind="mergesort")

    c_p = co["pscore"].to_numpy()
    c_id = co["firm_id"].to_numpy()
    firm_codes = pd.factorize(c_id)[0]
    used = np.zeros(firm_codes.max() + 1, dtype=bool)
    # control positions per exact-match stratum, in firm_id order
    keys = list(zip(*[co[e].to_numpy() for e in exact])) if exact else [()] * len(co)
    strata: dict = {}
    for pos, key in enumerate(keys):
        strata.setdefault(key, []).append(pos)
    strata = {k: np.asarray(v) for k, v in strata.items()}
    rows, unmatched, off = [], [], []
    for rec in order.itertuples(index=False):
        p = rec.pscore
        if common_support and (p < support[0] or p > support[1]):
            off.append(rec.firm_id)
            continue
        key = tuple(getattr(rec, e) for e in exact)
        pool = strata.get(key, np.zeros(0, dtype=int))
        cand = pool[~used[firm_codes[pool]]]
        if cand.size == 0:
            unmatched.append(rec.firm_id)
            continue
        dist = np.abs(c_p[cand] - p)
        j = cand[np.argmin(dist)]                # first minimum = lowest firm_id
        if caliper is not None and abs(c_p[j] - p) > caliper:
            unmatched.append(rec.firm_id)
            continue
        used[firm_codes[j]] = True
        row = {"treated_id": rec.firm_id, "control_id": c_id[j], "distance": abs(c_p[j] - p),
               "treated_pscore": p, "control_pscore": c_p[j]}
        for e, val in zip(exact, key):
            row[e] = val
        if "cohort" in records:
            row["cohort"] = rec.cohort
        rows.append(row)
    if off:
        logger.info("matching: %d treated units outside common support", len(off))
    if unmatched:
        logger.info("matching: %d treated units left unmatched", len(unmatched))
    columns = ["treated_id", "control_id", *exact, "cohort", "distance", "treated_pscore", "control_pscore"]
    if "cohort" not in records:
        columns.remove("cohort")
    pairs = pd.DataFrame(rows, columns=columns)
    return MatchedSample(pairs, records, support, caliper, unmatched, off)


def balance_row(x_t: np.ndarray, x_c: np.ndarray) -> dict:
    """Means, standardized %bias, equal-variance t-test and variance ratio."""
    x_t = np.asarray(x_t, float)
    x_c = np.asarray(x_c, float)
    m_t, m_c = x_t.mean(), x_c.mean()
    v_t, v_c = x_t.var(ddof=1), x_c.var(ddof=1)
    pooled = np.sqrt((v_t + v_c) / 2)
    row = {"mean_treated": m_t, "mean_control": m_c, "bias": np.nan, "t": np.nan, "p": np.nan,
           "variance_ratio": np.nan, "flag": ""}
    if pooled > 0:
        row["bias"] = 100.0 * (m_t - m_c) / pooled
        res = stats.ttest_ind(x_t, x_c, equal_var=True)
        row["t"], row["p"] = float(res.statistic), float(res.pvalue)
    else:
        row["flag"] = "undefined"
    if v_c > 0:
        row["variance_ratio"] = v_t / v_c
        lo, hi = VARIANCE_RATIO_BAND
        if not lo <= row["variance_ratio"] <= hi:
            row["flag"] = "*"
    return row


def balance_diagnostics(matched: MatchedSample, covariates: Sequence[str] = MATCH_COVARIATES) -> pd.DataFrame:
    """Before/after balance table, one row per covariate and sample."""
    rec = matched.records
    pair_keys = [c for c in ("year",) if c in matched.pairs]
    key_t = matched.pairs[["treated_id", *pair_keys]].rename(columns={"treated_id": "firm_id"})
    key_c = matched.pairs[["control_id", *pair_keys]].rename(columns={"control_id": "firm_id"})
    treated = rec[rec["treated"] == 1]
    controls = rec[rec["treated"] == 0]
    m_t = treated.merge(key_t, on=["firm_id", *pair_keys])
    m_c = controls.merge(key_c, on=["firm_id", *pair_keys])
    if m_t.empty:
        raise PreconditionError("matched sample is empty")
    rows = []
    for cov in covariates:
        for sample, (a, b) in (("unmatched", (treated, controls)), ("matched", (m_t, m_c))):
            rows.append({"variable": cov, "sample": sample, **balance_row(a[cov], b[cov])})
    return pd.DataFrame(rows)


def matched_panel(panel, matched: MatchedSample) -> pd.DataFrame:
    """Panel rows of matched firms; controls inherit their partner's event year."""
    frame = as_frame(panel)
    event = matched.pairs.assign(event=matched.pairs["cohort"]) if "cohort" in matched.pairs else None
    if event is None:
        raise PreconditionError("matched pairs carry no event year")
    t = frame.merge(event[["treated_id", "event"]].rename(columns={"treated_id": "firm_id"}), on="firm_id")
    t["treated"] = 1
    c = frame.merge(event[["control_id", "event"]].rename(columns={"control_id": "firm_id"}), on="firm_id")
    c["treated"] = 0
    out = pd.concat([t, c], ignore_index=True)
    out["post"] = (out["year"] >= out["event"]).astype(int)
    return out.sort_values(["firm_id", "year"]).reset_index(drop=True)


def unmatched_panel(panel) -> pd.DataFrame:
    """All treated and never-treated rows; Post is zero for never-treated firms."""
    frame = as_frame(panel).copy()
    frame["treated"] = np.isfinite(frame["cohort"]).astype(int)
    frame["event"] = frame["cohort"]
    frame["post"] = ((frame["treated"] == 1) & (frame["year"] >= frame["cohort"])).astype(int)
    return frame


def absorb(columns: np.ndarray, groups: Sequence[np.ndarray], tol: float = FE_TOL, max_iter: int = 10000) -> np.ndarray:
    """Sweep out one or more sets of fixed effects by alternating projections."""
    out = np.array(columns, dtype=float, copy=True)
    if not groups:
        return out
    codes = [pd.factorize(g)[0] for g in groups]
    counts = [np.bincount(c) for c in codes]
    for _ in range(max_iter):
        change = 0.0
        for c, n in zip(codes, counts):
            means = np.vstack([np.bincount(c, weights=out[:, j]) for j in range(out.shape[1])]).T / n[:, None]
            step = means[c]
            out -= step
            change = max(change, float(np.max(np.abs(step))) if step.size else 0.0)
        if change < tol or len(codes) == 1:
            return out
    logger.warning("fixed-effect absorption stopped after %d sweeps", max_iter)
    return out


@dataclass
class TwfeResult:
    coefficient: float
    se: float
    coefficients: dict
    std_errors: dict
    n_obs: int
    n_treated_obs: int
    n_untreated_obs: int
    n_clusters: int
    dropped: list
    matching: bool = False

    @property
    def pvalue(self) -> float:
        return float(2 * stats.t.sf(abs(self.coefficient / self.se), self.n_clusters - 1)) if self.se > 0 else np.nan


def _independent_columns(X, names, protect: int = 0):
    keep, basis = [], []
    scale = np.sqrt((X ** 2).sum(axis=0))
    for j in range(X.shape[1]):
        v = X[:, j].copy()
        for q in basis:
            v -= (q @ v) * q
        norm = np.linalg.norm(v)
        if scale[j] > 0 and norm > 1e-9 * scale[j]:
            keep.append(j)
            basis.append(v / norm)
        elif j < protect:
            raise RankError(f"design is singular: {names[j]!r} is collinear with the fixed effects")
    return keep


def twfe_did(frame: pd.DataFrame, outcome: str, controls: Sequence[str] = (),
             fixed_effects: Sequence[str] = ("year", "country", "industry"),
             cluster: str = "firm_id", matching: bool = False) -> TwfeResult:
    """Least squares of ``outcome`` on T, Post, T x Post and controls.

    Fixed effects are absorbed; regressors made redundant by them are dropped
    silently, except T x Post whose loss is an error. Standard errors are
    clustered by ``cluster`` with the usual small-sample factor.
    """
    cols = [outcome, "treated", "post", *controls, cluster, *fixed_effects]
    data = frame[list(dict.fromkeys(cols))].dropna()
    y = data[outcome].to_numpy(float)
    T = data["treated"].to_numpy(float)
    P = data["post"].to_numpy(float)
    names = ["treated_x_post", "treated", "post", *controls]
    X = np.column_stack([T * P, T, P] + [data[c].to_numpy(float) for c in controls])
    if fixed_effects:
        groups = [data[f].astype(str).to_numpy() for f in fixed_effects]
        Z = absorb(np.column_stack([y, X]), groups)
        y_w, X_w = Z[:, 0], Z[:, 1:]
        n_fe = sum(len(np.unique(g)) for g in groups) - (len(groups) - 1)
    else:
        X = np.column_stack([X, np.ones(len(y))])
        names.append("const")
        y_w, X_w = y, X
        n_fe = 0
    keep = _independent_columns(X_w, names, protect=1)
    dropped = [names[j] for j in range(len(names)) if j not in keep]
    X_w = X_w[:, keep]
    kept = [names[j] for j in keep]
    XtX_inv = np.linalg.inv(X_w.T @ X_w)
    beta = XtX_inv @ (X_w.T @ y_w)
    u = y_w - X_w @ beta

    cl = pd.factorize(data[cluster])[0]
    G = cl.max() + 1
    scores = np.zeros((G, X_w.shape[1]))
    np.add.at(scores, cl, X_w * u[:, None])
    n, k = X_w.shape[0], X_w.shape[1] + n_fe
    factor = G / (G - 1) * (n - 1) / max(n - k, 1) if G > 1 else 1.0
    V = factor * XtX_inv @ (scores.T @ scores) @ XtX_inv
    se = np.sqrt(np.clip(np.diag(V), 0, None))
    treated_obs = int((T == 1).sum())
    return TwfeResult(
        float(beta[0]), float(se[0]), dict(zip(kept, beta.tolist())), dict(zip(kept, se.tolist())),
        n, treated_obs, n - treated_obs, int(G), dropped, matching,
    )
