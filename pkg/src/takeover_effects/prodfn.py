"""Per-industry production function estimation and output elasticities.

Two estimators share the ``ElasticitySet`` result type:

* ``ols_translog``: least squares of log output on translog (or Cobb-Douglas)
  terms plus year dummies.
* ``acf_estimate``: the two-stage proxy estimator with materials as the
  proxy. Stage one purges measurement error with a polynomial in the inputs;
  stage two recovers the technology coefficients from the orthogonality of
  productivity innovations to predetermined instruments.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.optimize import minimize

from .errors import ConvergenceError, PreconditionError, RankError
from .panel import Panel, as_frame

logger = logging.getLogger(__name__)

TRANSLOG_TERMS = ("l", "k", "m", "ll", "kk", "mm", "lk", "lm", "km")
COBB_DOUGLAS_TERMS = ("l", "k", "m")


@dataclass(frozen=True)
class TranslogSpec:
    form: str = "translog"
    include_time_dummies: bool = True
    output: str = "log_sales"
    labor: str = "log_labor"
    capital: str = "log_capital"
    materials: str = "log_materials_qty"

    def __post_init__(self):
        if self.form not in ("translog", "cobb_douglas"):
            raise ValueError(f"unknown production function form {self.form!r}")

    @property
    def terms(self) -> tuple[str, ...]:
        return TRANSLOG_TERMS if self.form == "translog" else COBB_DOUGLAS_TERMS


@dataclass(frozen=True)
class AcfConfig:
    first_stage_degree: int = 3
    law_of_motion_degree: int = 3
    instrument_degree: int = 2
    first_stage_controls: tuple[str, ...] = ("log_materials_price", "post_takeover")
    # exogenous input-demand shifters, used as current-period instruments when present
    extra_instruments: tuple[str, ...] = ("log_materials_price",)
    tolerance: float = 1e-8
    max_iterations: int = 20000
    restarts: int = 5
    restart_scale: float = 0.05
    seed: int = 0
    min_obs: int = 30

    def __post_init__(self):
        if self.first_stage_degree < 2:
            raise ValueError("first_stage_degree must be >= 2")
        if self.law_of_motion_degree < 1 or self.instrument_degree < 1:
            raise ValueError("polynomial degrees must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class ElasticitySet:
    industry: str
    method: str
    spec: TranslogSpec
    beta: dict[str, float]
    index: pd.DataFrame
    theta_m: np.ndarray
    theta_l: np.ndarray
    theta_k: np.ndarray
    phi_hat: np.ndarray
    epsilon_hat: np.ndarray
    omega_hat: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    std_error: dict[str, float] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        out = self.index.copy()
        out["industry"] = self.industry
        out["theta_m"] = self.theta_m
        out["theta_l"] = self.theta_l
        out["theta_k"] = self.theta_k
        out["phi_hat"] = self.phi_hat
        out["epsilon_hat"] = self.epsilon_hat
        out["omega_hat"] = self.omega_hat
        return out

    def coefficient_table(self) -> pd.DataFrame:
        return pd.DataFrame({
            "industry": self.industry,
            "term": list(self.beta),
            "coefficient": list(self.beta.values()),
            "std_error": [self.std_error.get(t, np.nan) for t in self.beta],
            "se_method": "firm bootstrap" if self.std_error else "",
        })


def translog_terms(l, k, m, terms: Sequence[str] = TRANSLOG_TERMS) -> np.ndarray:
    cols = {"l": l, "k": k, "m": m}
    return np.column_stack([
        cols[t] if len(t) == 1 else cols[t[0]] * cols[t[1]] for t in terms
    ])


def output_elasticity(beta: Mapping[str, float], l, k, m) -> dict[str, np.ndarray]:
    """Output elasticities of labor, capital and materials at given log inputs.

    Squared terms enter the production function as ``beta[mm] * m**2`` so the
    materials elasticity is ``b_m + 2 b_mm m + b_lm l + b_km k``. Missing
    second-order terms are zero (the Cobb-Douglas restriction).
    """
    b = {t: np.asarray(beta.get(t, 0.0), dtype=float) for t in TRANSLOG_TERMS}
    l, k, m = (np.asarray(v, dtype=float) for v in (l, k, m))
    theta_m = b["m"] + 2 * b["mm"] * m + b["lm"] * l + b["km"] * k
    theta_l = b["l"] + 2 * b["ll"] * l + b["lk"] * k + b["lm"] * m
    theta_k = b["k"] + 2 * b["kk"] * k + b["lk"] * l + b["km"] * m
    return {"m": theta_m, "l": theta_l, "k": theta_k}


def _industry_sample(data, industry, spec: TranslogSpec, extra: Sequence[str] = ()) -> pd.DataFrame:
    frame = as_frame(data)
    cols = ["firm_id", "year", spec.output, spec.labor, spec.capital, spec.materials, *extra]
    sub = frame.loc[frame["industry"] == industry, cols]
    finite = np.isfinite(sub[cols[2:]].to_numpy(dtype=float)).all(axis=1)
    return sub.loc[finite].sort_values(["firm_id", "year"], kind="mergesort").reset_index(drop=True)


def _year_dummies(years: np.ndarray) -> tuple[np.ndarray, list[str]]:
    levels = np.unique(years)
    if len(levels) < 2:
        return np.empty((len(years), 0)), []
    return (
        (years[:, None] == levels[None, 1:]).astype(float),
        [f"year_{y}" for y in levels[1:]],
    )


def _check_rank(X: np.ndarray, names: Sequence[str]) -> None:
    if X.shape[0] < X.shape[1]:
        raise RankError(f"{X.shape[0]} observations for {X.shape[1]} regressors")
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps * 1e3
    rank = int((diag > tol).sum())
    if rank < X.shape[1]:
        dropped = [names[j] for j in piv[rank:]]
        raise RankError(f"rank-deficient design; collinear terms: {', '.join(dropped)}")


def _inputs(sample: pd.DataFrame, spec: TranslogSpec):
    return (
        sample[spec.output].to_numpy(float),
        sample[spec.labor].to_numpy(float),
        sample[spec.capital].to_numpy(float),
        sample[spec.materials].to_numpy(float),
    )


def _assemble(industry, method, spec, beta, sample, l, k, m, phi, eps, diagnostics):
    theta = output_elasticity(beta, l, k, m)
    f = translog_terms(l, k, m, spec.terms) @ np.array([beta[t] for t in spec.terms])
    return ElasticitySet(
        industry=industry, method=method, spec=spec, beta=dict(beta),
        index=sample[["firm_id", "year"]].reset_index(drop=True),
        theta_m=theta["m"], theta_l=theta["l"], theta_k=theta["k"],
        phi_hat=phi, epsilon_hat=eps, omega_hat=phi - f, diagnostics=diagnostics,
    )


def ols_translog(panel, industry, spec: TranslogSpec = TranslogSpec(), min_obs: int = 30) -> ElasticitySet:
    """Least-squares production function for one industry."""
    sample = _industry_sample(panel, industry, spec)
    if len(sample) < min_obs:
        raise PreconditionError(f"industry {industry}: {len(sample)} observations, need {min_obs}")
    y, l, k, m = _inputs(sample, spec)
    T = translog_terms(l, k, m, spec.terms)
    names = ["const", *spec.terms]
    X = np.column_stack([np.ones(len(y)), T])
    if spec.include_time_dummies:
        D, dnames = _year_dummies(sample["year"].to_numpy())
        X = np.column_stack([X, D])
        names += dnames
    _check_rank(X, names)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    beta = {t: float(v) for t, v in zip(spec.terms, coef[1:1 + len(spec.terms)])}
    fitted = X @ coef
    return _assemble(
        industry, "ols", spec, beta, sample, l, k, m, fitted, y - fitted,
        {"n_obs": len(y), "status": "closed form"},
    )


def polynomial_features(columns: Sequence[np.ndarray], degree: int) -> np.ndarray:
    """All monomials of total degree 1..degree (no constant).

    Inputs are standardized first; this leaves the spanned space unchanged
    and keeps the cross-product matrix well conditioned.
    """
    Z = np.column_stack(columns).astype(float)
    sd = Z.std(axis=0)
    Z = (Z - Z.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    feats = []
    for d in range(1, degree + 1):
        for combo in combinations_with_replacement(range(Z.shape[1]), d):
            feats.append(np.prod(Z[:, combo], axis=1))
    return np.column_stack(feats)


def lag_index(firm_ids: np.ndarray, years: np.ndarray) -> np.ndarray:
    """Position of each row's previous-year row for the same firm, or -1.

    Rows must be sorted by (firm, year).
    """
    prev = np.full(len(years), -1)
    same = (firm_ids[1:] == firm_ids[:-1]) & (years[1:] == years[:-1] + 1)
    prev[1:][same] = np.nonzero(same)[0]
    return prev


def acf_first_stage(sample: pd.DataFrame, spec: TranslogSpec, config: AcfConfig):
    y, l, k, m = _inputs(sample, spec)
    controls = [sample[c].to_numpy(float) for c in config.first_stage_controls if c in sample]
    X = np.column_stack([np.ones(len(y)), polynomial_features([l, k, m, *controls], config.first_stage_degree)])
    if spec.include_time_dummies:
        X = np.column_stack([X, _year_dummies(sample["year"].to_numpy())[0]])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    phi = X @ coef
    return phi, y - phi, X


class AcfObjective:
    """GMM criterion of the second stage as a function of the technology coefficients."""

    def __init__(self, phi, terms_now, terms_lag, phi_lag, instruments, lom_degree):
        self.phi = phi
        self.phi_lag = phi_lag
        self.X = terms_now
        self.X_lag = terms_lag
        self.Z = instruments
        self.degree = lom_degree
        n = len(phi)
        self.W = np.linalg.pinv(instruments.T @ instruments / n)
        self.n = n

    def innovations(self, beta: np.ndarray) -> np.ndarray:
        omega = self.phi - self.X @ beta
        omega_lag = self.phi_lag - self.X_lag @ beta
        c = omega_lag - omega_lag.mean()
        H = np.column_stack([c ** p for p in range(self.degree + 1)])
        rho = np.linalg.solve(H.T @ H, H.T @ omega)
        return omega - H @ rho

    def __call__(self, beta: np.ndarray) -> float:
        xi = self.innovations(np.asarray(beta, dtype=float))
        g = self.Z.T @ xi / self.n
        return float(g @ self.W @ g)


def acf_instruments(l, k, m_lag, degree: int) -> np.ndarray:
    base = [k, l, m_lag]
    cols = list(base)
    if degree >= 2:
        for i, j in combinations_with_replacement(range(3), 2):
            cols.append(base[i] * base[j])
    return np.column_stack(cols)


def acf_estimate(panel, industry, spec: TranslogSpec = TranslogSpec(), config: AcfConfig = AcfConfig()) -> ElasticitySet:
    """Two-stage proxy estimator for one industry."""
    columns = as_frame(panel).columns
    extra = [c for c in dict.fromkeys(config.first_stage_controls + config.extra_instruments) if c in columns]
    sample = _industry_sample(panel, industry, spec, extra)
    if len(sample) < config.min_obs:
        raise PreconditionError(f"industry {industry}: {len(sample)} observations, need {config.min_obs}")
    prev = lag_index(sample["firm_id"].to_numpy(), sample["year"].to_numpy())
    has_lag = prev >= 0
    n_pairs = int(has_lag.sum())
    if n_pairs < len(spec.terms) + config.law_of_motion_degree + 2:
        raise PreconditionError(
            f"industry {industry}: {n_pairs} firm-year pairs with a previous-year observation; "
            "consecutive years are needed for the productivity law of motion"
        )
    y, l, k, m = _inputs(sample, spec)
    phi, eps, _ = acf_first_stage(sample, spec, config)

    T = translog_terms(l, k, m, spec.terms)
    now, lag = np.nonzero(has_lag)[0], prev[has_lag]
    Z = acf_instruments(l[now], k[now], m[lag], config.instrument_degree)
    shifters = [sample[c].to_numpy(float)[now] for c in config.extra_instruments if c in sample]
    if shifters:
        Z = np.column_stack([Z, *shifters])
    objective = AcfObjective(phi[now], T[now], T[lag], phi[lag], Z, config.law_of_motion_degree)

    start = ols_translog(panel, industry, spec, min_obs=config.min_obs)
    b0 = np.array([start.beta[t] for t in spec.terms])
    rng = np.random.default_rng([config.seed, _industry_key(industry)])
    starts = [b0] + [b0 + rng.normal(0.0, config.restart_scale, b0.shape) for _ in range(config.restarts)]

    runs = []
    for x0 in starts:
        res = minimize(
            objective, x0, method="Nelder-Mead",
            options={"xatol": config.tolerance, "fatol": config.tolerance * 1e-4,
                     "maxiter": config.max_iterations, "maxfev": 2 * config.max_iterations,
                     "adaptive": len(b0) > 3},
        )
        runs.append(res)
    best = min(runs, key=lambda r: r.fun)
    if not any(r.success for r in runs):
        raise ConvergenceError(
            f"industry {industry}: simplex search did not converge after {len(runs)} starts "
            f"(best objective {best.fun:.3e})",
            best_objective=float(best.fun), trace=[float(r.fun) for r in runs],
        )
    beta = {t: float(v) for t, v in zip(spec.terms, best.x)}
    diagnostics = {
        "n_obs": len(y), "n_pairs": n_pairs, "objective": float(best.fun),
        "objective_at_start": objective(b0), "status": best.message,
        "run_objectives": [float(r.fun) for r in runs],
    }
    return _assemble(industry, "acf", spec, beta, sample, l, k, m, phi, eps, diagnostics)


def _industry_key(industry) -> int:
    digits = "".join(ch for ch in str(industry) if ch.isdigit())
    return int(digits) if digits else sum(map(ord, str(industry)))


def estimate_industries(panel, method: str = "acf", spec: TranslogSpec = TranslogSpec(),
                        config: AcfConfig = AcfConfig(), threads: int = 1,
                        industries: Optional[Sequence] = None) -> dict:
    """Estimate every industry; results are independent of ``threads``."""
    frame = as_frame(panel)
    inds = sorted(frame["industry"].unique()) if industries is None else list(industries)
    if method == "acf":
        fit = lambda ind: acf_estimate(frame, ind, spec, config)
    elif method == "ols":
        fit = lambda ind: ols_translog(frame, ind, spec, config.min_obs)
    else:
        raise ValueError(f"unknown production function method {method!r}")
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(fit, inds))
    else:
        results = [fit(ind) for ind in inds]
    return dict(zip(inds, results))


def bootstrap_std_errors(panel, industry, fit: Callable, reps: int = 99, seed: int = 0) -> dict[str, float]:
    """Firm-cluster bootstrap standard errors of the technology coefficients.

    ``fit`` maps a frame to an ``ElasticitySet``. Resampled firms get fresh
    identifiers so duplicated firms keep separate time series.
    """
    frame = as_frame(panel)
    sub = frame[frame["industry"] == industry]
    firms = sub["firm_id"].unique()
    groups = {f: g for f, g in sub.groupby("firm_id", sort=False)}
    rng = np.random.default_rng([seed, _industry_key(industry)])
    draws = []
    for r in range(reps):
        picks = rng.choice(len(firms), size=len(firms), replace=True)
        parts = []
        for j, idx in enumerate(picks):
            g = groups[firms[idx]].copy()
            g["firm_id"] = f"b{j}"
            parts.append(g)
        res = fit(pd.concat(parts, ignore_index=True))
        draws.append([res.beta[t] for t in res.spec.terms])
    draws = np.asarray(draws)
    return dict(zip(res.spec.terms, draws.std(axis=0, ddof=1)))


def attach_tfp(panel, elasticities: Mapping) -> pd.DataFrame:
    """Panel rows with the estimated log productivity as a ``tfp`` column."""
    frame = as_frame(panel)
    est = pd.concat([es.to_frame()[["firm_id", "year", "omega_hat"]] for es in elasticities.values()],
                    ignore_index=True).rename(columns={"omega_hat": "tfp"})
    return frame.drop(columns=["tfp"], errors="ignore").merge(est, on=["firm_id", "year"], how="left",
                                                              validate="one_to_one")
