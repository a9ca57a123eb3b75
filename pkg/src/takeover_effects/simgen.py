"""Synthetic firm panels with known ground truth.

Two generators share the ``SimTruth`` container:

``generate``
    A structural panel. Productivity follows an AR(1); capital is set one
    period ahead through lagged investment; labor is chosen one period ahead
    with an idiosyncratic wage shock; materials are chosen after productivity
    is observed, from the first-order condition of a firm charging a markup
    over marginal cost. The expenditure share of materials therefore equals
    elasticity over markup for every observation before measurement noise.
    A firm-specific materials price (recorded in ``materials_price``) shifts
    materials demand without entering production.

``generate_did``
    A reduced-form panel with time-invariant covariates, a log outcome with
    firm and year effects plus covariate-specific trends, and logistic
    selection into cohorts. Switches make either the selection model or the
    outcome trend nonlinear in a covariate, for double-robustness checks.

Treatment effects shift the log of the outcome by ``effect + slope * (t - g)``
from year ``g`` on. In the structural panel the shift acts on the output
price, so log sales and log markup both move by exactly that amount while
input choices stay put.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from .errors import ConfigError
from .panel import NEVER_TREATED, Panel, QualityReport, apply_deflators, derive_variables, write_frame
from .prodfn import output_elasticity

DEFAULT_BETA = {"l": 0.25, "k": 0.10, "m": 0.65}
NACE_MANUFACTURING = tuple(str(c) for c in range(10, 34))


@dataclass(frozen=True)
class SimConfig:
    industries: tuple[str, ...] = ("10", "25")
    n_firms: int = 200
    countries: tuple[str, ...] = ("DE", "FR", "IT", "ES")
    years: tuple[int, int] = (2007, 2021)
    beta: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    output_constant: float = 1.0
    rho: float = 0.8
    sigma_xi: float = 0.1
    sigma_eps: float = 0.05
    markup: str = "constant"
    mu: float = 1.3
    mu_sigma: float = 0.2
    rho_price: float = 0.7
    sigma_price: float = 0.3
    depreciation: float = 0.1
    investment_response: float = 1.0
    sigma_investment: float = 0.3
    labor_response: float = 0.5
    labor_capital: float = 0.3
    sigma_labor: float = 0.2
    wage: float = 35.0
    cohorts: tuple[int, ...] = (2011, 2014, 2017)
    treated_shares: tuple[float, ...] = (0.05, 0.05, 0.05)
    selection: Mapping[str, float] = field(
        default_factory=lambda: {"log_size": 0.5, "log_capital_intensity": 0.0, "tfp": 0.0})
    effect: float = 0.0
    effect_slope: float = 0.0
    horizontal_share: float = 0.25
    foreign_share: float = 0.3
    deflator_drift: float = 0.02
    deflator_sigma: float = 0.02
    burn_in: int = 30
    seed: int = 0

    def validate(self) -> None:
        if not 0 <= self.rho < 1:
            raise ConfigError("rho must lie in [0, 1)")
        for name in ("sigma_xi", "sigma_eps", "sigma_price", "sigma_investment", "sigma_labor"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.markup not in ("constant", "lognormal"):
            raise ConfigError(f"unknown markup rule {self.markup!r}")
        _check_cohorts(self.cohorts, self.treated_shares, self.years)
        for ind in self.beta:
            if ind not in self.industries:
                raise ConfigError(f"beta given for unknown industry {ind!r}")

    def beta_for(self, industry) -> dict[str, float]:
        return dict(self.beta.get(industry, DEFAULT_BETA))

    def delta(self, g, t) -> float:
        return self.effect + self.effect_slope * (t - g) if t >= g else 0.0


@dataclass(frozen=True)
class DidSimConfig:
    n_firms: int = 200
    years: tuple[int, int] = (2001, 2006)
    cohorts: tuple[int, ...] = (2003, 2005)
    treated_shares: tuple[float, ...] = (0.2, 0.2)
    selection: Mapping[str, float] = field(default_factory=lambda: {"x1": 0.5, "x2": 0.3})
    selection_x1_squared: float = 0.0
    trend: Mapping[str, float] = field(default_factory=lambda: {"x1": 0.1, "x2": 0.05})
    trend_x1_squared: float = 0.0
    sigma_firm: float = 1.0
    sigma_noise: float = 0.1
    effect: float = 0.0
    effect_slope: float = 0.0
    selection_model: str = "sequential"
    industries: tuple[str, ...] = ("10", "20", "30")
    countries: tuple[str, ...] = ("DE", "FR")
    seed: int = 0

    def validate(self) -> None:
        if self.sigma_noise <= 0 or self.sigma_firm < 0:
            raise ConfigError("noise scales must be positive")
        if self.selection_model not in ("sequential", "multinomial"):
            raise ConfigError(f"unknown selection model {self.selection_model!r}")
        _check_cohorts(self.cohorts, self.treated_shares, self.years)

    def delta(self, g, t) -> float:
        return self.effect + self.effect_slope * (t - g) if t >= g else 0.0


@dataclass
class SimTruth:
    """Ground truth behind a generated panel; only tests and reports read it."""

    config: object
    beta: dict = field(default_factory=dict)
    firm_year: pd.DataFrame = field(default_factory=pd.DataFrame)
    delta: dict = field(default_factory=dict)
    pscore: dict = field(default_factory=dict)
    outcome: str = "log_sales"
    inputs: dict = field(default_factory=dict)

    def elasticity_set(self, panel: Panel, industry):
        """An ``ElasticitySet`` holding the true coefficients and noise draws.

        The returned set is aligned with the rows of ``panel`` for the
        industry; ``epsilon_hat`` carries the true measurement error.
        """
        from .prodfn import ElasticitySet, TranslogSpec

        frame = panel.frame
        rows = frame.loc[frame["industry"] == industry, ["firm_id", "year"]]
        tf = rows.merge(self.firm_year, on=["firm_id", "year"], how="left")
        spec = TranslogSpec(form="translog" if len(self.beta[industry]) > 3 else "cobb_douglas")
        nan = np.full(len(tf), np.nan)
        return ElasticitySet(
            industry=industry, method="truth", spec=spec, beta=dict(self.beta[industry]),
            index=tf[["firm_id", "year"]].reset_index(drop=True),
            theta_m=tf["theta_m"].to_numpy(), theta_l=tf["theta_l"].to_numpy(),
            theta_k=tf["theta_k"].to_numpy(), phi_hat=nan, epsilon_hat=tf["epsilon"].to_numpy(),
            omega_hat=tf["omega"].to_numpy(),
        )


def _check_cohorts(cohorts, shares, years):
    if len(cohorts) != len(shares) or not cohorts:
        raise ConfigError("need one treated share per cohort and at least one cohort")
    if any(not 0 < s < 1 for s in shares):
        raise ConfigError("treated shares must lie in (0, 1)")
    if sum(shares) >= 1:
        raise ConfigError("treated shares sum to >= 1, leaving no never-treated controls")
    if any(not years[0] < g <= years[1] for g in cohorts):
        raise ConfigError("every cohort year needs a pre-treatment year inside the sample window")
    if list(cohorts) != sorted(set(cohorts)):
        raise ConfigError("cohort years must be distinct and increasing")


def _logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


def assign_cohorts(covariates: Mapping[int, pd.DataFrame], slopes: Mapping[str, float],
                   cohorts, shares, n_total: int, rng: np.random.Generator,
                   squared: Optional[Mapping[str, float]] = None):
    """Sequential logistic selection.

    For each cohort ``g`` in turn, every firm still in the pool is selected
    with probability ``logistic(a_g + x'slopes)``, where ``x`` are its
    covariates from ``covariates[g]`` (rows indexed by firm position). The
    intercept ``a_g`` is solved so the expected cohort size equals
    ``share * n_total``.
    """
    squared = squared or {}
    cohort = np.full(n_total, NEVER_TREATED)
    coefficients = {}
    for g, share in zip(cohorts, shares):
        pool = np.nonzero(np.isinf(cohort))[0]
        X = covariates[g].iloc[pool]
        index = np.zeros(len(pool))
        for name, s in slopes.items():
            if s:
                index += s * X[name].to_numpy(float)
        for name, s in squared.items():
            if s:
                index += s * X[name].to_numpy(float) ** 2
        target = share * n_total / len(pool)
        if target >= 1:
            raise ConfigError(f"cohort {g}: treated share exhausts the remaining pool")
        a = brentq(lambda c: _logistic(c + index).mean() - target, -50.0, 50.0, xtol=1e-12)
        u = rng.random(len(pool))
        chosen = pool[u < _logistic(a + index)]
        cohort[chosen] = g
        coefficients[g] = {"const": a, **{k: v for k, v in slopes.items()},
                           **{f"{k}_sq": v for k, v in squared.items() if v}}
    return cohort, coefficients


def assign_cohorts_multinomial(covariates: Mapping[int, pd.DataFrame], slopes: Mapping[str, float],
                               cohorts, shares, n_total: int, rng: np.random.Generator,
                               squared: Optional[Mapping[str, float]] = None):
    """Multinomial logit over {never, g1, g2, ...} with never-treated as the base.

    Each cohort against the never-treated alone then has an exactly logistic
    propensity ``logistic(a_g + x'slopes)``. Intercepts are calibrated so
    expected cohort sizes equal ``share * n_total``.
    """
    squared = squared or {}
    index = []
    for g in cohorts:
        X = covariates[g]
        z = np.zeros(n_total)
        for name, s in slopes.items():
            z += s * X[name].to_numpy(float)
        for name, s in squared.items():
            z += s * X[name].to_numpy(float) ** 2
        index.append(z)
    index = np.array(index)
    a = np.log(np.asarray(shares) / (1 - sum(shares)))
    for _ in range(500):
        expz = np.exp(a[:, None] + index)
        prob = expz / (1 + expz.sum(axis=0))
        step = np.log(np.asarray(shares) / prob.mean(axis=1))
        a = a + step
        if np.max(np.abs(step)) < 1e-12:
            break
    expz = np.exp(a[:, None] + index)
    cum = np.cumsum(expz / (1 + expz.sum(axis=0)), axis=0)
    u = rng.random(n_total)
    pick = (u[None, :] >= cum).sum(axis=0)
    cohort = np.array([cohorts[k] if k < len(cohorts) else NEVER_TREATED for k in pick], dtype=float)
    coefficients = {g: {"const": float(a[k]), **dict(slopes), **{f"{k2}_sq": v for k2, v in squared.items() if v}}
                    for k, g in enumerate(cohorts)}
    return cohort, coefficients


def _materials_choice(beta, const, l, k, omega, price, mu):
    """Log materials solving elasticity(m) / mu = exp(price + m - q(m))."""
    b = {t: beta.get(t, 0.0) for t in ("l", "k", "m", "ll", "kk", "mm", "lk", "lm", "km")}
    m = (np.log(b["m"] / mu) - price + const + b["l"] * l + b["k"] * k + omega) / (1 - b["m"])
    if not any(np.any(b[t]) for t in ("ll", "kk", "mm", "lk", "lm", "km")):
        return m
    for _ in range(100):
        theta = output_elasticity(b, l, k, m)["m"]
        q = const + b["l"] * l + b["k"] * k + b["m"] * m + b["ll"] * l * l + b["kk"] * k * k \
            + b["mm"] * m * m + b["lk"] * l * k + b["lm"] * l * m + b["km"] * k * m + omega
        resid = np.log(theta) - np.log(mu) - price - m + q
        slope = 2 * b["mm"] / theta - 1 + theta
        step = resid / slope
        m = m - step
        if np.max(np.abs(step)) < 1e-13:
            break
    return m


def _output(beta, const, l, k, m, omega):
    b = {t: beta.get(t, 0.0) for t in ("l", "k", "m", "ll", "kk", "mm", "lk", "lm", "km")}
    return (const + b["l"] * l + b["k"] * k + b["m"] * m + b["ll"] * l * l + b["kk"] * k * k
            + b["mm"] * m * m + b["lk"] * l * k + b["lm"] * l * m + b["km"] * k * m + omega)


def generate(config: SimConfig = SimConfig()) -> tuple[Panel, SimTruth]:
    """Simulate a structural firm panel (nominal values) with its truth."""
    config.validate()
    c = config
    y0, y1 = c.years
    years = np.arange(y0, y1 + 1)
    T, B = len(years), c.burn_in
    n = c.n_firms * len(c.industries)
    industry = np.repeat(np.array(c.industries, dtype=object), c.n_firms)

    # per-firm streams keep draws independent of how firms are batched
    shocks = np.empty((6, n, B + T))
    fixed = np.empty((n, 6))
    for i in range(n):
        rng = np.random.default_rng([c.seed, 1, i])
        shocks[:, i, :] = rng.standard_normal((6, B + T))
        fixed[i] = rng.standard_normal(6)
    xi, nu, eta, zeta, eps_draw, _ = shocks
    eps = c.sigma_eps * eps_draw[:, B:]

    kappa = 6.0 + 0.8 * fixed[:, 0]
    lam = 7.0 + 0.6 * fixed[:, 1] + 0.3 * (kappa - 6.0)
    if c.markup == "constant":
        mu_firm = np.full(n, c.mu)
    else:
        mu_firm = np.exp(np.log(c.mu) + c.mu_sigma * fixed[:, 2])

    rng_meta = np.random.default_rng([c.seed, 2])
    country = rng_meta.choice(np.array(c.countries, dtype=object), size=n)
    incorporation = y0 - rng_meta.integers(1, 41, size=n)
    liquidity_firm = rng_meta.normal(0.0, 0.3, size=n)
    solvency_firm = rng_meta.normal(0.35, 0.1, size=n)

    betas = {ind: c.beta_for(ind) for ind in c.industries}
    bcols = {t: np.array([betas[ind].get(t, 0.0) for ind in industry])
             for t in ("l", "k", "m", "ll", "kk", "mm", "lk", "lm", "km")}

    omega = np.empty((n, B + T)); price = np.empty_like(omega)
    k = np.empty_like(omega); l = np.empty_like(omega); m = np.empty_like(omega)
    sd_omega = c.sigma_xi / np.sqrt(1 - c.rho ** 2)
    sd_price = c.sigma_price / np.sqrt(1 - c.rho_price ** 2)
    w_prev, p_prev = sd_omega * xi[:, 0], sd_price * nu[:, 0]
    K_prev, inv_prev = np.exp(kappa), c.depreciation * np.exp(kappa)
    for t in range(B + T):
        w = c.rho * w_prev + c.sigma_xi * xi[:, t] if t else w_prev
        p = c.rho_price * p_prev + c.sigma_price * nu[:, t] if t else p_prev
        K = (1 - c.depreciation) * K_prev + inv_prev if t else K_prev
        kt = np.log(K)
        lt = lam + c.labor_response * c.rho * w_prev + c.labor_capital * (kt - kappa) + c.sigma_labor * zeta[:, t]
        mt = _materials_choice(bcols, c.output_constant, lt, kt, w, p, mu_firm)
        omega[:, t], price[:, t], k[:, t], l[:, t], m[:, t] = w, p, kt, lt, mt
        inv_prev = c.depreciation * np.exp(kappa) * np.exp(
            c.investment_response * w + c.sigma_investment * eta[:, t]
            - 0.5 * c.sigma_investment ** 2)
        w_prev, p_prev, K_prev = w, p, K
    sl = slice(B, B + T)
    omega, price, k, l, m = omega[:, sl], price[:, sl], k[:, sl], l[:, sl], m[:, sl]
    q = _output({t: v[:, None] for t, v in bcols.items()}, c.output_constant, l, k, m, omega)
    theta = output_elasticity({t: v[:, None] for t, v in bcols.items()}, l, k, m)
    employees = np.maximum(1.0, np.round(np.exp(l) / c.wage))

    # treatment assignment uses covariates observed in the year before each cohort
    firm_ids = np.array([f"F{i:06d}" for i in range(n)], dtype=object)
    covs = {}
    for g in c.cohorts:
        j = g - 1 - y0
        covs[g] = pd.DataFrame({
            "log_size": np.log(employees[:, j]),
            "log_capital_intensity": k[:, j] - np.log(employees[:, j]),
            "tfp": omega[:, j],
        })
    cohort, pcoef = assign_cohorts(covs, c.selection, c.cohorts, c.treated_shares, n,
                                   np.random.default_rng([c.seed, 3]))

    grid_years = np.broadcast_to(years, (n, T))
    delta = np.zeros((n, T))
    for g in c.cohorts:
        rows = cohort == g
        delta[rows] = [c.delta(g, t) for t in years]
    mu = mu_firm[:, None] * np.exp(delta)
    # treated firms price at the shifted markup: materials respond, so the FOC holds with mu
    for j in np.nonzero(delta.any(axis=0))[0]:
        m[:, j] = _materials_choice(bcols, c.output_constant, l[:, j], k[:, j], omega[:, j], price[:, j], mu[:, j])
    q = _output({t: v[:, None] for t, v in bcols.items()}, c.output_constant, l, k, m, omega)
    theta = output_elasticity({t: v[:, None] for t, v in bcols.items()}, l, k, m)

    rng_defl = np.random.default_rng([c.seed, 4])
    defl = {}
    for ctry in c.countries:
        for ind in c.industries:
            noise = rng_defl.normal(0.0, c.deflator_sigma, size=T)
            noise[0] = 0.0
            defl[(ctry, ind)] = np.exp(c.deflator_drift * (years - y0) + noise)
    D = np.vstack([defl[(ctry, ind)] for ctry, ind in zip(country, industry)])

    sales = D * np.exp(q + eps)
    materials = D * np.exp(price + m)
    labor_cost = D * np.exp(l)
    fixed_assets = D * np.exp(k)
    liquidity = np.exp(liquidity_firm[:, None] + 0.1 * eta[:, sl])
    solvency = solvency_firm[:, None] + 0.02 * zeta[:, sl]

    flat = lambda a: np.asarray(a).reshape(-1)
    rep = lambda a: np.repeat(a, T)
    frame = pd.DataFrame({
        "firm_id": rep(firm_ids), "year": flat(grid_years).astype(int),
        "country": rep(country), "industry": rep(industry),
        "sales": flat(sales), "materials_cost": flat(materials), "labor_cost": flat(labor_cost),
        "employees": flat(employees), "fixed_assets": flat(fixed_assets),
        "value_added": flat(sales - materials), "incorporation_year": rep(incorporation).astype(int),
        "liquidity_ratio": flat(liquidity), "solvency_ratio": flat(solvency),
        "roi": flat((sales - materials - labor_cost) / fixed_assets),
        "materials_price": flat(np.exp(price)),
    })
    firm_year = pd.DataFrame({
        "firm_id": frame["firm_id"], "year": frame["year"], "industry": frame["industry"],
        "mu": flat(mu), "theta_m": flat(theta["m"]), "theta_l": flat(theta["l"]),
        "theta_k": flat(theta["k"]), "omega": flat(omega), "epsilon": flat(eps),
        "delta": flat(delta), "cohort": rep(cohort),
    })

    treatments = _deal_table(firm_ids, cohort, industry, country, c, np.random.default_rng([c.seed, 5]))
    frame = frame.merge(treatments, on="firm_id", how="left")
    frame["cohort"] = frame["cohort"].astype(float).fillna(NEVER_TREATED)
    deflators = pd.DataFrame(
        [(ctry, ind, int(y), float(v)) for (ctry, ind), arr in defl.items() for y, v in zip(years, arr)],
        columns=["country", "industry", "year", "deflator"],
    )
    truth = SimTruth(
        config=c, beta=betas, firm_year=firm_year,
        delta={(g, int(t)): c.delta(g, t) for g in c.cohorts for t in years},
        pscore=pcoef, outcome="log_mu",
        inputs={"deflators": deflators, "treatments": treatments,
                "io_table": random_io_table(NACE_MANUFACTURING, np.random.default_rng([c.seed, 6]))},
    )
    report = QualityReport(rows_read=len(frame))
    return Panel(frame, report), truth


def _deal_table(firm_ids, cohort, industry, country, c: SimConfig, rng) -> pd.DataFrame:
    treated = np.nonzero(np.isfinite(cohort))[0]
    rows = []
    for j, i in enumerate(treated):
        if rng.random() < c.horizontal_share:
            acq_ind = industry[i]
        else:
            acq_ind = rng.choice([x for x in NACE_MANUFACTURING if x != industry[i]])
        if rng.random() < c.foreign_share:
            acq_ctry = rng.choice([x for x in ("DE", "FR", "IT", "ES", "NL", "GB", "US") if x != country[i]])
        else:
            acq_ctry = country[i]
        perimeter = int(np.ceil(np.exp(rng.normal(2.0, 1.5))))
        rows.append((firm_ids[i], int(cohort[i]), f"A{j:05d}", acq_ind, acq_ctry, perimeter))
    return pd.DataFrame(rows, columns=["firm_id", "cohort", "acquirer_id", "acquirer_industry",
                                       "acquirer_country", "acquirer_perimeter"])


def random_io_table(codes: Sequence[str], rng: np.random.Generator, density: float = 0.6) -> pd.DataFrame:
    """Random technical-coefficient table with column sums below one."""
    codes = list(codes)
    A = rng.lognormal(-3.0, 1.2, size=(len(codes), len(codes)))
    A *= rng.random(A.shape) < density
    A /= np.maximum(1.0, A.sum(axis=0) / 0.7)
    return pd.DataFrame([
        (codes[i], codes[j], float(A[i, j])) for i in range(len(codes)) for j in range(len(codes))
    ], columns=["input_code", "output_code", "coefficient"])


def estimation_panel(panel: Panel, truth: SimTruth) -> Panel:
    """Deflate and derive a generated panel, ready for the estimators."""
    return derive_variables(apply_deflators(panel, truth.inputs["deflators"]))


def generate_did(config: DidSimConfig = DidSimConfig()) -> tuple[Panel, SimTruth]:
    config.validate()
    c = config
    rng = np.random.default_rng([c.seed, 11])
    years = np.arange(c.years[0], c.years[1] + 1)
    n, T = c.n_firms, len(years)
    x1 = rng.standard_normal(n)
    x2 = (rng.random(n) < 0.5).astype(float)
    firm_effect = c.sigma_firm * rng.standard_normal(n) + 0.5 * x1
    year_effect = np.cumsum(rng.normal(0.0, 0.1, T))
    industry = rng.choice(np.array(c.industries, dtype=object), size=n)
    country = rng.choice(np.array(c.countries, dtype=object), size=n)
    noise = c.sigma_noise * rng.standard_normal((n, T))

    covs = pd.DataFrame({"x1": x1, "x2": x2})
    assign = assign_cohorts if c.selection_model == "sequential" else assign_cohorts_multinomial
    cohort, pcoef = assign(
        {g: covs for g in c.cohorts}, c.selection, c.cohorts, c.treated_shares, n,
        np.random.default_rng([c.seed, 12]), squared={"x1": c.selection_x1_squared},
    )
    loading = sum(v * covs[k].to_numpy() for k, v in c.trend.items()) + c.trend_x1_squared * x1 ** 2
    elapsed = years - years[0]
    y0 = firm_effect[:, None] + year_effect[None, :] + loading[:, None] * elapsed[None, :] + noise
    delta = np.zeros((n, T))
    for g in c.cohorts:
        delta[cohort == g] = [c.delta(g, t) for t in years]
    frame = pd.DataFrame({
        "firm_id": np.repeat([f"D{i:05d}" for i in range(n)], T),
        "year": np.tile(years, n).astype(int),
        "country": np.repeat(country, T), "industry": np.repeat(industry, T),
        "cohort": np.repeat(cohort, T),
        "x1": np.repeat(x1, T), "x2": np.repeat(x2, T),
        "y": (y0 + delta).reshape(-1),
    })
    truth = SimTruth(
        config=c,
        firm_year=pd.DataFrame({"firm_id": frame["firm_id"], "year": frame["year"],
                                "delta": delta.reshape(-1), "y0": y0.reshape(-1)}),
        delta={(g, int(t)): c.delta(g, t) for g in c.cohorts for t in years},
        pscore=pcoef, outcome="y",
    )
    return Panel(frame, QualityReport(rows_read=len(frame))), truth


def true_overall_effect(truth: SimTruth, panel: Panel) -> float:
    """Cohort-share weighted mean of the true post-period effects."""
    frame = panel.frame
    last = int(frame["year"].max())
    firms = frame.drop_duplicates("firm_id")
    sizes = firms.loc[np.isfinite(firms["cohort"]), "cohort"].value_counts()
    total = 0.0
    for g, size in sizes.items():
        g = int(g)
        path = [truth.delta[(g, t)] for t in range(g, last + 1)]
        total += size / sizes.sum() * float(np.mean(path))
    return total


def write_simulation(panel: Panel, truth: SimTruth, outdir, manifest: Optional[str] = None) -> dict[str, Path]:
    """Emit firms.csv, treatments.csv, deflators.csv, io_table.csv and truth.csv."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    f = panel.frame
    firms = pd.DataFrame({
        "firm_id": f["firm_id"], "year": f["year"], "country": f["country"], "nace2": f["industry"],
        "sales": f["sales"], "materials": f["materials_cost"], "labor_cost": f["labor_cost"],
        "employees": f["employees"].astype(int), "fixed_assets": f["fixed_assets"],
        "value_added": f["value_added"], "incorporation_year": f["incorporation_year"],
        "liquidity": f["liquidity_ratio"], "solvency": f["solvency_ratio"], "roi": f["roi"],
        "materials_price": f["materials_price"],
    })
    t = truth.inputs["treatments"]
    treatments = pd.DataFrame({
        "firm_id": t["firm_id"], "cohort_year": t["cohort"], "acquirer_id": t["acquirer_id"],
        "acquirer_nace2": t["acquirer_industry"], "acquirer_country": t["acquirer_country"],
        "acquirer_perimeter": t["acquirer_perimeter"],
    })
    deflators = truth.inputs["deflators"].rename(columns={"industry": "nace2"})
    paths = {
        "firms": out / "firms.csv", "treatments": out / "treatments.csv",
        "deflators": out / "deflators.csv", "io_table": out / "io_table.csv",
        "truth": out / "truth.csv",
    }
    write_frame(firms, paths["firms"])
    write_frame(treatments, paths["treatments"])
    write_frame(deflators, paths["deflators"])
    write_frame(truth.inputs["io_table"], paths["io_table"])
    write_frame(truth.firm_year, paths["truth"], manifest)
    return paths


# --- independent oracle -----------------------------------------------------

def _solve(A, b):
    """Gauss-Jordan elimination with partial pivoting on nested lists."""
    n = len(A)
    M = [list(A[i]) + [b[i]] for i in range(n)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(M[r][col]))
        M[col], M[piv] = M[piv], M[col]
        p = M[col][col]
        for j in range(col, n + 1):
            M[col][j] /= p
        for r in range(n):
            if r != col and M[r][col] != 0.0:
                fac = M[r][col]
                for j in range(col, n + 1):
                    M[r][j] -= fac * M[col][j]
    return [M[i][n] for i in range(n)]


def _naive_logit(X, d, max_iter=100):
    kx = len(X[0])
    b = [0.0] * kx
    for _ in range(max_iter):
        grad = [0.0] * kx
        hess = [[0.0] * kx for _ in range(kx)]
        for xi, di in zip(X, d):
            z = sum(bj * xj for bj, xj in zip(b, xi))
            p = 1.0 / (1.0 + np.exp(-z))
            for a in range(kx):
                grad[a] += (di - p) * xi[a]
                for c in range(kx):
                    hess[a][c] += p * (1 - p) * xi[a] * xi[c]
        step = _solve(hess, grad)
        b = [bj + sj for bj, sj in zip(b, step)]
        if max(abs(s) for s in step) < 1e-13:
            break
    return b


def _naive_ols(X, y):
    kx = len(X[0])
    XtX = [[sum(x[a] * x[c] for x in X) for c in range(kx)] for a in range(kx)]
    Xty = [sum(x[a] * yi for x, yi in zip(X, y)) for a in range(kx)]
    return _solve(XtX, Xty)


def brute_force_att(panel, g, t, *, outcome: Optional[str] = None, covariates: Sequence[str] = (),
                    control_rule: str = "never_plus_not_yet", anticipation: int = 0,
                    overlap_ceiling: float = 0.999, truth: Optional[SimTruth] = None) -> Optional[float]:
    """Slow, loop-based evaluation of the doubly robust cohort-time estimand.

    Returns ``None`` for an infeasible cell. Shares no code with the
    estimator it checks.
    """
    frame = panel.frame if isinstance(panel, Panel) else panel
    outcome = outcome or (truth.outcome if truth is not None else "y")
    base = g - 1 - anticipation
    values = {}
    for row in frame.itertuples(index=False):
        rec = row._asdict()
        values[(rec["firm_id"], int(rec["year"]))] = rec
    firms = sorted({fid for fid, _ in values})
    dy, X, D = [], [], []
    for fid in firms:
        now, before = values.get((fid, t)), values.get((fid, base))
        if now is None or before is None:
            continue
        ch = before["cohort"]
        treated = ch == g
        if control_rule == "never_treated_only":
            control = ch == np.inf
        else:
            control = ch != g and ch > max(t, base) + anticipation
        if not (treated or control):
            continue
        dy.append(now[outcome] - before[outcome])
        X.append([1.0] + [float(before[c]) for c in covariates])
        D.append(1.0 if treated else 0.0)
    if sum(D) < 1 or len(D) - sum(D) < 1:
        return None
    b = _naive_logit(X, D)
    p = [1.0 / (1.0 + np.exp(-sum(bj * xj for bj, xj in zip(b, x)))) for x in X]
    keep = [not (d == 0.0 and pi >= overlap_ceiling) for d, pi in zip(D, p)]
    X = [x for x, k in zip(X, keep) if k]
    dy = [v for v, k in zip(dy, keep) if k]
    D = [v for v, k in zip(D, keep) if k]
    p = [v for v, k in zip(p, keep) if k]
    if len(D) - sum(D) < 1:
        return None
    Xc = [x for x, d in zip(X, D) if d == 0.0]
    yc = [v for v, d in zip(dy, D) if d == 0.0]
    gam = _naive_ols(Xc, yc)
    n = len(D)
    odds = [pi * (1 - d) / (1 - pi) for pi, d in zip(p, D)]
    mean_d = sum(D) / n
    mean_odds = sum(odds) / n
    total = 0.0
    for x, yv, d, o in zip(X, dy, D, odds):
        pred = sum(gj * xj for gj, xj in zip(gam, x))
        total += (d / mean_d - o / mean_odds) * (yv - pred)
    return total / n
