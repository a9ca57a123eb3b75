"""Run configuration and the staged batch pipeline."""

from __future__ import annotations

import configparser
import hashlib
import logging
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from . import __version__, markup, prodfn, psm, simgen, vertical
from .did import (CohortDesign, aggregate_overall, att_gt_all, bootstrap_se, event_study, write_att_gt,
                  write_event_study, write_pretrend)
from .did.attgt import AttGtCollection
from .errors import ConfigError, DataError, PreconditionError, TakeoverEffectsError
from .panel import (Panel, apply_deflators, attach_treatments, derive_variables, load_deflators, load_panel,
                    load_treatments, write_frame)

logger = logging.getLogger(__name__)

STAGES = ("simulate", "estimate-prodfn", "markups", "classify", "did", "event-study", "psm-did", "report")
REQUIRES = {
    "markups": ("estimate-prodfn",),
    "did": ("markups",),
    "event-study": ("did",),
    "psm-did": ("markups",),
}

# dashboard key -> panel column
OUTCOMES = {
    "markup": "log_mu",
    "market_share": "log_market_share",
    "sales": "log_sales",
    "variable_cost": "log_variable_cost",
    "variable_cost_ratio": "log_variable_cost_ratio",
    "tfp": "tfp",
    "roi": "roi",
    "capital_intensity": "log_capital_intensity",
    "liquidity": "log_liquidity",
    "solvency": "solvency_ratio",
}


def _split(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.replace(";", ",").split(",") if v.strip())


def _bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


@dataclass
class RunConfig:
    stages: tuple[str, ...] = ("estimate-prodfn", "markups", "did")
    firms: Optional[str] = None
    treatments: Optional[str] = None
    deflators: Optional[str] = None
    io_table: Optional[str] = None
    bridge: Optional[str] = None
    prodfn_method: str = "acf"
    prodfn_form: str = "cobb_douglas"
    flexible_input: str = "materials"
    correct_shares: bool = True
    control_rule: str = "never_plus_not_yet"
    anticipation: int = 0
    covariates: tuple[str, ...] = ("log_size", "log_age", "log_capital_intensity", "tfp")
    categorical: tuple[str, ...] = ("industry",)
    outcomes: tuple[str, ...] = ("markup",)
    event_window: Optional[tuple[int, int]] = None
    threshold_percentile: int = 50
    strategy: str = "all"
    countries: tuple[str, ...] = ()
    tech_class: tuple[str, ...] = ()
    foreign_only: bool = False
    perimeter_bin: tuple[str, ...] = ()
    bootstrap_reps: int = 999
    seed: int = 0
    out: str = "results"
    sim_n_firms: int = 200
    sim_industries: tuple[str, ...] = ("10", "25")
    sim_years: tuple[int, int] = (2007, 2021)
    sim_cohorts: tuple[int, ...] = (2011, 2014, 2017)
    sim_effect: float = 0.0
    sim_effect_slope: float = 0.0
    source: Optional[str] = None
    text: str = ""

    def validate(self, check_files: bool = True) -> None:
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stage(s): {', '.join(unknown)}")
        for i, s in enumerate(self.stages):
            if STAGES.index(s) < max([STAGES.index(p) for p in self.stages[:i]], default=-1):
                raise ConfigError(f"stage {s!r} is out of dependency order")
            for req in REQUIRES.get(s, ()):
                if req not in self.stages[:i]:
                    raise ConfigError(f"stage {s!r} requires {req!r} earlier in the stage list")
        if self.prodfn_method not in ("ols", "acf"):
            raise ConfigError(f"prodfn_method must be ols or acf, not {self.prodfn_method!r}")
        if self.flexible_input not in markup.FLEXIBLE_INPUTS:
            raise ConfigError(f"unknown flexible_input {self.flexible_input!r}")
        if self.threshold_percentile not in vertical.PERCENTILES:
            raise ConfigError("threshold_percentile must be 25, 50 or 75")
        if self.strategy not in ("all", "vertical", "horizontal", "other"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        bad = [o for o in self.outcomes if o not in OUTCOMES]
        if bad:
            raise ConfigError(f"unknown outcome(s): {', '.join(bad)}")
        CohortDesign(control_rule=self.control_rule, anticipation=self.anticipation)
        if check_files:
            self.check_files()

    def needs(self) -> set:
        needs = set()
        data_stages = set(self.stages) - {"simulate", "report"}
        if "simulate" in self.stages or not data_stages:
            return needs
        needs |= {"firms", "deflators"}
        if data_stages & {"did", "event-study", "psm-did", "classify"}:
            needs.add("treatments")
        if "classify" in self.stages or (self.strategy != "all" and "did" in self.stages):
            needs.add("io_table")
        return needs

    def check_files(self) -> None:
        for key in sorted(self.needs()):
            path = getattr(self, key)
            if not path:
                raise ConfigError(f"config key {key!r} is required for the requested stages")
            if not Path(path).exists():
                raise ConfigError(f"{key} file not found: {path}")
        if self.bridge and not Path(self.bridge).exists():
            raise ConfigError(f"bridge file not found: {self.bridge}")

    def digest(self) -> str:
        """Hash of every setting that can change numeric output (not threads or paths of outputs)."""
        items = []
        for f in fields(self):
            if f.name in ("source", "text", "out"):
                continue
            items.append(f"{f.name}={getattr(self, f.name)!r}")
        return hashlib.sha256("\n".join(items).encode()).hexdigest()

    def manifest(self) -> str:
        return f"manifest: config_sha256={self.digest()} seed={self.seed} version={__version__}"


_CASTS = {
    "stages": _split, "covariates": _split, "categorical": _split, "outcomes": _split,
    "countries": _split, "tech_class": _split, "perimeter_bin": _split, "sim_industries": _split,
    "correct_shares": _bool, "foreign_only": _bool,
    "anticipation": int, "threshold_percentile": int, "bootstrap_reps": int, "seed": int,
    "sim_n_firms": int, "sim_effect": float, "sim_effect_slope": float,
    "event_window": lambda v: tuple(int(x) for x in _split(v)) or None,
    "sim_years": lambda v: tuple(int(x) for x in _split(v)),
    "sim_cohorts": lambda v: tuple(int(x) for x in _split(v)),
}


def parse_config(text: str, base_dir: Optional[Path] = None, **overrides) -> RunConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    known = {f.name for f in fields(RunConfig)} - {"source", "text"}
    values = {}
    for key, raw in parser["run"].items():
        key = key.strip().replace("-", "_")
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = _CASTS.get(key, str)(raw.strip())
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    for key, val in overrides.items():
        if val is not None:
            values[key] = val
    for key in ("firms", "treatments", "deflators", "io_table", "bridge"):
        if values.get(key) and base_dir is not None and not Path(values[key]).is_absolute():
            values[key] = str(base_dir / values[key])
    if len(values.get("event_window") or (0, 0)) != 2:
        raise ConfigError("event_window takes two integers: e_min, e_max")
    return RunConfig(**values, text=text)


def load_config(path, **overrides) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config(path.read_text(encoding="utf-8"), path.parent, **overrides)
    cfg.source = str(path)
    return cfg


def _data_table(name: str) -> pd.DataFrame:
    with resources.files("takeover_effects").joinpath("data", name).open("r") as fh:
        return pd.read_csv(fh, dtype=str)


def country_list(spec: tuple[str, ...]) -> set:
    groups = _data_table("country_groups.csv")
    out = set()
    for item in spec:
        members = groups.loc[groups["group"] == item, "country"]
        out |= set(members) if len(members) else {item}
    return out


def tech_industries(classes: tuple[str, ...]) -> set:
    table = _data_table("tech_intensity.csv")
    known = set(table["tech_class"])
    bad = [c for c in classes if c not in known]
    if bad:
        raise ConfigError(f"unknown technology class(es): {bad}; known: {sorted(known)}")
    return set(table.loc[table["tech_class"].isin(classes), "nace2"])


def subsample(frame: pd.DataFrame, cfg: RunConfig, deals: Optional[pd.DataFrame] = None) -> pd.DataFrame:
    """Apply country, technology, strategy, foreign and perimeter filters.

    Every filter removes whole firms, so filters commute. Treated firms whose
    deal fails a deal-level filter are removed rather than recast as controls.
    """
    keep = pd.Series(True, index=frame.index)
    if cfg.countries:
        keep &= frame["country"].isin(country_list(cfg.countries))
    if cfg.tech_class:
        keep &= frame["industry"].map(vertical.two_digit).isin(tech_industries(cfg.tech_class))
    deal_filter = cfg.strategy != "all" or cfg.foreign_only or cfg.perimeter_bin
    if deal_filter:
        if deals is None:
            raise PreconditionError("deal-level filters need classified deals")
        ok = pd.Series(True, index=deals.index)
        if cfg.strategy != "all":
            ok &= deals["classification"] == cfg.strategy
        if cfg.foreign_only:
            ok &= deals["foreign"] == 1
        if cfg.perimeter_bin:
            ok &= deals["perimeter_bin"].isin(cfg.perimeter_bin)
        kept = set(deals.loc[ok, "firm_id"])
        treated = np.isfinite(frame["cohort"])
        keep &= ~treated | frame["firm_id"].isin(kept)
    return frame.loc[keep].reset_index(drop=True)


def stars(p: float) -> str:
    if not np.isfinite(p):
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


@dataclass
class RunState:
    cfg: RunConfig
    out: Path
    threads: int = 1
    panel: Optional[Panel] = None
    elasticities: dict = field(default_factory=dict)
    frame: Optional[pd.DataFrame] = None
    deals: Optional[pd.DataFrame] = None
    studies: dict = field(default_factory=dict)
    collections: dict = field(default_factory=dict)
    manifest: str = ""

    def __post_init__(self):
        # fixed at launch: later stages may fill in paths (e.g. simulated inputs)
        self.manifest = self.manifest or self.cfg.manifest()

    def write(self, frame: pd.DataFrame, name: str) -> None:
        write_frame(frame, self.out / name, self.manifest)


def _load_inputs(state: RunState) -> Panel:
    if state.panel is None:
        cfg = state.cfg
        panel = load_panel(cfg.firms)
        panel = apply_deflators(panel, load_deflators(cfg.deflators))
        if cfg.treatments:
            panel = attach_treatments(panel, load_treatments(cfg.treatments))
        else:
            panel = panel.with_frame(panel.frame.assign(cohort=np.inf))
        state.panel = derive_variables(panel)
        (state.out / "quality_report.txt").write_text(state.panel.report.to_text(), encoding="utf-8")
    return state.panel


def stage_simulate(state: RunState) -> None:
    cfg = state.cfg
    sim = simgen.SimConfig(
        industries=cfg.sim_industries, n_firms=cfg.sim_n_firms, years=cfg.sim_years,
        cohorts=cfg.sim_cohorts, treated_shares=tuple(0.05 for _ in cfg.sim_cohorts),
        effect=cfg.sim_effect, effect_slope=cfg.sim_effect_slope, seed=cfg.seed,
    )
    panel, truth = simgen.generate(sim)
    paths = simgen.write_simulation(panel, truth, state.out / "data", state.manifest)
    for key in ("firms", "treatments", "deflators", "io_table"):
        setattr(cfg, key, str(paths[key]))


def stage_estimate(state: RunState) -> None:
    cfg = state.cfg
    panel = _load_inputs(state)
    spec = prodfn.TranslogSpec(form=cfg.prodfn_form)
    acf = prodfn.AcfConfig(seed=cfg.seed)
    state.elasticities = prodfn.estimate_industries(panel, cfg.prodfn_method, spec, acf, threads=state.threads)
    table = pd.concat([es.coefficient_table() for es in state.elasticities.values()], ignore_index=True)
    state.write(table, "elasticities.csv")
    state.frame = prodfn.attach_tfp(panel, state.elasticities)


def stage_markups(state: RunState) -> None:
    cfg = state.cfg
    records = markup.compute_markups(state.frame, state.elasticities, cfg.flexible_input, cfg.correct_shares)
    state.write(records[["firm_id", "year", "industry", "mu", "theta", "alpha", "flexible_input"]], "markups.csv")
    series = markup.aggregate_markups(records, "sales", "year")
    state.write(series, "markup_series.csv")
    mu = records[["firm_id", "year", "mu"]].assign(log_mu=np.log(records["mu"]))
    state.frame = state.frame.drop(columns=["mu", "log_mu"], errors="ignore").merge(mu, on=["firm_id", "year"], how="left")


def stage_classify(state: RunState) -> None:
    cfg = state.cfg
    panel = _load_inputs(state)
    io = vertical.load_io_table(cfg.io_table)
    deals = vertical.build_deals(panel)
    bridge = cfg.bridge if cfg.bridge else "auto"
    state.deals = vertical.classify_deals(deals, io, cfg.threshold_percentile, bridge)
    state.write(state.deals, "deals_classified.csv")


def _analysis_frame(state: RunState) -> pd.DataFrame:
    cfg = state.cfg
    if cfg.strategy != "all" or cfg.foreign_only or cfg.perimeter_bin:
        if state.deals is None:
            stage_classify(state)
    return subsample(state.frame, cfg, state.deals)


def _design(cfg: RunConfig, outcome: str, frame: pd.DataFrame) -> CohortDesign:
    covs = tuple(c for c in cfg.covariates if c in frame and frame[c].notna().any())
    dropped = set(cfg.covariates) - set(covs)
    if dropped:
        logger.warning("covariates unavailable and skipped: %s", sorted(dropped))
    return CohortDesign(outcome=outcome, covariates=covs, categorical=cfg.categorical,
                        control_rule=cfg.control_rule, anticipation=cfg.anticipation)


def _outcomes(cfg: RunConfig, frame: pd.DataFrame):
    for key in cfg.outcomes:
        col = OUTCOMES[key]
        if col not in frame or frame[col].notna().sum() == 0:
            logger.warning("outcome %s (%s) not available; omitted", key, col)
            continue
        yield key, col


def stage_did(state: RunState) -> None:
    cfg = state.cfg
    frame = _analysis_frame(state)
    cells, overall = [], []
    state.collections.clear()
    for key, col in _outcomes(cfg, frame):
        coll = att_gt_all(frame, _design(cfg, col, frame), threads=state.threads)
        state.collections[key] = coll
        boot = bootstrap_se(coll, cfg.bootstrap_reps, cfg.seed, state.threads)
        table = coll.to_frame(boot.se)
        table.insert(0, "key", key)
        cells.append(table)
        agg = aggregate_overall(coll, cfg.bootstrap_reps, cfg.seed, state.threads)
        est, se = float(agg.estimates[0]), float(agg.se[0])
        p = 2 * _norm_sf(abs(est / se)) if se > 0 else np.nan
        overall.append({"outcome": key, "column": col, "estimate": est, "se": se,
                        "ci_low": float(agg.ci_low[0]), "ci_high": float(agg.ci_high[0]), "pvalue": p,
                        "n_treated": int(np.isfinite(coll.data.cohort).sum()), "n_firms": coll.data.n_firms})
    if not overall:
        raise PreconditionError("no requested outcome is available")
    state.write(pd.concat(cells, ignore_index=True).drop(columns="outcome").rename(columns={"key": "outcome"}),
                "att_gt.csv")
    state.write(pd.DataFrame(overall), "did_overall.csv")


def _norm_sf(z: float) -> float:
    from scipy.stats import norm
    return float(norm.sf(z))


def stage_event_study(state: RunState) -> None:
    cfg = state.cfg
    frames = []
    for key, coll in state.collections.items():
        study = event_study(coll, cfg.event_window, cfg.bootstrap_reps, cfg.seed, state.threads)
        state.studies[key] = study
        frames.append(study.to_frame().assign(outcome=key))
    table = pd.concat(frames, ignore_index=True)
    table = table[["outcome", *[c for c in table.columns if c != "outcome"]]]
    state.write(table, "event_study.csv")
    write_pretrend(state.studies, state.out / "pretrend_test.txt", state.manifest)


def stage_psm(state: RunState) -> None:
    cfg = state.cfg
    frame = _analysis_frame(state)
    design = psm.PsmDesign()
    covs = tuple(c for c in design.covariates if c in frame and frame[c].notna().any())
    design = psm.PsmDesign(covariates=covs)
    records, _ = psm.fit_match_pscore(psm.matching_records(frame, design), design)
    matched = psm.nn_match(records, design.caliper, design.exact)
    state.write(matched.pairs, "matched_pairs.csv")
    state.write(psm.balance_diagnostics(matched, covs), "balance.csv")
    rows = []
    for key, col in _outcomes(cfg, frame):
        controls = tuple(c for c in covs if c != col)
        for flag, data in ((False, psm.unmatched_panel(frame)), (True, psm.matched_panel(frame, matched))):
            res = psm.twfe_did(data, col, controls, matching=flag)
            rows.append({"outcome": key, "matching": int(flag), "coefficient": res.coefficient, "se": res.se,
                         "pvalue": res.pvalue, "stars": stars(res.pvalue), "n_obs": res.n_obs,
                         "n_treated_obs": res.n_treated_obs, "n_untreated_obs": res.n_untreated_obs})
    state.write(pd.DataFrame(rows), "twfe_results.csv")


def report(results_dir, manifest: Optional[str] = None) -> pd.DataFrame:
    """Dashboard of overall effects with significance stars, plus event-study plot data."""
    results = Path(results_dir)
    path = results / "did_overall.csv"
    if not path.exists():
        raise DataError(f"no did results in {results}")
    overall = pd.read_csv(path, comment="#")
    rows = []
    for key in OUTCOMES:
        hit = overall[overall["outcome"] == key]
        if hit.empty:
            continue
        r = hit.iloc[0]
        rows.append({"outcome": key, "estimate": r["estimate"], "se": r["se"], "pvalue": r["pvalue"],
                     "stars": stars(r["pvalue"]),
                     "cell": f"{r['estimate']:.3f}{stars(r['pvalue'])} ({r['se']:.3f})"})
    dashboard = pd.DataFrame(rows)
    write_frame(dashboard, results / "dashboard.csv", manifest)
    es = results / "event_study.csv"
    if es.exists():
        plot = pd.read_csv(es, comment="#")[["outcome", "e", "estimate", "ci_low", "ci_high"]]
        write_frame(plot, results / "event_study_plot.csv", manifest)
    return dashboard


def stage_report(state: RunState) -> None:
    report(state.out, state.manifest)


STAGE_FUNCS = {
    "simulate": stage_simulate,
    "estimate-prodfn": stage_estimate,
    "markups": stage_markups,
    "classify": stage_classify,
    "did": stage_did,
    "event-study": stage_event_study,
    "psm-did": stage_psm,
    "report": stage_report,
}


def stages_for(verb: str) -> tuple[str, ...]:
    """A single verb's stage plus everything it depends on, in order."""
    need = {verb}
    frontier = [verb]
    while frontier:
        for req in REQUIRES.get(frontier.pop(), ()):
            if req not in need:
                need.add(req)
                frontier.append(req)
    return tuple(s for s in STAGES if s in need)


def run(cfg: RunConfig, threads: int = 1) -> RunState:
    """Execute the configured stages in order; raises on the first failing stage.

    A failing stage leaves the outputs written so far and a ``FAILED``
    marker naming the stage and the cause.
    """
    cfg.validate(check_files=True)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "FAILED"
    if marker.exists():
        marker.unlink()
    state = RunState(cfg, out, threads)
    for stage in cfg.stages:
        logger.info("stage %s", stage)
        try:
            STAGE_FUNCS[stage](state)
        except Exception as exc:
            marker.write_text(f"stage: {stage}\ncause: {type(exc).__name__}: {exc}\n", encoding="utf-8")
            if isinstance(exc, TakeoverEffectsError):
                exc.stage = stage
            raise
    return state
