"""Firm-year panel ingestion, validation, deflation and derived variables."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import DeflatorLookupError, IntegrityError, SchemaError

logger = logging.getLogger(__name__)

# canonical field -> column name in firms.csv
DEFAULT_SCHEMA: dict[str, str] = {
    "firm_id": "firm_id",
    "year": "year",
    "country": "country",
    "industry": "nace2",
    "sales": "sales",
    "materials_cost": "materials",
    "labor_cost": "labor_cost",
    "employees": "employees",
    "fixed_assets": "fixed_assets",
    "value_added": "value_added",
    "incorporation_year": "incorporation_year",
    "liquidity_ratio": "liquidity",
    "solvency_ratio": "solvency",
    "roi": "roi",
    "materials_price": "materials_price",
}

REQUIRED_FIELDS = (
    "firm_id", "year", "country", "industry", "sales", "materials_cost",
    "labor_cost", "employees", "fixed_assets", "value_added",
)
OPTIONAL_FIELDS = (
    "incorporation_year", "liquidity_ratio", "solvency_ratio", "roi", "materials_price",
)
MONETARY_FIELDS = ("sales", "materials_cost", "labor_cost", "fixed_assets", "value_added")

# rows failing these are removed from the estimation sample (logs are taken downstream)
POSITIVE_FIELDS = ("sales", "materials_cost", "labor_cost", "fixed_assets")

TREATMENT_SCHEMA: dict[str, str] = {
    "firm_id": "firm_id",
    "cohort": "cohort_year",
    "acquirer_id": "acquirer_id",
    "acquirer_industry": "acquirer_nace2",
    "acquirer_country": "acquirer_country",
    "acquirer_perimeter": "acquirer_perimeter",
}

NEVER_TREATED = np.inf


@dataclass
class QualityReport:
    """Audit trail of every row removed or excluded along the way."""

    rows_read: int = 0
    dropped: dict[str, int] = field(default_factory=dict)
    excluded: dict[str, int] = field(default_factory=dict)
    missing_rates: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def drop(self, rule: str, n: int) -> None:
        if n:
            self.dropped[rule] = self.dropped.get(rule, 0) + int(n)

    def exclude(self, rule: str, n: int) -> None:
        if n:
            self.excluded[rule] = self.excluded.get(rule, 0) + int(n)

    @property
    def rows_dropped(self) -> int:
        return sum(self.dropped.values())

    def copy(self) -> "QualityReport":
        return QualityReport(
            self.rows_read, dict(self.dropped), dict(self.excluded),
            dict(self.missing_rates), list(self.notes),
        )

    def to_text(self) -> str:
        lines = [f"rows read: {self.rows_read}", f"rows dropped: {self.rows_dropped}"]
        for rule, n in sorted(self.dropped.items()):
            lines.append(f"  dropped [{rule}]: {n}")
        for rule, n in sorted(self.excluded.items()):
            lines.append(f"  excluded [{rule}]: {n}")
        lines.append("missing rates:")
        for col, rate in sorted(self.missing_rates.items()):
            lines.append(f"  {col}: {rate:.4f}")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Panel:
    """A validated firm-year panel.

    ``frame`` uses canonical column names (see ``DEFAULT_SCHEMA``) plus any
    derived columns. Operations return new panels; the frame held here is
    never mutated in place.
    """

    frame: pd.DataFrame
    report: QualityReport = field(default_factory=QualityReport)
    deflated: bool = False
    derived: bool = False

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def has_age(self) -> bool:
        return "incorporation_year" in self.frame.columns and self.frame["incorporation_year"].notna().any()

    def with_frame(self, frame: pd.DataFrame, **changes) -> "Panel":
        return replace(self, frame=frame, **changes)


def as_frame(data) -> pd.DataFrame:
    return data.frame if isinstance(data, Panel) else data


def validate_frame(frame: pd.DataFrame, report: Optional[QualityReport] = None) -> pd.DataFrame:
    """Apply the row-exclusion rules. Idempotent."""
    report = report if report is not None else QualityReport()
    dupes = frame[frame.duplicated(["firm_id", "year"], keep=False)]
    if len(dupes):
        offenders = (
            dupes[["firm_id", "year"]].drop_duplicates().head(10).itertuples(index=False)
        )
        listed = ", ".join(f"({f}, {y})" for f, y in offenders)
        raise IntegrityError(f"duplicate (firm_id, year) rows: {listed}")

    keep = pd.Series(True, index=frame.index)
    for col in REQUIRED_FIELDS:
        bad = frame[col].isna() & keep
        report.drop(f"missing {col}", bad.sum())
        keep &= ~bad
    for col in POSITIVE_FIELDS:
        bad = (frame[col] <= 0) & keep
        report.drop(f"nonpositive {col.replace('_cost', '')}", bad.sum())
        keep &= ~bad
    out = frame.loc[keep].sort_values(["firm_id", "year"], kind="mergesort")
    return out.reset_index(drop=True)


def load_panel(csv_path, schema: Optional[Mapping[str, str]] = None) -> Panel:
    """Read ``firms.csv`` into a validated panel.

    ``schema`` maps canonical field names to CSV column names and may be
    partial; unspecified fields use ``DEFAULT_SCHEMA``.
    """
    path = Path(csv_path)
    if not path.exists():
        raise SchemaError(f"panel file not found: {path}")
    mapping = dict(DEFAULT_SCHEMA)
    mapping.update(schema or {})
    raw = pd.read_csv(
        path,
        dtype={mapping["firm_id"]: str, mapping["country"]: str, mapping["industry"]: str},
        encoding="utf-8",
    )
    for name in REQUIRED_FIELDS:
        if mapping[name] not in raw.columns:
            raise SchemaError(f"missing required column: {mapping[name]!r}")
    present = [f for f in REQUIRED_FIELDS + OPTIONAL_FIELDS if mapping[f] in raw.columns]
    frame = raw[[mapping[f] for f in present]].copy()
    frame.columns = present
    frame["year"] = frame["year"].astype(int)

    report = QualityReport(rows_read=len(frame))
    report.missing_rates = {c: float(frame[c].isna().mean()) for c in present}
    if "incorporation_year" not in frame.columns:
        report.notes.append("no incorporation_year column: age covariates disabled")
        logger.warning("no incorporation_year column: age-based covariates disabled")
    frame = validate_frame(frame, report)
    return Panel(frame, report)


def load_deflators(csv_path) -> pd.DataFrame:
    table = pd.read_csv(csv_path, dtype={"country": str, "nace2": str})
    missing = {"country", "nace2", "year", "deflator"} - set(table.columns)
    if missing:
        raise SchemaError(f"missing required column: {sorted(missing)[0]!r}")
    table = table.rename(columns={"nace2": "industry"})
    table["year"] = table["year"].astype(int)
    if (table["deflator"] <= 0).any():
        raise IntegrityError("deflators must be strictly positive")
    return table[["country", "industry", "year", "deflator"]]


def apply_deflators(panel: Panel, deflators: pd.DataFrame) -> Panel:
    """Divide every monetary field by its (country, industry, year) deflator."""
    keys = ["country", "industry", "year"]
    table = deflators.rename(columns={"nace2": "industry"})
    frame = panel.frame.merge(table[keys + ["deflator"]], on=keys, how="left", validate="many_to_one")
    missing = frame["deflator"].isna()
    if missing.any():
        cell = frame.loc[missing, keys].iloc[0]
        raise DeflatorLookupError(
            f"no deflator for cell (country={cell['country']}, industry={cell['industry']}, year={cell['year']})"
        )
    for col in MONETARY_FIELDS:
        frame[col] = frame[col] / frame["deflator"]
    frame = frame.drop(columns="deflator")
    return panel.with_frame(frame, deflated=True)


def load_treatments(csv_path, schema: Optional[Mapping[str, str]] = None) -> pd.DataFrame:
    mapping = dict(TREATMENT_SCHEMA)
    mapping.update(schema or {})
    raw = pd.read_csv(
        csv_path,
        dtype={mapping["firm_id"]: str, mapping["acquirer_id"]: str,
               mapping["acquirer_industry"]: str, mapping["acquirer_country"]: str},
    )
    for name in ("firm_id", "cohort"):
        if mapping[name] not in raw.columns:
            raise SchemaError(f"missing required column: {mapping[name]!r}")
    cols = {mapping[k]: k for k in mapping if mapping[k] in raw.columns}
    out = raw[list(cols)].rename(columns=cols)
    out["cohort"] = out["cohort"].astype(int)
    return out


def attach_treatments(panel: Panel, treatments: pd.DataFrame) -> Panel:
    """Merge treatment cohorts onto the panel.

    Firms with more than one takeover are removed entirely; firms taken over
    in or before their first observed year have no pre-treatment period and
    are removed too. Both removals are counted in the report.
    """
    report = panel.report.copy()
    frame = panel.frame.drop(columns=[c for c in treatments.columns if c != "firm_id" and c in panel.frame], errors="ignore")
    counts = treatments["firm_id"].value_counts()
    multi = set(counts.index[counts > 1])
    if multi:
        drop = frame["firm_id"].isin(multi)
        report.drop("multiple acquisitions", drop.sum())
        frame = frame.loc[~drop]
    single = treatments[~treatments["firm_id"].isin(multi)]
    frame = frame.merge(single, on="firm_id", how="left")
    frame["cohort"] = frame["cohort"].astype(float).fillna(NEVER_TREATED)
    first_year = frame.groupby("firm_id")["year"].transform("min")
    early = frame["cohort"] <= first_year
    report.drop("treated before first observed year", early.sum())
    frame = frame.loc[~early].reset_index(drop=True)
    return panel.with_frame(frame, report=report)


def _safe_log(values: pd.Series) -> pd.Series:
    return np.log(values.where(values > 0))


def derive_variables(panel: Panel, trim: Optional[Sequence[float]] = None) -> Panel:
    """Populate variable costs, ratios, market shares and log transforms.

    ``trim`` is an optional (low, high) percentile pair; when given, rows whose
    log sales, log materials, log labor or log capital fall outside the
    percentiles are dropped. Off by default.
    """
    report = panel.report.copy()
    f = panel.frame.copy()
    f["variable_cost"] = f["materials_cost"] + f["labor_cost"]
    f["variable_cost_ratio"] = f["variable_cost"] / f["sales"]

    no_staff = f["employees"] <= 0
    report.exclude("zero employees (capital intensity)", no_staff.sum())
    f["capital_intensity"] = (f["fixed_assets"] / f["employees"]).where(~no_staff)

    cell = ["country", "industry", "year"]
    f["market_share"] = f["sales"] / f.groupby(cell)["sales"].transform("sum")

    f["log_sales"] = np.log(f["sales"])
    f["log_materials"] = np.log(f["materials_cost"])
    f["log_labor"] = np.log(f["labor_cost"])
    f["log_capital"] = np.log(f["fixed_assets"])
    f["log_value_added"] = _safe_log(f["value_added"])
    f["log_variable_cost"] = np.log(f["variable_cost"])
    f["log_variable_cost_ratio"] = np.log(f["variable_cost_ratio"])
    f["log_market_share"] = np.log(f["market_share"])
    f["log_capital_intensity"] = _safe_log(f["capital_intensity"])
    f["log_size"] = _safe_log(f["employees"].astype(float))
    if "materials_price" in f.columns and f["materials_price"].notna().all():
        f["log_materials_price"] = np.log(f["materials_price"])
        f["log_materials_qty"] = f["log_materials"] - f["log_materials_price"]
    else:
        f["log_materials_qty"] = f["log_materials"]
    if "liquidity_ratio" in f.columns:
        f["log_liquidity"] = _safe_log(f["liquidity_ratio"])
    if "cohort" in f.columns:
        f["post_takeover"] = (f["year"] >= f["cohort"]).astype(float)
    if panel.has_age:
        f["firm_age"] = f["year"] - f["incorporation_year"]
        f["log_age"] = np.log1p(f["firm_age"].clip(lower=0))

    if trim is not None:
        lo, hi = trim
        keep = pd.Series(True, index=f.index)
        for col in ("log_sales", "log_materials", "log_labor", "log_capital"):
            a, b = np.percentile(f[col], [lo, hi])
            keep &= f[col].between(a, b)
        report.drop(f"trimmed outside [{lo}, {hi}] percentiles", (~keep).sum())
        f = f.loc[keep].reset_index(drop=True)
        f["market_share"] = f["sales"] / f.groupby(cell)["sales"].transform("sum")
        f["log_market_share"] = np.log(f["market_share"])
    return panel.with_frame(f, report=report, derived=True)


def write_frame(frame: pd.DataFrame, path, manifest: Optional[str] = None) -> None:
    """CSV writer with a fixed float format so reruns are byte-identical."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        if manifest:
            fh.write(f"# {manifest}\n")
        frame.to_csv(fh, index=False, float_format="%.12g", lineterminator="\n")
