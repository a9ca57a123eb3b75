"""Horizontal / vertical / other classification of takeovers."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Optional, Union

import numpy as np
import pandas as pd

from .errors import ClassificationError, ConfigError
from .panel import as_frame

logger = logging.getLogger(__name__)

PERCENTILES = (25, 50, 75)
PERIMETER_BINS = ((1, 5, "1-5"), (6, 30, "6-30"), (31, 100, "31-100"), (101, np.inf, ">100"))


@dataclass(frozen=True)
class IOTable:
    """Technical coefficients a(i -> j): input from sector i per unit of output of j."""

    coefficients: Mapping[tuple, float]

    def __post_init__(self):
        bad = [k for k, v in self.coefficients.items() if not v >= 0]
        if bad:
            raise ConfigError(f"negative or missing technical coefficients for {bad[:5]}")

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "IOTable":
        f = frame.astype({"input_code": str, "output_code": str})
        return cls(dict(zip(zip(f["input_code"], f["output_code"]), f["coefficient"].astype(float))))

    @property
    def codes(self) -> set:
        return {c for pair in self.coefficients for c in pair}

    def coefficient(self, input_code, output_code) -> float:
        return float(self.coefficients.get((str(input_code), str(output_code)), 0.0))


def load_io_table(path) -> IOTable:
    return IOTable.from_frame(pd.read_csv(path, dtype={"input_code": str, "output_code": str}))


def _data_file(name: str):
    return resources.files("takeover_effects").joinpath("data", name)


def load_bridge(path=None) -> dict[str, str]:
    """NACE Rev. 2 two-digit code -> I-O sector code (the shipped table if ``path`` is None)."""
    source = _data_file("industry_bridge.csv") if path is None else path
    with (source.open("r") if path is None else open(source)) as fh:
        frame = pd.read_csv(fh, dtype=str)
    return dict(zip(frame["nace2"], frame["io_code"]))


def two_digit(code) -> str:
    digits = "".join(ch for ch in str(code) if ch.isdigit())
    return digits[:2] if digits else str(code)


class _Resolver:
    def __init__(self, io: IOTable, bridge):
        self.codes = io.codes
        self.bridge = bridge

    def __call__(self, code) -> str:
        key = two_digit(code)
        io_code = self.bridge.get(key) if self.bridge is not None else key
        if io_code is None or io_code not in self.codes:
            raise ClassificationError(f"industry code {code!r} has no I-O sector mapping")
        return io_code


def _pick_bridge(deals: pd.DataFrame, io: IOTable, bridge):
    if isinstance(bridge, Mapping) or bridge is None:
        return bridge
    if bridge != "auto":
        return load_bridge(bridge)
    codes = set(map(two_digit, deals["industry"])) | set(map(two_digit, deals["acquirer_industry"]))
    return None if codes <= io.codes else load_bridge()


def directional_coefficients(target, acquirer, io: IOTable, resolve) -> tuple[float, float]:
    t, a = resolve(target), resolve(acquirer)
    return io.coefficient(t, a), io.coefficient(a, t)


def classify_deal(target_industry, acquirer_industry, io: IOTable, threshold: float,
                  bridge: Optional[Mapping] = None) -> str:
    """Horizontal on equal 2-digit codes, else vertical if the larger of the two
    directional coefficients exceeds ``threshold``, else other."""
    if two_digit(target_industry) == two_digit(acquirer_industry):
        return "horizontal"
    up, down = directional_coefficients(target_industry, acquirer_industry, io, _Resolver(io, bridge))
    return "vertical" if max(up, down) > threshold else "other"


def vertical_threshold(deals: pd.DataFrame, io: IOTable, percentile: float = 50,
                       bridge: Union[str, Mapping, None] = "auto", reference: str = "deals") -> float:
    """Percentile of the coefficient distribution the vertical test compares against.

    ``reference="deals"`` uses, for every distinct non-horizontal industry
    pair among the deals, the larger directional coefficient; ``"table"``
    uses every coefficient in the I-O table.
    """
    if reference == "table":
        values = np.array(list(io.coefficients.values()), dtype=float)
    elif reference == "deals":
        resolve = _Resolver(io, _pick_bridge(deals, io, bridge))
        pairs = {tuple(sorted((two_digit(t), two_digit(a))))
                 for t, a in zip(deals["industry"], deals["acquirer_industry"])
                 if two_digit(t) != two_digit(a)}
        values = np.array([max(directional_coefficients(t, a, io, resolve)) for t, a in sorted(pairs)])
    else:
        raise ConfigError(f"unknown percentile reference {reference!r}")
    if values.size == 0:
        return np.inf
    return float(np.percentile(values, percentile))


def perimeter_bin(perimeter) -> Optional[str]:
    if perimeter is None or not np.isfinite(perimeter):
        return None
    if perimeter < 0:
        raise ClassificationError(f"negative perimeter {perimeter}")
    for lo, hi, label in PERIMETER_BINS:
        if perimeter <= hi:
            return label
    return None


def perimeter_bins(deals: pd.DataFrame) -> pd.Series:
    """Bin label per deal; deals with no perimeter get NaN and are counted."""
    values = pd.to_numeric(deals.get("acquirer_perimeter", pd.Series(np.nan, index=deals.index)), errors="coerce")
    labels = values.map(lambda v: perimeter_bin(v) if pd.notna(v) else None)
    n_missing = int(labels.isna().sum())
    if n_missing:
        logger.info("perimeter missing for %d deals; excluded from binned analysis", n_missing)
    out = labels.astype(object)
    out.attrs["missing"] = n_missing
    return out


def build_deals(panel, treatments: Optional[pd.DataFrame] = None) -> pd.DataFrame:
    """One row per takeover with target industry and country from the panel."""
    frame = as_frame(panel)
    firms = frame.sort_values(["firm_id", "year"]).drop_duplicates("firm_id")
    if treatments is None:
        cols = ["firm_id", "cohort", "acquirer_id", "acquirer_industry", "acquirer_country", "acquirer_perimeter"]
        treatments = firms.loc[np.isfinite(firms["cohort"]), [c for c in cols if c in firms]]
    deals = treatments.merge(firms[["firm_id", "industry", "country"]], on="firm_id", how="inner")
    deals["cohort"] = deals["cohort"].astype(int)
    deals.insert(0, "deal_id", deals["firm_id"].astype(str) + ":" + deals["cohort"].astype(str))
    return deals.sort_values("deal_id").reset_index(drop=True)


def classify_deals(deals: pd.DataFrame, io: IOTable, percentile: float = 50,
                   bridge: Union[str, Mapping, None] = "auto", reference: str = "deals") -> pd.DataFrame:
    """Classification, both directional coefficients, threshold, foreign flag and perimeter bin."""
    if percentile not in PERCENTILES:
        logger.warning("vertical threshold percentile %s is outside the usual {25, 50, 75}", percentile)
    bridge = _pick_bridge(deals, io, bridge)
    resolve = _Resolver(io, bridge)
    threshold = vertical_threshold(deals, io, percentile, bridge, reference)
    rows = []
    for d in deals.itertuples(index=False):
        horizontal = two_digit(d.industry) == two_digit(d.acquirer_industry)
        up, down = directional_coefficients(d.industry, d.acquirer_industry, io, resolve)
        used = max(up, down)
        if horizontal:
            label = "horizontal"
        else:
            label = "vertical" if used > threshold else "other"
        rows.append((label, up, down, used))
    out = deals[["deal_id", "firm_id", "cohort", "industry", "acquirer_industry"]].copy()
    out["classification"] = [r[0] for r in rows]
    out["coef_target_to_acquirer"] = [r[1] for r in rows]
    out["coef_acquirer_to_target"] = [r[2] for r in rows]
    out["coefficient_used"] = [r[3] for r in rows]
    out["threshold"] = threshold
    out["percentile"] = percentile
    if "acquirer_country" in deals:
        foreign = deals["acquirer_country"].notna() & (deals["acquirer_country"] != deals["country"])
        out["foreign"] = foreign.astype(int).to_numpy()
    else:
        out["foreign"] = 0
    out["perimeter_bin"] = perimeter_bins(deals).to_numpy()
    return out
