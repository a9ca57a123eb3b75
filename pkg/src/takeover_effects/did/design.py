"""Cohort design and the per-cell estimation samples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from ..errors import ConfigError
from ..panel import as_frame

CONTROL_RULES = ("never_treated_only", "never_plus_not_yet")
DEFAULT_COVARIATES = ("log_size", "log_age", "log_capital_intensity", "tfp")


@dataclass(frozen=True)
class CohortDesign:
    """Who is compared with whom, on what outcome, conditioning on what.

    ``covariates`` are numeric columns measured in the base year ``g - 1``;
    ``categorical`` columns enter as indicator sets. The ``pscore_*`` and
    ``outcome_*`` overrides let the propensity and outcome models use
    different conditioning sets.
    """

    outcome: str = "log_mu"
    covariates: tuple[str, ...] = DEFAULT_COVARIATES
    categorical: tuple[str, ...] = ("industry",)
    control_rule: str = "never_plus_not_yet"
    anticipation: int = 0
    overlap_ceiling: float = 0.999
    pscore_covariates: Optional[tuple[str, ...]] = None
    pscore_categorical: Optional[tuple[str, ...]] = None
    outcome_covariates: Optional[tuple[str, ...]] = None
    outcome_categorical: Optional[tuple[str, ...]] = None
    tol: float = 1e-10
    max_iter: int = 50

    def __post_init__(self):
        if self.control_rule not in CONTROL_RULES:
            raise ConfigError(f"unknown control rule {self.control_rule!r}")
        if self.anticipation < 0:
            raise ConfigError("anticipation must be >= 0")
        if not 0 < self.overlap_ceiling <= 1:
            raise ConfigError("overlap ceiling must lie in (0, 1]")

    @property
    def ps_numeric(self):
        return self.covariates if self.pscore_covariates is None else self.pscore_covariates

    @property
    def ps_categorical(self):
        return self.categorical if self.pscore_categorical is None else self.pscore_categorical

    @property
    def or_numeric(self):
        return self.covariates if self.outcome_covariates is None else self.outcome_covariates

    @property
    def or_categorical(self):
        return self.categorical if self.outcome_categorical is None else self.outcome_categorical

    def base_year(self, g: int) -> int:
        return g - 1 - self.anticipation

    def with_outcome(self, outcome: str) -> "CohortDesign":
        from dataclasses import replace
        return replace(self, outcome=outcome)


@dataclass
class Cell:
    g: int
    t: int
    firms: np.ndarray          # positions into DidData.firm_ids
    treated: np.ndarray        # bool per firm in the cell
    dy: np.ndarray
    Xp: np.ndarray
    Xo: np.ndarray
    p_names: list
    o_names: list


class DidData:
    """Firm-by-year arrays for one outcome and the design's covariates."""

    def __init__(self, panel, design: CohortDesign):
        frame = as_frame(panel)
        self.design = design
        numeric = list(dict.fromkeys(design.ps_numeric + design.or_numeric))
        categorical = list(dict.fromkeys(design.ps_categorical + design.or_categorical))
        missing = [c for c in [design.outcome, "cohort", *numeric, *categorical] if c not in frame.columns]
        if missing:
            raise ConfigError(f"did: missing columns {missing}")
        self.firm_ids = np.sort(frame["firm_id"].unique())
        self.years = np.sort(frame["year"].unique()).astype(int)
        fi = np.searchsorted(self.firm_ids, frame["firm_id"].to_numpy())
        yi = np.searchsorted(self.years, frame["year"].to_numpy())
        shape = (len(self.firm_ids), len(self.years))

        def grid(values, fill=np.nan, dtype=float):
            out = np.full(shape, fill, dtype=dtype)
            out[fi, yi] = values
            return out

        self.Y = grid(frame[design.outcome].to_numpy(float))
        cohort = np.full(len(self.firm_ids), np.inf)
        cohort[fi] = frame["cohort"].to_numpy(float)
        self.cohort = cohort
        self.numeric = {c: grid(frame[c].to_numpy(float)) for c in numeric}
        self.categorical = {}
        for c in categorical:
            codes, levels = pd.factorize(frame[c], sort=True)
            self.categorical[c] = (grid(codes, fill=-1, dtype=int), levels)

    @property
    def n_firms(self) -> int:
        return len(self.firm_ids)

    def cohorts(self) -> list[int]:
        gs = np.unique(self.cohort[np.isfinite(self.cohort)]).astype(int)
        first = self.years[0]
        return [int(g) for g in gs if self.design.base_year(g) >= first]

    def cohort_sizes(self) -> dict[int, int]:
        return {g: int((self.cohort == g).sum()) for g in self.cohorts()}

    def year_pos(self, year) -> Optional[int]:
        j = int(np.searchsorted(self.years, year))
        return j if j < len(self.years) and self.years[j] == year else None

    def control_mask(self, g: int, t: int) -> np.ndarray:
        d = self.design
        if d.control_rule == "never_treated_only":
            return np.isinf(self.cohort)
        return (self.cohort != g) & (self.cohort > max(t, d.base_year(g)) + d.anticipation)

    def cell(self, g: int, t: int) -> Optional[Cell]:
        """Sample for cohort ``g`` at year ``t``; ``None`` if years are out of range."""
        d = self.design
        jb, jt = self.year_pos(d.base_year(g)), self.year_pos(t)
        if jb is None or jt is None:
            return None
        ok = np.isfinite(self.Y[:, jt]) & np.isfinite(self.Y[:, jb])
        for arr in self.numeric.values():
            ok &= np.isfinite(arr[:, jb])
        for codes, _ in self.categorical.values():
            ok &= codes[:, jb] >= 0
        treated = self.cohort == g
        keep = ok & (treated | self.control_mask(g, t))
        firms = np.nonzero(keep)[0]
        tr = treated[firms]
        dy = self.Y[firms, jt] - self.Y[firms, jb]
        Xp, pn = self._design(firms, jb, tr, d.ps_numeric, d.ps_categorical)
        Xo, on = self._design(firms, jb, tr, d.or_numeric, d.or_categorical)
        return Cell(g, t, firms, tr, dy, Xp, Xo, pn, on)

    def _design(self, firms, jb, treated, numeric, categorical):
        cols = [np.ones(len(firms))]
        names = ["const"]
        for c in numeric:
            cols.append(self.numeric[c][firms, jb])
            names.append(c)
        for c in categorical:
            codes, levels = self.categorical[c]
            x = codes[firms, jb]
            # levels missing from either group would separate the logit; they join the reference level
            shared = np.intersect1d(np.unique(x[treated]), np.unique(x[~treated]))
            for lev in shared[1:]:
                cols.append((x == lev).astype(float))
                names.append(f"{c}={levels[lev]}")
        return np.column_stack(cols), names
