"""Doubly robust cohort-time average treatment effects on the treated."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from ..errors import ConvergenceError, PreconditionError, SeparationError
from .design import Cell, CohortDesign, DidData
from .logit import LogitFit, fit_logit

logger = logging.getLogger(__name__)


@dataclass
class PscoreModel:
    g: int
    t: int
    coef: dict
    pscore: pd.Series      # indexed by firm_id
    iterations: int
    trace: list


@dataclass
class AttGt:
    g: int
    t: int
    estimate: float
    n_treated: int
    n_control: int
    feasible: bool = True
    reason: str = ""
    pscore_model: dict = field(default_factory=dict)
    outcome_model: dict = field(default_factory=dict)
    n_dropped_overlap: int = 0
    firms: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    influence: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def exposure(self) -> int:
        return self.t - self.g


def _infeasible(g, t, reason, n_treated=0, n_control=0):
    return AttGt(g, t, np.nan, n_treated, n_control, feasible=False, reason=reason)


def _pscore(cell: Cell, design: CohortDesign) -> LogitFit:
    return fit_logit(cell.Xp, cell.treated.astype(float), cell.p_names, tol=design.tol, max_iter=design.max_iter)


def fit_pscore(panel, g: int, design: CohortDesign, t: Optional[int] = None) -> PscoreModel:
    """Logit of membership in cohort ``g`` over the cohort and its eligible controls.

    Covariates are taken at ``g - 1``. ``t`` selects the control set under the
    not-yet-treated rule and defaults to ``g``.
    """
    data = panel if isinstance(panel, DidData) else DidData(panel, design)
    t = g if t is None else t
    cell = data.cell(g, t)
    if cell is None or not cell.treated.any():
        raise PreconditionError(f"cohort {g} has no treated firms observed at {design.base_year(g)} and {t}")
    fit = _pscore(cell, design)
    p = pd.Series(fit.fitted, index=data.firm_ids[cell.firms], name="pscore")
    return PscoreModel(g, t, fit.as_dict(), p, fit.iterations, fit.trace)


def _dr_cell(cell: Cell, p: np.ndarray):
    """Estimate and influence values for a trimmed cell sample."""
    n = len(cell.dy)
    D = cell.treated.astype(float)
    C = 1.0 - D
    dy, Xo, Xp = cell.dy, cell.Xo, cell.Xp

    XtX = Xo.T @ (Xo * C[:, None])
    gamma = np.linalg.lstsq(XtX, Xo.T @ (C * dy), rcond=None)[0]
    resid = dy - Xo @ gamma

    w1 = D
    w0 = p * C / (1.0 - p)
    att_t = np.sum(w1 * resid) / np.sum(w1)
    att_c = np.sum(w0 * resid) / np.sum(w0)
    att = att_t - att_c

    # influence of the outcome regression and of the logit coefficients
    lin_or = (C * resid)[:, None] * Xo @ np.linalg.pinv(XtX / n)
    hess_ps = (Xp * (p * (1 - p))[:, None]).T @ Xp / n
    lin_ps = ((D - p)[:, None] * Xp) @ np.linalg.pinv(hess_ps)

    m1, m0 = w1.mean(), w0.mean()
    inf_t = (w1 * resid - w1 * att_t - lin_or @ (w1 @ Xo / n)) / m1
    inf_c = (w0 * resid - w0 * att_c
             + lin_ps @ ((w0 * (resid - att_c)) @ Xp / n)
             - lin_or @ (w0 @ Xo / n)) / m0
    return att, inf_t - inf_c, gamma


def _estimate_cell(data: DidData, g: int, t: int) -> AttGt:
    design = data.design
    cell = data.cell(g, t)
    if cell is None:
        return _infeasible(g, t, "year outside panel")
    n_t = int(cell.treated.sum())
    n_c = int((~cell.treated).sum())
    if n_t == 0:
        return _infeasible(g, t, "no treated firms", n_t, n_c)
    if n_c == 0:
        return _infeasible(g, t, "no eligible controls", n_t, n_c)
    try:
        fit = _pscore(cell, design)
    except (SeparationError, ConvergenceError) as exc:
        logger.warning("cell (%d, %d): %s", g, t, exc)
        return _infeasible(g, t, str(exc), n_t, n_c)

    p = fit.fitted
    drop = ~cell.treated & (p >= design.overlap_ceiling)
    n_drop = int(drop.sum())
    if n_drop:
        logger.info("cell (%d, %d): %d controls above overlap ceiling dropped", g, t, n_drop)
        keep = ~drop
        cell = Cell(g, t, cell.firms[keep], cell.treated[keep], cell.dy[keep],
                    cell.Xp[keep], cell.Xo[keep], cell.p_names, cell.o_names)
        p = p[keep]
        n_c -= n_drop
        if n_c == 0:
            return _infeasible(g, t, "no controls within overlap ceiling", n_t, 0)

    att, inf, gamma = _dr_cell(cell, p)
    # rescale so that the full-sample mean of influence values linearizes the estimate
    inf = inf * (data.n_firms / len(cell.dy))
    return AttGt(g, t, float(att), n_t, n_c, True, "", fit.as_dict(),
                 {n: float(c) for n, c in zip(cell.o_names, gamma)}, n_drop, cell.firms, inf)


def att_gt(panel, g: int, t: int, design: CohortDesign) -> AttGt:
    data = panel if isinstance(panel, DidData) else DidData(panel, design)
    return _estimate_cell(data, g, t)


@dataclass
class AttGtCollection:
    data: DidData
    cells: list[AttGt]

    @property
    def design(self) -> CohortDesign:
        return self.data.design

    @property
    def feasible(self) -> list[AttGt]:
        return [c for c in self.cells if c.feasible]

    def get(self, g, t) -> Optional[AttGt]:
        for c in self.cells:
            if c.g == g and c.t == t:
                return c
        return None

    def influence_matrix(self, cells: Optional[list[AttGt]] = None) -> np.ndarray:
        cells = self.feasible if cells is None else cells
        out = np.zeros((self.data.n_firms, len(cells)))
        for j, c in enumerate(cells):
            out[c.firms, j] = c.influence
        return out

    def to_frame(self, se: Optional[np.ndarray] = None) -> pd.DataFrame:
        rows = []
        se_iter = iter(se) if se is not None else None
        for c in self.cells:
            s = next(se_iter) if (se_iter is not None and c.feasible) else np.nan
            rows.append({"outcome": self.design.outcome, "g": c.g, "t": c.t, "estimate": c.estimate, "se": s,
                         "n_treated": c.n_treated, "n_control": c.n_control, "feasible": int(c.feasible)})
        return pd.DataFrame(rows)


def att_gt_all(panel, design: CohortDesign, threads: int = 1) -> AttGtCollection:
    """Every (g, t) cell except each cohort's base year, ordered by g then t."""
    data = panel if isinstance(panel, DidData) else DidData(panel, design)
    cohorts = data.cohorts()
    if not cohorts:
        raise PreconditionError("no treated cohort with an observed base year")
    pairs = [(g, int(t)) for g in cohorts for t in data.years if t != design.base_year(g)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(lambda gt: _estimate_cell(data, *gt), pairs))
    else:
        cells = [_estimate_cell(data, g, t) for g, t in pairs]
    return AttGtCollection(data, cells)
