"""Staggered difference-in-differences with doubly robust cohort-time effects."""

from .aggregate import AggregatedEffect, aggregate_by_group, aggregate_overall, event_study
from .attgt import AttGt, AttGtCollection, PscoreModel, att_gt, att_gt_all, fit_pscore
from .design import CohortDesign, DidData
from .inference import BootstrapResult, bootstrap_se, multiplier_bootstrap, wald_test
from .logit import LogitFit, fit_logit
from .output import write_att_gt, write_event_study, write_pretrend

__all__ = [
    "AggregatedEffect", "AttGt", "AttGtCollection", "BootstrapResult", "CohortDesign", "DidData",
    "LogitFit", "PscoreModel", "aggregate_by_group", "aggregate_overall", "att_gt", "att_gt_all",
    "bootstrap_se", "event_study", "fit_logit", "fit_pscore", "multiplier_bootstrap", "wald_test",
    "write_att_gt", "write_event_study", "write_pretrend",
]
