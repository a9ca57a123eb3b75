import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from takeover_effects import markup, prodfn, simgen
from takeover_effects.errors import CoverageError
from takeover_effects.prodfn import ElasticitySet, TranslogSpec


def one_obs(theta, alpha, eps=0.0, sales=100.0):
    frame = pd.DataFrame({"firm_id": ["f"], "year": [2010], "industry": ["10"], "sales": [sales],
                          "materials_cost": [alpha * sales], "labor_cost": [10.0]})
    nan = np.array([np.nan])
    es = ElasticitySet("10", "given", TranslogSpec(form="cobb_douglas"), {"m": theta},
                       frame[["firm_id", "year"]], np.array([theta]), np.array([0.2]), np.array([0.1]),
                       nan, np.array([eps]), nan)
    return frame, {"10": es}


def test_markup_arithmetic():
    out = markup.compute_markups(*one_obs(0.6, 0.4), correct_shares=False)
    assert out["mu"].iloc[0] == pytest.approx(1.5, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(share=st.floats(0.01, 0.99))
def test_elasticity_equal_to_share_gives_unit_markup(share):
    out = markup.compute_markups(*one_obs(share, share), correct_shares=False)
    assert out["mu"].iloc[0] == pytest.approx(1.0, abs=1e-12)
    assert out["mu"].iloc[0] == out["theta"].iloc[0] / out["alpha"].iloc[0]


def test_share_correction_uses_first_stage_error():
    frame, es = one_obs(0.6, 0.4, eps=0.1)
    corrected = markup.compute_markups(frame, es)["mu"].iloc[0]
    assert corrected == pytest.approx(1.5 * np.exp(-0.1), abs=1e-12)


def test_composite_and_labor_inputs():
    frame, es = one_obs(0.6, 0.4)
    assert markup.compute_markups(frame, es, "labor", False)["mu"].iloc[0] == pytest.approx(0.2 / 0.1)
    assert markup.compute_markups(frame, es, "composite", False)["mu"].iloc[0] == pytest.approx(0.8 / 0.5)


def test_zero_expenditure_excluded():
    frame, es = one_obs(0.6, 0.4)
    frame.loc[0, "materials_cost"] = 0.0
    out = markup.compute_markups(frame, es, correct_shares=False)
    assert out.empty
    assert out.attrs["excluded"]["zero expenditure"] == 1


def test_missing_industry_coverage():
    frame, es = one_obs(0.6, 0.4)
    frame.loc[0, "industry"] = "11"
    with pytest.raises(CoverageError, match="11"):
        markup.compute_markups(frame, es)


def test_true_elasticities_recover_markup_exactly(structural):
    panel, truth = structural
    true = {ind: truth.elasticity_set(panel, ind) for ind in ("10", "25")}
    out = markup.compute_markups(panel, true)
    assert len(out) == len(panel.frame)
    assert np.max(np.abs(out["mu"] - 1.3)) < 1e-12
    agg = markup.aggregate_markups(out)
    np.testing.assert_allclose(agg["weighted_mean"], 1.3, atol=1e-12)


def test_aggregate_examples():
    rec = pd.DataFrame({"year": [2010, 2010], "industry": ["10", "10"], "mu": [1.0, 2.0], "sales": [100.0, 100.0]})
    assert markup.aggregate_markups(rec)["weighted_mean"].iloc[0] == pytest.approx(1.5)
    rec["sales"] = [0.0, 100.0]
    row = markup.aggregate_markups(rec).iloc[0]
    assert row["weighted_mean"] == pytest.approx(2.0) and row["n"] == 1
    assert markup.aggregate_markups(rec, weights="none")["weighted_mean"].iloc[0] == pytest.approx(1.5)
    assert list(markup.aggregate_markups(rec, by="industry-year").columns) == ["industry", "year", "weighted_mean", "n"]


def test_distribution_summary():
    rec = pd.DataFrame({"year": 2010, "mu": [1.0, 2.0, 3.0]})
    summary = markup.markup_distribution(rec, 2010)
    assert summary["mean"] == pytest.approx(2.0) and summary["median"] == pytest.approx(2.0)
    assert markup.markup_distribution(rec.iloc[:1], 2010)["sd"] == 0.0
    with pytest.raises(ValueError):
        markup.markup_distribution(rec, 1999)


def test_lognormal_markup_moments():
    cfg = simgen.SimConfig(seed=4, n_firms=400, markup="lognormal", mu=1.3, mu_sigma=0.2)
    raw, truth = simgen.generate(cfg)
    panel = simgen.estimation_panel(raw, truth)
    true = {ind: truth.elasticity_set(panel, ind) for ind in cfg.industries}
    summary = markup.markup_distribution(markup.compute_markups(panel, true), 2015)
    n = summary["n"]
    mean = 1.3 * np.exp(0.2 ** 2 / 2)
    sd = mean * np.sqrt(np.exp(0.2 ** 2) - 1)
    assert abs(summary["mean"] - mean) < 4 * sd / np.sqrt(n)
    assert abs(summary["sd"] - sd) < 0.15 * sd
    assert abs(np.log(summary["median"]) - np.log(1.3)) < 4 * 1.2533 * 0.2 / np.sqrt(n)


def test_acf_markups_near_truth(structural):
    panel, _ = structural
    est = prodfn.estimate_industries(panel, "acf", TranslogSpec(form="cobb_douglas"))
    assert abs(markup.compute_markups(panel, est)["mu"].median() - 1.3) < 0.07
