import numpy as np
import pandas as pd
import pytest

from takeover_effects import psm, simgen
from takeover_effects.errors import PreconditionError, RankError
from takeover_effects.psm import PsmDesign


def records(treated, controls, year=2010):
    rows = [{"firm_id": f"t{i}", "year": year, "treated": 1, "pscore": p, "cohort": year + 1}
            for i, p in enumerate(treated)]
    rows += [{"firm_id": f"c{i}", "year": year, "treated": 0, "pscore": p, "cohort": np.inf}
             for i, p in enumerate(controls)]
    return pd.DataFrame(rows)


def standardized(rng, n, mean, sd):
    z = rng.normal(size=n)
    return mean + sd * (z - z.mean()) / z.std(ddof=1)


def test_nearest_neighbour():
    recs = records([0.5], [0.49, 0.30])
    # 0.5 lies above every control score, so the support rule must be off for a match
    assert psm.nn_match(recs).off_support == ["t0"]
    m = psm.nn_match(recs, common_support=False)
    assert m.pairs[["treated_id", "control_id"]].values.tolist() == [["t0", "c0"]]
    assert m.pairs["distance"].iloc[0] == pytest.approx(0.01)


def test_off_support_dropped():
    m = psm.nn_match(records([0.99, 0.4], [0.60, 0.35]))
    assert m.off_support == ["t0"]
    assert m.common_support == (0.35, 0.60)
    assert m.pairs["treated_id"].tolist() == ["t1"]


def test_without_replacement_and_ties():
    m = psm.nn_match(records([0.5, 0.45], [0.5, 0.5, 0.1]))
    assert m.pairs["control_id"].tolist() == ["c0", "c1"]
    assert m.pairs["control_id"].is_unique and m.pairs["treated_id"].is_unique


def test_caliper_and_exact_year():
    recs = pd.concat([records([0.45], [0.2], year=2010), records([0.45], [0.49], year=2011)
                      .replace({"t0": "t9", "c0": "c9"})])
    m = psm.nn_match(recs, caliper=0.1)
    assert m.pairs["treated_id"].tolist() == ["t9"]
    assert m.unmatched == ["t0"]
    assert (m.pairs["year"] == 2011).all()


def test_control_used_once_across_years():
    recs = pd.concat([records([0.5], [0.5], 2010), records([0.5], [0.5], 2011).replace({"t0": "t1"})])
    m = psm.nn_match(recs)
    assert len(m.pairs) == 1 and m.unmatched == ["t1"]


def test_balance_identity(rng):
    x = rng.normal(size=100)
    row = psm.balance_row(x, x.copy())
    assert row["bias"] == 0 and row["variance_ratio"] == 1.0 and row["flag"] == ""


def test_balance_reference_row(rng):
    sd = 0.026 / 0.017
    row = psm.balance_row(standardized(rng, 500, 10.544, sd), standardized(rng, 700, 10.570, sd))
    assert round(row["bias"], 1) == -1.7
    assert row["variance_ratio"] == pytest.approx(1.0) and row["flag"] == ""


def test_variance_ratio_flag(rng):
    row = psm.balance_row(standardized(rng, 400, 0, np.sqrt(0.76)), standardized(rng, 400, 0, 1.0))
    assert row["variance_ratio"] == pytest.approx(0.76)
    assert row["flag"] == "*"
    assert psm.balance_row(np.ones(5), np.ones(5))["flag"] == "undefined"


def test_balance_columns_and_matching_on_simulated_panel():
    raw, truth = simgen.generate(simgen.SimConfig(seed=3, n_firms=1500))
    panel = simgen.estimation_panel(raw, truth)
    frame = panel.frame.merge(truth.firm_year[["firm_id", "year", "omega"]].rename(columns={"omega": "tfp"}),
                              on=["firm_id", "year"])
    recs, fit = psm.fit_match_pscore(psm.matching_records(frame))
    assert fit.as_dict()["log_size"] > 0
    m = psm.nn_match(recs)
    lo, hi = m.common_support
    assert m.pairs["treated_pscore"].between(lo, hi).all()
    assert m.pairs["treated_id"].is_unique and m.pairs["control_id"].is_unique
    bal = psm.balance_diagnostics(m)
    assert list(bal.columns) == ["variable", "sample", "mean_treated", "mean_control", "bias", "t", "p",
                                 "variance_ratio", "flag"]
    size = bal.set_index(["variable", "sample"]).loc["log_size", "bias"]
    assert abs(size["matched"]) < abs(size["unmatched"])

    mp = psm.matched_panel(frame, m)
    ctrl = mp[mp["treated"] == 0]
    assert ctrl.groupby("firm_id")["event"].nunique().eq(1).all()
    assert set(mp["post"]) == {0, 1}


def test_matching_records_missing_column():
    frame = pd.DataFrame({"firm_id": ["a"], "year": [2010], "cohort": [np.inf]})
    with pytest.raises(PreconditionError, match="missing columns"):
        psm.matching_records(frame, PsmDesign(covariates=("x",), categorical=()))


def test_matching_records_timing():
    frame = pd.DataFrame({"firm_id": list("aaabbb"), "year": [2009, 2010, 2011] * 2,
                          "cohort": [2011.0] * 3 + [np.inf] * 3, "x": np.arange(6.0)})
    recs = psm.matching_records(frame, PsmDesign(covariates=("x",), categorical=()))
    assert recs[["firm_id", "year", "treated"]].values.tolist() == [["a", 2010, 1], ["b", 2010, 0]]


def four_cells():
    # treated firms t1, t2 and controls c1, c2, two periods each
    y = {("t1", 0): 1.0, ("t1", 1): 1.9, ("t2", 0): 2.0, ("t2", 1): 3.3,
         ("c1", 0): 1.5, ("c1", 1): 1.7, ("c2", 0): 0.5, ("c2", 1): 0.9}
    rows = [{"firm_id": f, "year": 2010 + t, "y": v, "treated": int(f[0] == "t"), "post": t,
             "cohort": 2011.0 if f[0] == "t" else np.inf} for (f, t), v in y.items()]
    frame = pd.DataFrame(rows)
    cell = frame.groupby(["treated", "post"])["y"].mean()
    hand = (cell[1, 1] - cell[1, 0]) - (cell[0, 1] - cell[0, 0])
    return frame, hand


def test_twfe_four_cell_arithmetic():
    frame, hand = four_cells()
    res = psm.twfe_did(frame, "y", fixed_effects=())
    assert res.coefficient == pytest.approx(hand, abs=1e-12)
    assert (res.n_obs, res.n_treated_obs, res.n_untreated_obs, res.n_clusters) == (8, 4, 4, 4)
    with_year = psm.twfe_did(frame, "y", fixed_effects=("year",))
    assert with_year.coefficient == pytest.approx(hand, abs=1e-10)
    assert "post" in with_year.dropped


def test_twfe_collinear_interaction():
    frame, _ = four_cells()
    frame["treated"] = 1    # T x Post is then the second-year indicator
    with pytest.raises(RankError, match="treated_x_post"):
        psm.twfe_did(frame, "y", fixed_effects=("year",))


def twfe_dgp(rng, beta, n=5000, years=10):
    firm = np.repeat(np.arange(n), years)
    year = np.tile(np.arange(2000, 2000 + years), n)
    treated = np.repeat(rng.random(n) < 0.5, years).astype(int)
    event = np.repeat(rng.integers(2003, 2008, n), years)
    country = np.repeat(rng.choice(["DE", "FR", "IT"], n), years)
    industry = np.repeat(rng.choice(["10", "25"], n), years)
    post = (year >= event).astype(int)
    effects = {"DE": 0.0, "FR": 0.2, "IT": -0.1}
    y = (0.5 * np.sin(year) + np.vectorize(effects.get)(country) + 0.1 * (industry == "25") + 0.3 * treated
         + beta * treated * post + np.repeat(rng.normal(0, 0.2, n), years) + rng.normal(0, 0.1, n * years))
    return pd.DataFrame({"firm_id": firm, "year": year, "country": country, "industry": industry,
                         "treated": treated, "post": post, "y": y})


def test_twfe_recovers_effect(rng):
    res = psm.twfe_did(twfe_dgp(rng, -0.04), "y")
    assert abs(res.coefficient + 0.04) < 0.01
    assert res.pvalue < 0.01


def test_twfe_null(rng):
    res = psm.twfe_did(twfe_dgp(rng, 0.0, n=2000), "y")
    assert abs(res.coefficient) < 1.96 * res.se * 1.5


def test_absorb_matches_dummies(rng):
    n = 300
    a, b = rng.integers(0, 5, n), rng.integers(0, 4, n)
    x = rng.normal(size=(n, 2))
    D = np.column_stack([np.ones(n)] + [(a == i).astype(float) for i in range(1, 5)]
                        + [(b == j).astype(float) for j in range(1, 4)])
    ref = x - D @ np.linalg.lstsq(D, x, rcond=None)[0]
    np.testing.assert_allclose(psm.absorb(x, [a, b]), ref, atol=1e-8)
