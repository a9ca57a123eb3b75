import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from takeover_effects import simgen
from takeover_effects.did import (
    CohortDesign, aggregate_by_group, aggregate_overall, att_gt, att_gt_all, bootstrap_se,
    event_study, fit_logit, fit_pscore, multiplier_bootstrap, wald_test, write_att_gt,
    write_event_study, write_pretrend,
)
from takeover_effects.errors import AggregationError, ConfigError, PreconditionError, SeparationError

PLAIN = CohortDesign(outcome="y", covariates=(), categorical=())
SIM = CohortDesign(outcome="y", covariates=("x1", "x2"), categorical=())


def toy_panel(paths, years):
    """``paths`` maps firm -> (cohort, outcome per year)."""
    rows = [{"firm_id": f, "year": y, "cohort": float(c), "y": v}
            for f, (c, ys) in paths.items() for y, v in zip(years, ys)]
    return pd.DataFrame(rows)


TWO_BY_TWO = toy_panel({
    "A": (2011, [1.0, 1.4]), "B": (2011, [2.0, 2.6]),
    "C": (np.inf, [1.0, 1.1]), "D": (np.inf, [3.0, 3.3]),
}, [2010, 2011])


def sim_panel(seed=0, **kw):
    panel, truth = simgen.generate_did(simgen.DidSimConfig(seed=seed, **kw))
    return panel.frame, truth


# logit

def test_logit_balanced_binary_covariate():
    x = np.repeat([0.0, 1.0], 40)
    d = np.tile([1.0, 0.0, 0.0, 0.0], 20)
    fit = fit_logit(np.column_stack([np.ones(80), x]), d, ["const", "x"])
    assert abs(fit.as_dict()["x"]) < 1e-8
    np.testing.assert_allclose(fit.fitted, 0.25, atol=1e-12)


def test_logit_no_signal(rng):
    x = rng.normal(size=4000)
    d = (rng.random(4000) < 0.3).astype(float)
    fit = fit_logit(np.column_stack([np.ones(4000), x]), d)
    assert np.max(np.abs(fit.fitted - d.mean())) < 0.03


def test_logit_separation_names_covariate():
    X = np.column_stack([np.ones(6), [0.1, 0.2, 0.3, 0.7, 0.8, 0.9], [1, 0, 1, 0, 1, 0]])
    d = np.array([0, 0, 0, 1, 1, 1.0])
    with pytest.raises(SeparationError, match="size") as info:
        fit_logit(X, d, ["const", "size", "z"])
    assert info.value.covariate == "size"


def test_logit_matches_scipy_optimum(rng):
    from scipy.optimize import minimize
    X = np.column_stack([np.ones(500), rng.normal(size=(500, 2))])
    d = (rng.random(500) < 1 / (1 + np.exp(-(X @ [0.2, 1.0, -0.5])))).astype(float)
    nll = lambda b: -np.sum(d * (X @ b) - np.logaddexp(0, X @ b))
    ref = minimize(nll, np.zeros(3), method="BFGS", options={"gtol": 1e-10}).x
    np.testing.assert_allclose(fit_logit(X, d).coef, ref, atol=1e-5)


def test_pscore_slope_matches_selection():
    frame, _ = sim_panel(seed=3, n_firms=6000, selection_model="multinomial")
    design = CohortDesign(outcome="y", covariates=("x1", "x2"), categorical=(), control_rule="never_treated_only")
    model = fit_pscore(frame, 2003, design)
    assert abs(model.coef["x1"] - 0.5) < 0.15
    assert abs(model.coef["x2"] - 0.3) < 0.15
    assert model.pscore.between(0, 1).all()


# cohort-time effects

def test_two_by_two_difference_in_means():
    cell = att_gt(TWO_BY_TWO, 2011, 2011, PLAIN)
    assert cell.estimate == pytest.approx(0.5 - 0.2, abs=1e-12)
    assert (cell.n_treated, cell.n_control) == (2, 2)


def test_intercept_only_is_difference_in_mean_changes():
    frame, _ = sim_panel(seed=5)
    wide = frame.pivot(index="firm_id", columns="year", values="y")
    cohort = frame.groupby("firm_id")["cohort"].first()
    dy = wide[2004] - wide[2002]
    control = (cohort != 2003) & (cohort > 2004)
    expected = dy[cohort == 2003].mean() - dy[control].mean()
    assert att_gt(frame, 2003, 2004, PLAIN).estimate == pytest.approx(expected, abs=1e-12)


def test_empty_control_cell_infeasible():
    frame = TWO_BY_TWO[TWO_BY_TWO["cohort"] == 2011]
    cell = att_gt(frame, 2011, 2011, PLAIN)
    assert not cell.feasible and cell.reason == "no eligible controls"
    assert simgen.brute_force_att(frame, 2011, 2011) is None


def test_oracle_small_panels():
    for seed in range(3):
        frame, _ = sim_panel(seed=seed, n_firms=80)
        coll = att_gt_all(frame, SIM)
        for c in coll.cells:
            ref = simgen.brute_force_att(frame, c.g, c.t, outcome="y", covariates=("x1", "x2"))
            if c.feasible:
                assert c.estimate == pytest.approx(ref, abs=1e-10)
            else:
                assert ref is None


def test_never_treated_rule_and_anticipation():
    frame, _ = sim_panel(seed=2, n_firms=120, years=(2001, 2008), cohorts=(2004, 2006))
    for design, kwargs in (
        (CohortDesign(outcome="y", covariates=("x1",), categorical=(), control_rule="never_treated_only"),
         {"control_rule": "never_treated_only"}),
        (CohortDesign(outcome="y", covariates=("x1",), categorical=(), anticipation=1), {"anticipation": 1}),
    ):
        for c in att_gt_all(frame, design).cells:
            ref = simgen.brute_force_att(frame, c.g, c.t, outcome="y", covariates=("x1",), **kwargs)
            assert (ref is None) == (not c.feasible)
            if c.feasible:
                assert c.estimate == pytest.approx(ref, abs=1e-10)


def test_categorical_covariates_run(rng):
    frame, _ = sim_panel(seed=1, n_firms=300)
    design = CohortDesign(outcome="y", covariates=("x1",), categorical=("industry", "country"))
    coll = att_gt_all(frame, design)
    assert coll.feasible
    assert any(name.startswith("industry") for name in coll.feasible[0].pscore_model)


def test_overlap_ceiling_drops_controls():
    frame, _ = sim_panel(seed=4, n_firms=200)
    low = CohortDesign(outcome="y", covariates=("x1", "x2"), categorical=(), overlap_ceiling=0.3)
    cell = att_gt(frame, 2003, 2004, low)
    ref = simgen.brute_force_att(frame, 2003, 2004, outcome="y", covariates=("x1", "x2"), overlap_ceiling=0.3)
    assert cell.n_dropped_overlap > 0
    assert cell.estimate == pytest.approx(ref, abs=1e-10)


def test_design_validation():
    with pytest.raises(ConfigError):
        CohortDesign(control_rule="everyone")
    with pytest.raises(ConfigError):
        CohortDesign(anticipation=-1)


@settings(max_examples=15, deadline=None)
@given(shift=st.floats(-50, 50), seed=st.integers(0, 1000))
def test_outcome_shift_and_relabel_invariance(shift, seed):
    frame, _ = sim_panel(seed=seed, n_firms=60)
    base = att_gt_all(frame, SIM)
    moved = frame.assign(y=frame["y"] + shift)
    order = np.random.default_rng(seed).permutation(frame["firm_id"].unique())
    relabel = dict(zip(frame["firm_id"].unique(), order.astype(str)))
    renamed = moved.assign(firm_id=moved["firm_id"].map(relabel))
    for other in (att_gt_all(moved, SIM), att_gt_all(renamed, SIM)):
        for a, b in zip(base.cells, other.cells):
            assert a.feasible == b.feasible
            if a.feasible:
                assert b.estimate == pytest.approx(a.estimate, abs=1e-9)


# aggregation

EQUAL_COHORTS = toy_panel({
    "a1": (2011, [0.0, 0.1, 0.1]), "a2": (2011, [1.0, 1.1, 1.1]),
    "b1": (2012, [0.0, 0.0, 0.3]), "b2": (2012, [2.0, 2.0, 2.3]),
    "n1": (np.inf, [0.0, 0.0, 0.0]), "n2": (np.inf, [5.0, 5.0, 5.0]),
}, [2010, 2011, 2012])


def test_overall_two_equal_cohorts():
    coll = att_gt_all(EQUAL_COHORTS, PLAIN)
    agg = aggregate_overall(coll, reps=199)
    assert agg.estimates[0] == pytest.approx(0.2, abs=1e-12)
    assert sum(agg.weights[0].values()) == pytest.approx(1.0)
    by_group = aggregate_by_group(coll, reps=199)
    np.testing.assert_allclose(by_group.estimates, [0.1, 0.3], atol=1e-12)


def test_overall_single_cell():
    agg = aggregate_overall(att_gt_all(TWO_BY_TWO, PLAIN), reps=199)
    assert agg.estimates[0] == pytest.approx(0.3, abs=1e-12)
    assert agg.weights == [{(2011, 2011): 1.0}]


def test_no_post_cell_is_an_error():
    frame = toy_panel({"A": (2012, [1.0, 1.5]), "B": (2012, [2.0, 2.1]), "C": (np.inf, [1.0, 1.2])},
                      [2010, 2011])
    coll = att_gt_all(frame, PLAIN)
    assert [(c.g, c.t) for c in coll.feasible] == [(2012, 2010)]
    with pytest.raises(AggregationError):
        aggregate_overall(coll)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_weights_sum_to_one(seed):
    coll = att_gt_all(sim_panel(seed=seed, n_firms=80)[0], SIM)
    overall = aggregate_overall(coll, reps=100)
    assert sum(overall.weights[0].values()) == pytest.approx(1.0, abs=1e-12)
    study = event_study(coll, reps=100)
    for w in study.weights:
        assert sum(w.values()) == pytest.approx(1.0, abs=1e-12)


def test_overall_recovers_effect():
    frame, _ = sim_panel(seed=7, n_firms=3000, effect=0.05)
    agg = aggregate_overall(att_gt_all(frame, SIM), reps=299)
    assert abs(agg.estimates[0] - 0.05) < 3 * agg.se[0] + 1e-3


def test_event_study_profile_slope():
    delta = 0.02
    frame, _ = sim_panel(seed=11, n_firms=4000, years=(2001, 2010), cohorts=(2004, 2006),
                         effect=delta, effect_slope=delta)
    study = event_study(att_gt_all(frame, SIM), reps=299)
    e = np.array(study.labels)
    post = e >= 0
    slope = np.polyfit(e[post], study.estimates[post], 1)[0]
    assert abs(slope - delta) < 0.005
    pre = ~post
    assert np.all(np.abs(study.estimates[pre]) < study.crit * study.se[pre])
    assert -1 not in study.labels


def test_event_study_window_and_precondition():
    coll = att_gt_all(sim_panel(seed=1, n_firms=100)[0], SIM)
    assert event_study(coll, window=(-2, 1), reps=100).labels == [-2, 0, 1]
    with pytest.raises(PreconditionError):
        event_study(coll, window=(0, 2), reps=100)


# inference

def test_constant_outcome_zero_se():
    frame = EQUAL_COHORTS.assign(y=1.0)
    coll = att_gt_all(frame, PLAIN)
    boot = bootstrap_se(coll, reps=199)
    assert np.all(boot.se == 0)
    assert aggregate_overall(coll, reps=199).se[0] == 0


def test_bootstrap_deterministic_and_thread_invariant():
    coll = att_gt_all(sim_panel(seed=2, n_firms=150)[0], SIM)
    a = bootstrap_se(coll, reps=299, seed=9)
    b = bootstrap_se(coll, reps=299, seed=9)
    c = bootstrap_se(coll, reps=299, seed=9, threads=4)
    assert np.array_equal(a.se, b.se) and np.array_equal(a.se, c.se)
    assert np.array_equal(a.draws, c.draws) and a.crit == c.crit
    assert not np.array_equal(a.se, bootstrap_se(coll, reps=299, seed=10).se)


def test_bootstrap_se_matches_analytic(rng):
    inf = rng.normal(size=(2000, 1))
    boot = multiplier_bootstrap(inf, reps=2000, seed=0)
    analytic = np.sqrt(np.mean(inf ** 2) / len(inf))
    assert boot.se[0] == pytest.approx(analytic, rel=0.08)
    assert 1.9 < boot.crit < 2.05


def test_few_reps_warn(caplog, rng):
    multiplier_bootstrap(rng.normal(size=(50, 1)), reps=20)
    assert "recommended" in caplog.text


def test_wald_rank_deficient():
    res = wald_test([1.0, 1.0], np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert res["df"] == 1
    assert res["chi2"] == pytest.approx(1.0)


# output

def test_writers(tmp_path):
    coll = att_gt_all(sim_panel(seed=1, n_firms=100)[0], SIM)
    boot = bootstrap_se(coll, reps=100)
    frame = write_att_gt(coll, boot.se, tmp_path / "att_gt.csv", manifest="seed=1")
    assert list(frame.columns) == ["outcome", "g", "t", "estimate", "se", "n_treated", "n_control", "feasible"]
    assert (tmp_path / "att_gt.csv").read_text().startswith("# seed=1\n")
    study = event_study(coll, reps=100)
    es = write_event_study(study, tmp_path / "es.csv", outcome="y")
    assert list(es.columns) == ["outcome", "e", "estimate", "se", "ci_low", "ci_high", "band_low", "band_high"]
    text = write_pretrend({"y": study}, tmp_path / "pretrend.txt")
    assert "Pretrend Test: H0 All Pre-treatment are equal to 0" in text
    assert "chi2(" in text and "Pre-average:" in text and "Post-average:" in text
