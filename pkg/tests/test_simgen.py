import numpy as np
import pandas as pd
import pytest
from scipy import stats

from takeover_effects import simgen
from takeover_effects.errors import ConfigError
from takeover_effects.panel import attach_treatments, derive_variables, apply_deflators, load_deflators, load_panel, load_treatments
from takeover_effects.simgen import DidSimConfig, SimConfig


def test_same_seed_bit_identical():
    a, ta = simgen.generate(SimConfig(seed=5, n_firms=40))
    b, tb = simgen.generate(SimConfig(seed=5, n_firms=40))
    pd.testing.assert_frame_equal(a.frame, b.frame, check_exact=True)
    pd.testing.assert_frame_equal(ta.firm_year, tb.firm_year, check_exact=True)
    c, _ = simgen.generate(SimConfig(seed=6, n_firms=40))
    assert not a.frame["sales"].equals(c.frame["sales"])


def test_did_generator_deterministic():
    a, _ = simgen.generate_did(DidSimConfig(seed=1))
    b, _ = simgen.generate_did(DidSimConfig(seed=1))
    pd.testing.assert_frame_equal(a.frame, b.frame, check_exact=True)


def test_null_effect_paths_match_in_distribution():
    no_selection = {"log_size": 0.0, "log_capital_intensity": 0.0, "tfp": 0.0}
    for seed in range(10):
        raw, truth = simgen.generate(SimConfig(seed=seed, n_firms=300, selection=no_selection,
                                               treated_shares=(0.15, 0.15, 0.15)))
        f = simgen.estimation_panel(raw, truth).frame
        wide = f.pivot(index="firm_id", columns="year", values="log_sales")
        growth = wide[2021] - wide[2007]
        cohort = f.groupby("firm_id")["cohort"].first()
        p = stats.ks_2samp(growth[np.isfinite(cohort)], growth[~np.isfinite(cohort)]).pvalue
        assert p > 0.01, seed


def test_true_markup_identity():
    raw, truth = simgen.generate(SimConfig(seed=0, n_firms=50, effect=0.05, treated_shares=(0.2, 0.2, 0.2)))
    fy = truth.firm_year.merge(raw.frame[["firm_id", "year", "sales", "materials_cost", "industry"]])
    panel = simgen.estimation_panel(raw, truth).frame.merge(truth.firm_year[["firm_id", "year", "mu", "theta_m",
                                                                             "epsilon"]])
    share = panel["materials_cost"] / (panel["sales"] / np.exp(panel["epsilon"]))
    np.testing.assert_allclose(panel["theta_m"] / share, panel["mu"], rtol=1e-12)
    post = fy[np.isfinite(fy["cohort"]) & (fy["year"] >= fy["cohort"])]
    np.testing.assert_allclose(post["mu"], 1.3 * np.exp(0.05), rtol=1e-12)


def test_truth_contents():
    raw, truth = simgen.generate(SimConfig(seed=0, n_firms=30, effect=0.05, effect_slope=0.01))
    assert truth.delta[(2011, 2013)] == pytest.approx(0.07)
    assert truth.delta[(2011, 2010)] == 0.0
    assert truth.beta["10"] == simgen.DEFAULT_BETA
    io = truth.inputs["io_table"]
    assert (io.groupby("output_code")["coefficient"].sum() < 1).all()


def test_written_files_round_trip(tmp_path):
    raw, truth = simgen.generate(SimConfig(seed=2, n_firms=30))
    paths = simgen.write_simulation(raw, truth, tmp_path)
    assert all(p.exists() for p in paths.values())
    panel = load_panel(paths["firms"])
    panel = derive_variables(attach_treatments(apply_deflators(panel, load_deflators(paths["deflators"])),
                                               load_treatments(paths["treatments"])))
    ref = simgen.estimation_panel(raw, truth).frame
    assert len(panel.frame) == len(ref)
    np.testing.assert_allclose(panel.frame.sort_values(["firm_id", "year"])["log_sales"],
                               ref.sort_values(["firm_id", "year"])["log_sales"], rtol=1e-10)


def test_true_overall_effect():
    panel, truth = simgen.generate_did(DidSimConfig(seed=0, effect=0.05, effect_slope=0.01))
    # cohorts 2003 (exposures 0..3) and 2005 (0..1)
    sizes = panel.frame.drop_duplicates("firm_id")["cohort"].value_counts()
    w = sizes[2003.0] / (sizes[2003.0] + sizes[2005.0])
    assert simgen.true_overall_effect(truth, panel) == pytest.approx(w * 0.065 + (1 - w) * 0.055)


def test_multinomial_shares():
    panel, _ = simgen.generate_did(DidSimConfig(seed=0, n_firms=20000, selection_model="multinomial"))
    shares = panel.frame.drop_duplicates("firm_id")["cohort"].value_counts(normalize=True)
    assert shares[2003.0] == pytest.approx(0.2, abs=0.015)
    assert shares[2005.0] == pytest.approx(0.2, abs=0.015)


@pytest.mark.parametrize("bad", [
    {"rho": 1.0}, {"sigma_xi": 0.0}, {"markup": "random"}, {"cohorts": (2030,), "treated_shares": (0.1,)},
    {"treated_shares": (0.5, 0.5, 0.5)}, {"beta": {"99": {"l": 0.1, "k": 0.1, "m": 0.1}}},
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        SimConfig(**bad).validate()
    with pytest.raises(ConfigError):
        simgen.generate(SimConfig(**bad))


def test_did_config_validation():
    with pytest.raises(ConfigError):
        simgen.generate_did(DidSimConfig(selection_model="probit"))


def test_brute_force_intercept_only_collapse():
    panel, _ = simgen.generate_did(DidSimConfig(seed=3, n_firms=60))
    f = panel.frame
    wide = f.pivot(index="firm_id", columns="year", values="y")
    cohort = f.groupby("firm_id")["cohort"].first()
    dy = wide[2003] - wide[2002]
    expected = dy[cohort == 2003].mean() - dy[cohort > 2003].mean()
    assert simgen.brute_force_att(f, 2003, 2003) == pytest.approx(expected, abs=1e-12)
