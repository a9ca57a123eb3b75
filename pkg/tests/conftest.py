import numpy as np
import pandas as pd
import pytest

from takeover_effects import simgen


def firm_rows(rows):
    """Minimal valid firm-year frame from (firm_id, year, sales) style overrides."""
    base = dict(country="DE", industry="10", sales=100.0, materials_cost=50.0, labor_cost=30.0,
                employees=10, fixed_assets=80.0, value_added=40.0, incorporation_year=2000)
    return pd.DataFrame([{**base, **r} for r in rows])


@pytest.fixture(scope="session")
def structural():
    """Two-industry structural panel with its truth, shared across tests."""
    panel, truth = simgen.generate(simgen.SimConfig(seed=2, n_firms=150))
    return simgen.estimation_panel(panel, truth), truth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
