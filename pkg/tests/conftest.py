from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

# Ensure repo root (containing saemabc/) is importable
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from saemabc.const import NLG_SIGMA  # noqa: E402
from saemabc.linear_gaussian import LinearGaussianTestModel  # noqa: E402
from saemabc.model import TimeGrid, simulate_dataset  # noqa: E402
from saemabc.nonlinear_gaussian import NonlinearGaussianModel  # noqa: E402
from saemabc.theophylline import TheophyllineModel  # noqa: E402


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def nlg_model() -> NonlinearGaussianModel:
    return NonlinearGaussianModel()


@pytest.fixture
def nlg_theta(nlg_model):
    return nlg_model.parameters(sigma_x=NLG_SIGMA, sigma_y=NLG_SIGMA)


@pytest.fixture
def nlg_data(nlg_model, nlg_theta):
    """(X, Y) with n = 20 at the benchmark parameter."""
    return simulate_dataset(nlg_model, TimeGrid(n=20), nlg_theta, np.random.default_rng(1))


@pytest.fixture
def lg_model() -> LinearGaussianTestModel:
    return LinearGaussianTestModel()


@pytest.fixture
def lg_data(lg_model):
    theta = lg_model.default_parameters()
    return simulate_dataset(lg_model, TimeGrid(n=20), theta, np.random.default_rng(2))


@pytest.fixture
def theo_model() -> TheophyllineModel:
    return TheophyllineModel()


@pytest.fixture
def theo_theta(theo_model):
    return theo_model.parameters(ke=0.5, cl=0.4, sigma=0.05, sigma_eps=0.1)


@pytest.fixture
def theo_data(theo_model, theo_theta):
    """(X, Y) on n = 10, Delta = 1, R = 2 with well-identified drift."""
    grid = TimeGrid(n=10, delta=1.0, substeps=2)
    return simulate_dataset(theo_model, grid, theo_theta, np.random.default_rng(3))
