"""Nonlinear Gaussian benchmark: X_j = 2 sin(exp(X_{j-1})) + sigma_x tau_j, Y_j = X_j + sigma_y nu_j."""

from __future__ import annotations

import logging

import numpy as np
from scipy import stats

from .const import EXP_ARGUMENT_CAP
from .exceptions import ContractViolation
from .helpers import floor_variance
from .model import LatentPath, ObservationSeries, ParameterVector, StateSpaceModel, TimeGrid

_LOGGER = logging.getLogger(__name__)


def state_map(x_prev):
    """2 sin(exp(x))."""
    return 2.0 * np.sin(np.exp(np.minimum(x_prev, EXP_ARGUMENT_CAP)))


def _path_arrays(Y: ObservationSeries, X: LatentPath) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if X.grid.substeps != 1:
        raise ContractViolation("The nonlinear Gaussian model is defined without sub-steps (R = 1)")
    if X.grid != Y.grid:
        raise ContractViolation("Path and observations live on different grids")
    full = X.full()[:, 0]
    return full[:-1], full[1:], Y.values[:, 0]


def nlg_sufficient_stats(Y: ObservationSeries, X: LatentPath) -> np.ndarray:
    """(sum (X_j - 2 sin(exp(X_{j-1})))^2, sum (Y_j - X_j)^2)."""
    prev, x, y = _path_arrays(Y, X)
    return np.array([np.sum((x - state_map(prev)) ** 2), np.sum((y - x) ** 2)])


def nlg_mstep(s, n: int) -> tuple[float, float]:
    """Variance updates S/n, floored."""
    if n < 1:
        raise ContractViolation(f"n must be >= 1, got {n}")
    s = np.asarray(s, dtype=float)
    return floor_variance(s[0] / n, "sigma_x^2"), floor_variance(s[1] / n, "sigma_y^2")


def nlg_derivatives(Y: ObservationSeries, X: LatentPath, theta: ParameterVector):
    """Gradient and hessian of the complete log-likelihood in (sigma_x^2, sigma_y^2)."""
    n = Y.n
    s_x, s_y = nlg_sufficient_stats(Y, X)
    v_x, v_y = theta["sigma_x"] ** 2, theta["sigma_y"] ** 2
    grad = np.array(
        [
            -n / (2.0 * v_x) + s_x / (2.0 * v_x**2),
            -n / (2.0 * v_y) + s_y / (2.0 * v_y**2),
        ]
    )
    hess = np.diag(
        [
            n / (2.0 * v_x**2) - s_x / v_x**3,
            n / (2.0 * v_y**2) - s_y / v_y**3,
        ]
    )
    return grad, hess


class NonlinearGaussianModel(StateSpaceModel):
    """Parameters are the standard deviations sigma_x, sigma_y; X_0 = 0."""

    parameter_names = ("sigma_x", "sigma_y")
    positive = (True, True)
    has_transition_density = True
    has_derivatives = True

    def __init__(self, x0: float = 0.0) -> None:
        self.x0 = float(x0)

    def __repr__(self) -> str:
        return f"NonlinearGaussianModel(x0={self.x0})"

    def sample_initial(self, rng, size):
        return np.full((size, 1), self.x0)

    def simulate_transition(self, states, tau_prev, tau_next, theta, rng):
        return state_map(states) + theta["sigma_x"] * rng.standard_normal(states.shape)

    def transition_logdensity(self, x_next, x_prev, tau_prev, tau_next, theta):
        return stats.norm.logpdf(x_next, loc=state_map(x_prev), scale=theta["sigma_x"]).sum(axis=-1)

    def obs_logdensity(self, y, states, theta):
        return stats.norm.logpdf(y, loc=states, scale=theta["sigma_y"]).sum(axis=-1)

    def simulate_obs(self, states, theta, rng):
        return states + theta["sigma_y"] * rng.standard_normal(states.shape)

    def sufficient_stats(self, Y, X):
        return nlg_sufficient_stats(Y, X)

    def mstep(self, s, grid: TimeGrid) -> ParameterVector:
        v_x, v_y = nlg_mstep(s, grid.n)
        return self.parameters(sigma_x=np.sqrt(v_x), sigma_y=np.sqrt(v_y))

    def complete_derivatives(self, Y, X, theta):
        return nlg_derivatives(Y, X, theta)

    def derivative_jacobian(self, theta):
        # d sigma / d sigma^2
        return 1.0 / (2.0 * theta.values)
