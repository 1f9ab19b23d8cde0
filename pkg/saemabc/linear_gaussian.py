"""Linear Gaussian state-space model with an exact Kalman likelihood."""

from __future__ import annotations

import logging

import numpy as np
from scipy import stats

from .exceptions import ContractViolation, MStepDomainError
from .helpers import floor_variance
from .model import LatentPath, ObservationSeries, ParameterVector, StateSpaceModel, TimeGrid

_LOGGER = logging.getLogger(__name__)

DEFAULT_THETA = {"a": 0.8, "sigma_x": 1.0, "sigma_y": 1.0}


class LinearGaussianTestModel(StateSpaceModel):
    """X_j = a X_{j-1} + sigma_x tau_j,  Y_j = b X_j + sigma_y nu_j.

    b and the law of X_0 ~ N(x0_mean, x0_var) are fixed model settings;
    x0_var = 0 is a point mass.
    """

    parameter_names = ("a", "sigma_x", "sigma_y")
    positive = (False, True, True)
    has_transition_density = True

    def __init__(self, b: float = 1.0, x0_mean: float = 0.0, x0_var: float = 0.0) -> None:
        if x0_var < 0:
            raise ContractViolation(f"Initial variance must be >= 0, got {x0_var!r}")
        self.b = float(b)
        self.x0_mean = float(x0_mean)
        self.x0_var = float(x0_var)

    def __repr__(self) -> str:
        return f"LinearGaussianTestModel(b={self.b}, x0_mean={self.x0_mean}, x0_var={self.x0_var})"

    def default_parameters(self) -> ParameterVector:
        return self.parameters(**DEFAULT_THETA)

    def sample_initial(self, rng, size):
        return self.x0_mean + np.sqrt(self.x0_var) * rng.standard_normal((size, 1))

    def simulate_transition(self, states, tau_prev, tau_next, theta, rng):
        return theta["a"] * states + theta["sigma_x"] * rng.standard_normal(states.shape)

    def transition_logdensity(self, x_next, x_prev, tau_prev, tau_next, theta):
        return stats.norm.logpdf(x_next, loc=theta["a"] * x_prev, scale=theta["sigma_x"]).sum(axis=-1)

    def obs_logdensity(self, y, states, theta):
        return stats.norm.logpdf(y, loc=self.b * states, scale=theta["sigma_y"]).sum(axis=-1)

    def simulate_obs(self, states, theta, rng):
        return self.b * states + theta["sigma_y"] * rng.standard_normal(states.shape)

    def sufficient_stats(self, Y: ObservationSeries, X: LatentPath) -> np.ndarray:
        """(sum x_{j-1}^2, sum x_j x_{j-1}, sum x_j^2, sum (y_j - b x_j)^2)."""
        if X.grid.substeps != 1:
            raise ContractViolation("The linear Gaussian model is defined without sub-steps (R = 1)")
        full = X.full()[:, 0]
        prev, x = full[:-1], full[1:]
        y = Y.values[:, 0]
        return np.array([prev @ prev, x @ prev, x @ x, np.sum((y - self.b * x) ** 2)])

    def mstep(self, s, grid: TimeGrid) -> ParameterVector:
        s_pp, s_xp, s_xx, s_obs = (float(v) for v in s)
        n = grid.n
        sigma_y = float(np.sqrt(floor_variance(s_obs / n, "sigma_y^2")))
        if s_pp <= 0:
            raise MStepDomainError("a", np.nan, {"sigma_y": sigma_y})
        a = s_xp / s_pp
        sigma_x = float(np.sqrt(floor_variance(max(s_xx - a * s_xp, 0.0) / n, "sigma_x^2")))
        return self.parameters(a=a, sigma_x=sigma_x, sigma_y=sigma_y)


def kalman_loglik(model: LinearGaussianTestModel, Y: ObservationSeries, theta) -> float:
    """Exact marginal log-likelihood by the predict/update recursion."""
    a, sigma_x, sigma_y = theta["a"], theta["sigma_x"], theta["sigma_y"]
    if sigma_x <= 0 or sigma_y <= 0:
        raise ContractViolation(f"Noise scales must be > 0, got sigma_x={sigma_x}, sigma_y={sigma_y}")
    q, r, b = sigma_x**2, sigma_y**2, model.b

    m, P = model.x0_mean, model.x0_var
    loglik = 0.0
    for y in Y.values[:, 0]:
        # predict
        m = a * m
        P = a * a * P + q
        # update
        S = b * b * P + r
        loglik += stats.norm.logpdf(y, loc=b * m, scale=np.sqrt(S))
        gain = P * b / S
        m = m + gain * (y - b * m)
        P = (1.0 - gain * b) * P
    return float(loglik)
