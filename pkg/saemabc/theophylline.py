"""
theophylline.py  (one-compartment pharmacokinetic SDE)

    dX_t = (Dose Ka Ke / Cl e^{-Ka t} - Ke X_t) dt + sigma sqrt(X_t) dW_t
    Y_j  = X_{t_j} + sigma_eps eps_j

Ka, Dose and X_0 are known. The SDE has no closed-form transition density, so
everything here works with the Euler-Maruyama scheme on the fine grid:

    x_i = x_{i-1} + drift(x_{i-1}, tau_{i-1}) h + sigma sqrt(h x_{i-1}^+) Z_i

with x^+ = max(x, 0) keeping the diffusion defined when a step goes negative.

Sufficient statistics
---------------------
Dividing the Euler increment by sqrt(x_{i-1}) gives a linear regression

    V_i = (x_i - x_{i-1}) / sqrt(x_{i-1}) = beta_1 C_i1 + beta_2 C_i2 + noise
    C_i1 = Dose Ka e^{-Ka tau_{i-1}} h / sqrt(x_{i-1}),  C_i2 = -sqrt(x_{i-1}) h

with beta = (Ke/Cl, Ke). The statistic is (S_eps, S_sigma2, beta_1, beta_2)
where S_sigma2 is the residual sum of that regression divided by h and
S_eps = sum (y_j - x_j)^2. Transitions that start at x <= 0 have no Euler
density and are left out of the regression; S_sigma2 is then rescaled by
N / kept so the M-step divisor N stays the per-transition average.

Derivatives are taken in (Ke, Cl, sigma^2, sigma_eps^2).
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import linalg, stats

from .const import REGRESSION_CONDITION_LIMIT, THEO_DOSE, THEO_KA, THEO_X0
from .exceptions import ContractViolation, MStepDomainError, SingularRegressionError
from .helpers import floor_variance
from .model import LatentPath, ObservationSeries, ParameterVector, StateSpaceModel, TimeGrid

_LOGGER = logging.getLogger(__name__)


# ---------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------


def input_rate(tau):
    """Dose Ka e^{-Ka tau}."""
    return THEO_DOSE * THEO_KA * np.exp(-THEO_KA * np.asarray(tau, dtype=float))


def drift(x, tau, ke: float, cl: float):
    return input_rate(tau) * ke / cl - ke * x


def euler_maruyama_transition(x, tau, h: float, theta: ParameterVector, rng):
    """One Euler-Maruyama step of length h from time tau."""
    if not h > 0:
        raise ContractViolation(f"Step size must be > 0, got {h!r}")
    x = np.asarray(x, dtype=float)
    ke, cl, sigma = theta["ke"], theta["cl"], theta["sigma"]
    diffusion = sigma * np.sqrt(h * np.maximum(x, 0.0))
    return x + drift(x, tau, ke, cl) * h + diffusion * rng.standard_normal(x.shape)


def theo_transition_logdensity(x_i, x_prev, tau_prev, h, theta: ParameterVector):
    """Euler Gaussian log density N(x_i; x_prev + drift h, sigma^2 x_prev h)."""
    x_i = np.asarray(x_i, dtype=float)
    x_prev = np.asarray(x_prev, dtype=float)
    ke, cl, sigma = theta["ke"], theta["cl"], theta["sigma"]

    ok = x_prev > 0
    if not np.all(ok):
        _LOGGER.warning(
            "⚠️ Euler density undefined at %d non-positive state(s); returning -inf",
            int(np.sum(~ok)),
        )
    safe_prev = np.where(ok, x_prev, 1.0)
    mean = safe_prev + drift(safe_prev, tau_prev, ke, cl) * h
    var = sigma**2 * safe_prev * h
    logp = -0.5 * np.log(2.0 * np.pi * var) - (x_i - mean) ** 2 / (2.0 * var)
    return np.where(ok, logp, -np.inf)


# ---------------------------------------------------------------------
# Sufficient statistics and M-step
# ---------------------------------------------------------------------


def _transitions(X: LatentPath, grid: TimeGrid):
    """(x_prev, x_next, tau_prev) for every fine step starting at a positive state."""
    full = X.full()[:, 0]
    prev, nxt = full[:-1], full[1:]
    tau_prev = grid.fine_times[:-1]
    keep = prev > 0
    if not np.all(keep):
        _LOGGER.debug(f"⚠️ Dropping {int(np.sum(~keep))} transition(s) from non-positive states")
    return prev[keep], nxt[keep], tau_prev[keep]


def regression_design(X: LatentPath, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Response V and design C of the drift regression."""
    prev, nxt, tau_prev = _transitions(X, grid)
    root = np.sqrt(prev)
    h = grid.h
    V = (nxt - prev) / root
    C = np.column_stack([input_rate(tau_prev) * h / root, -root * h])
    return V, C


def theo_sufficient_stats(Y: ObservationSeries, X: LatentPath, grid: TimeGrid) -> np.ndarray:
    """(S_eps, S_sigma2, beta_1, beta_2)."""
    if grid.N < 2:
        raise ContractViolation(f"Need at least two fine-grid steps, grid has N={grid.N}")
    V, C = regression_design(X, grid)
    if V.size < 2:
        raise SingularRegressionError(np.inf)
    singular = linalg.svdvals(C)
    condition = np.inf if singular[-1] == 0 else (singular[0] / singular[-1]) ** 2
    if condition > REGRESSION_CONDITION_LIMIT:
        raise SingularRegressionError(condition)

    beta, *_ = linalg.lstsq(C, V)
    resid = V - C @ beta
    # rescaled to N transitions so theo_mstep divides by the kept count
    s_sigma2 = float(resid @ resid) / grid.h * grid.N / V.size
    s_eps = float(np.sum((Y.values[:, 0] - X.at_sampling_times()[:, 0]) ** 2))
    return np.array([s_eps, s_sigma2, beta[0], beta[1]])


def theo_mstep(stats_vec, n: int, N: int) -> tuple[float, float, float, float]:
    """(Ke, Cl, sigma, sigma_eps) from the running statistic."""
    s_eps, s_sigma2, beta1, beta2 = (float(v) for v in stats_vec)
    sigma = float(np.sqrt(floor_variance(s_sigma2 / N, "sigma^2")))
    sigma_eps = float(np.sqrt(floor_variance(s_eps / n, "sigma_eps^2")))

    partial = {"sigma": sigma, "sigma_eps": sigma_eps}
    if beta2 <= 0:
        raise MStepDomainError("ke", beta2, partial)
    partial["ke"] = beta2
    if beta1 <= 0:
        raise MStepDomainError("cl", beta2 / beta1 if beta1 else np.inf, partial)
    return beta2, beta2 / beta1, sigma, sigma_eps


# ---------------------------------------------------------------------
# Fisher derivatives
# ---------------------------------------------------------------------


def theo_fisher_derivatives(Y: ObservationSeries, X: LatentPath, theta: ParameterVector):
    """Gradient and hessian of the Euler complete log-likelihood.

    Coordinates are (Ke, Cl, sigma^2, sigma_eps^2). sigma_eps^2 only couples
    with itself.
    """
    grid = X.grid
    h = grid.h
    ke, cl = theta["ke"], theta["cl"]
    v, v_eps = theta["sigma"] ** 2, theta["sigma_eps"] ** 2

    x, nxt, tau_prev = _transitions(X, grid)
    N = x.size
    A = input_rate(tau_prev)
    u = x - A / cl  # drift = -ke * u
    z = nxt - x + h * ke * u
    dz_cl = ke * A / cl**2  # dz/dCl divided by h

    s_eps = float(np.sum((Y.values[:, 0] - X.at_sampling_times()[:, 0]) ** 2))
    n = Y.n
    q = np.sum(z**2 / x) / h

    grad = np.array(
        [
            -np.sum(z * u / x) / v,
            -np.sum(z * dz_cl / x) / v,
            -N / (2.0 * v) + q / (2.0 * v**2),
            -n / (2.0 * v_eps) + s_eps / (2.0 * v_eps**2),
        ]
    )

    d_ke_ke = -h * np.sum(u**2 / x) / v
    d_cl_cl = -np.sum(dz_cl * (h * dz_cl - 2.0 * z / cl) / x) / v
    d_ke_cl = -np.sum((A / cl**2) * (h * ke * u + z) / x) / v
    d_v_ke = np.sum(z * u / x) / v**2
    d_v_cl = np.sum(z * dz_cl / x) / v**2
    d_v_v = N / (2.0 * v**2) - q / v**3
    d_eps = n / (2.0 * v_eps**2) - s_eps / v_eps**3

    hess = np.array(
        [
            [d_ke_ke, d_ke_cl, d_v_ke, 0.0],
            [d_ke_cl, d_cl_cl, d_v_cl, 0.0],
            [d_v_ke, d_v_cl, d_v_v, 0.0],
            [0.0, 0.0, 0.0, d_eps],
        ]
    )
    return grad, hess


# ---------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------


class TheophyllineModel(StateSpaceModel):
    """Parameters (Ke, Cl, sigma, sigma_eps); Ka, Dose and X_0 are fixed."""

    parameter_names = ("ke", "cl", "sigma", "sigma_eps")
    positive = (True, True, True, True)
    has_transition_density = True
    has_derivatives = True

    ka = THEO_KA
    dose = THEO_DOSE
    x0 = THEO_X0

    def __repr__(self) -> str:
        return "TheophyllineModel()"

    def sample_initial(self, rng, size):
        return np.full((size, 1), self.x0)

    def simulate_transition(self, states, tau_prev, tau_next, theta, rng):
        return euler_maruyama_transition(states, tau_prev, tau_next - tau_prev, theta, rng)

    def transition_logdensity(self, x_next, x_prev, tau_prev, tau_next, theta):
        h = np.asarray(tau_next) - np.asarray(tau_prev)
        return theo_transition_logdensity(x_next[:, 0], x_prev[:, 0], tau_prev, h, theta)

    def obs_logdensity(self, y, states, theta):
        return stats.norm.logpdf(y, loc=states, scale=theta["sigma_eps"]).sum(axis=-1)

    def simulate_obs(self, states, theta, rng):
        return states + theta["sigma_eps"] * rng.standard_normal(states.shape)

    def sufficient_stats(self, Y, X):
        return theo_sufficient_stats(Y, X, X.grid)

    def mstep(self, s, grid: TimeGrid) -> ParameterVector:
        ke, cl, sigma, sigma_eps = theo_mstep(s, grid.n, grid.N)
        return self.parameters(ke=ke, cl=cl, sigma=sigma, sigma_eps=sigma_eps)

    def complete_derivatives(self, Y, X, theta):
        return theo_fisher_derivatives(Y, X, theta)

    def derivative_jacobian(self, theta):
        return np.array(
            [1.0, 1.0, 0.5 / theta["sigma"], 0.5 / theta["sigma_eps"]]
        )
