"""
bayes.py  (Bayesian comparison samplers)

- Metropolis-within-Gibbs for the nonlinear Gaussian model, using blind
  forward block proposals for the latent path and a non-central
  parametrisation X* = X / sigma_x while the variances are updated.
- Particle marginal Metropolis-Hastings (pseudo-marginal MH) for any model,
  driven by the bootstrap-filter likelihood estimate.
- Gelman-Rubin potential scale reduction for several chains.

Both samplers propose on the log scale for positive parameters and adapt
their random-walk scales by Robbins-Monro toward a target acceptance rate,
freezing the adaptation halfway through the run.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import stats

from .const import (
    ADAPTATION_DECAY,
    ADAPTATION_FREEZE_FRACTION,
    DEFAULT_GIBBS_STEP,
    DEFAULT_GIBBS_TARGET_ACCEPTANCE,
    DEFAULT_PMM_STEP,
    DEFAULT_PMM_TARGET_ACCEPTANCE,
)
from .exceptions import ChainInitializationError, ContractViolation
from .filters import bootstrap_loglik
from .model import ObservationSeries, ParameterVector, StateSpaceModel
from .nonlinear_gaussian import state_map

_LOGGER = logging.getLogger(__name__)

PRIOR_UNIFORM = "uniform"
PRIOR_FLAT_LOG = "flat-log"


# ---------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class Prior:
    family: str = PRIOR_UNIFORM
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self) -> None:
        if self.family == PRIOR_UNIFORM:
            if self.lo is None or self.hi is None or not self.lo < self.hi:
                raise ContractViolation(f"Uniform prior needs lo < hi, got ({self.lo}, {self.hi})")
        elif self.family != PRIOR_FLAT_LOG:
            raise ContractViolation(f"Unknown prior family: '{self.family}'")

    def logpdf(self, value: float) -> float:
        if self.family == PRIOR_UNIFORM:
            if self.lo <= value <= self.hi:
                return -float(np.log(self.hi - self.lo))
            return -np.inf
        # flat on log(value): density 1/value on the natural scale
        return -float(np.log(value)) if value > 0 else -np.inf


@dataclass(frozen=True)
class PriorSpec:
    """Independent priors per parameter name."""

    priors: Mapping[str, Prior] = field(default_factory=dict)

    @classmethod
    def uniform(cls, **bounds: tuple[float, float]) -> PriorSpec:
        return cls({name: Prior(PRIOR_UNIFORM, lo, hi) for name, (lo, hi) in bounds.items()})

    def component(self, name: str, value: float) -> float:
        prior = self.priors.get(name)
        if prior is None:
            return 0.0
        return prior.logpdf(value)

    def logpdf(self, theta) -> float:
        total = 0.0
        for name, value in theta.as_dict().items():
            total += self.component(name, value)
            if total == -np.inf:
                break
        return total


NLG_GIBBS_PRIORS = PriorSpec.uniform(sigma_x=(0.1, 15.0), sigma_y=(0.1, 15.0))


# ---------------------------------------------------------------------
# Chain containers
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChainState:
    theta: ParameterVector
    path: np.ndarray | None = None  # latent path at t_1..t_n, Gibbs only
    loglik: float | None = None  # likelihood estimate of theta, PMM only
    iteration: int = 0
    log_scales: np.ndarray = field(default_factory=lambda: np.zeros(1))
    accepted: tuple[bool, ...] = ()


@dataclass
class ChainResult:
    parameter_names: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)
    final_state: ChainState | None = None
    wall_time: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def samples(self, burn_in: float = 0.5) -> np.ndarray:
        """(T, p) draws after discarding a fraction of the chain."""
        draws = np.array([[row[name] for name in self.parameter_names] for row in self.rows])
        return draws[int(burn_in * len(draws)) :]

    def posterior_mean(self, burn_in: float = 0.5) -> np.ndarray:
        return self.samples(burn_in).mean(axis=0)

    def posterior_sd(self, burn_in: float = 0.5) -> np.ndarray:
        return self.samples(burn_in).std(axis=0, ddof=1)

    def acceptance_rate(self, column: str = "accepted") -> float:
        return float(np.mean([row[column] for row in self.rows]))


def _robbins_monro(log_scale: float, accepted: bool, target: float, t: int, freeze_at: int) -> float:
    if t >= freeze_at:
        return log_scale
    return log_scale + (float(accepted) - target) / (t + 1) ** ADAPTATION_DECAY


def _accept(log_ratio: float, rng: np.random.Generator) -> bool:
    if np.isnan(log_ratio):
        return False
    return bool(np.log(rng.random()) < log_ratio)


# ---------------------------------------------------------------------
# Gibbs sampler for the nonlinear Gaussian model
# ---------------------------------------------------------------------


def _with_x0(X, x0: float) -> np.ndarray:
    return np.concatenate([[x0], np.asarray(X, dtype=float).reshape(-1)])


def gibbs_conditional_logdensities(
    which: str,
    Y,
    X,
    sigma_x: float,
    sigma_y: float,
    priors: PriorSpec | None = None,
    *,
    x0: float = 0.0,
) -> float:
    """Log of the Gibbs full conditional for 'sigma_x', 'sigma_y' or 'x', up to a constant.

    Y and X are the n values at the sampling times; X_0 = x0 is prepended.
    """
    if sigma_x <= 0 or sigma_y <= 0:
        raise ContractViolation(f"Noise scales must be > 0, got ({sigma_x}, {sigma_y})")
    y = np.asarray(Y, dtype=float).reshape(-1)
    full = _with_x0(X, x0)
    prev, x = full[:-1], full[1:]
    n = y.size
    priors = priors or PriorSpec()
    s_x = np.sum((x - state_map(prev)) ** 2)
    s_y = np.sum((y - x) ** 2)

    if which == "sigma_x":
        return priors.component("sigma_x", sigma_x) - n * np.log(sigma_x) - s_x / (2 * sigma_x**2)
    if which == "sigma_y":
        return priors.component("sigma_y", sigma_y) - n * np.log(sigma_y) - s_y / (2 * sigma_y**2)
    if which == "x":
        return float(
            -n * np.log(sigma_x * sigma_y) - s_x / (2 * sigma_x**2) - s_y / (2 * sigma_y**2)
        )
    raise ContractViolation(f"Unknown conditional: '{which}'")


def blind_forward_path(n: int, sigma_x: float, rng: np.random.Generator, *, x0: float = 0.0) -> np.ndarray:
    """Simulate X_1..X_n from the state equation alone."""
    path = np.empty(n)
    x = x0
    for j, noise in enumerate(rng.standard_normal(n)):
        x = state_map(x) + sigma_x * noise
        path[j] = x
    return path


def _obs_loglik(Y, X, sigma_y: float) -> float:
    return float(np.sum(stats.norm.logpdf(Y, loc=X, scale=sigma_y)))


def metropolis_within_gibbs_step(
    state: ChainState,
    Y,
    priors: PriorSpec,
    rng: np.random.Generator,
    *,
    x0: float = 0.0,
    propose_path: Callable | None = None,
) -> ChainState:
    """One sweep: latent block, then sigma_x and sigma_y under X* = X / sigma_x.

    state.log_scales holds the log random-walk steps for (sigma_x, sigma_y).
    """
    y = np.asarray(Y, dtype=float).reshape(-1)
    n = y.size
    sigma_x, sigma_y = state.theta["sigma_x"], state.theta["sigma_y"]
    path = np.asarray(state.path, dtype=float)

    # (i) blind forward block proposal; prior terms cancel, leaving the likelihood ratio
    if propose_path is None:
        proposal = blind_forward_path(n, sigma_x, rng, x0=x0)
    else:
        proposal = np.asarray(propose_path(state, rng), dtype=float)
    log_ratio = _obs_loglik(y, proposal, sigma_y) - _obs_loglik(y, path, sigma_y)
    acc_x = _accept(log_ratio, rng)
    if acc_x:
        path = proposal

    # (ii) non-central coordinates
    x_star = path / sigma_x

    def target_sigma_x(s: float) -> float:
        prior = priors.component("sigma_x", s)
        if prior == -np.inf:
            return -np.inf
        # joint density of (X* , Y) in sigma_x: X = s X* has Jacobian s^n
        return (
            gibbs_conditional_logdensities("x", y, s * x_star, s, sigma_y, x0=x0)
            + n * np.log(s)
            + prior
        )

    # (iii) sigma_x then sigma_y, log-scale random walks
    step_x, step_y = np.exp(state.log_scales[:2])
    prop_x = sigma_x * np.exp(step_x * rng.standard_normal())
    log_ratio = target_sigma_x(prop_x) - target_sigma_x(sigma_x) + np.log(prop_x / sigma_x)
    acc_sx = _accept(log_ratio, rng)
    if acc_sx:
        sigma_x = prop_x

    path = sigma_x * x_star

    prop_y = sigma_y * np.exp(step_y * rng.standard_normal())
    if priors.component("sigma_y", prop_y) == -np.inf:
        log_ratio = -np.inf
    else:
        log_ratio = (
            gibbs_conditional_logdensities("sigma_y", y, path, sigma_x, prop_y, priors, x0=x0)
            - gibbs_conditional_logdensities("sigma_y", y, path, sigma_x, sigma_y, priors, x0=x0)
            + np.log(prop_y / sigma_y)
        )
    acc_sy = _accept(log_ratio, rng)
    if acc_sy:
        sigma_y = prop_y

    # (iv) back to the original coordinates
    path = sigma_x * x_star
    return replace(
        state,
        theta=state.theta.replace(sigma_x=sigma_x, sigma_y=sigma_y),
        path=path,
        iteration=state.iteration + 1,
        accepted=(acc_x, acc_sx, acc_sy),
    )


def gibbs_log_posterior(Y, X, sigma_x: float, sigma_y: float, priors: PriorSpec, *, x0: float = 0.0) -> float:
    return (
        gibbs_conditional_logdensities("x", Y, X, sigma_x, sigma_y, x0=x0)
        + priors.component("sigma_x", sigma_x)
        + priors.component("sigma_y", sigma_y)
    )


def gibbs_run(
    Y: ObservationSeries,
    theta0: ParameterVector,
    iterations: int,
    rng: np.random.Generator,
    *,
    priors: PriorSpec = NLG_GIBBS_PRIORS,
    step: float = DEFAULT_GIBBS_STEP,
    target_acceptance: float = DEFAULT_GIBBS_TARGET_ACCEPTANCE,
    x0: float = 0.0,
) -> ChainResult:
    """Metropolis-within-Gibbs chain for (sigma_x, sigma_y, X)."""
    if iterations < 1:
        raise ContractViolation(f"Chain length must be >= 1, got {iterations}")
    y = Y.values[:, 0]
    started = time.perf_counter()
    state = ChainState(
        theta=theta0,
        path=blind_forward_path(y.size, theta0["sigma_x"], rng, x0=x0),
        log_scales=np.log(np.full(2, step)),
    )
    freeze_at = int(ADAPTATION_FREEZE_FRACTION * iterations)
    result = ChainResult(tuple(theta0.names))

    for t in range(iterations):
        state = metropolis_within_gibbs_step(state, y, priors, rng, x0=x0)
        _, acc_sx, acc_sy = state.accepted
        scales = np.array(
            [
                _robbins_monro(state.log_scales[0], acc_sx, target_acceptance, t, freeze_at),
                _robbins_monro(state.log_scales[1], acc_sy, target_acceptance, t, freeze_at),
            ]
        )
        state = replace(state, log_scales=scales)
        result.rows.append(
            {
                "iteration": t + 1,
                **state.theta.as_dict(),
                "log_posterior": gibbs_log_posterior(
                    y, state.path, state.theta["sigma_x"], state.theta["sigma_y"], priors, x0=x0
                ),
                "accepted_x": int(state.accepted[0]),
                "accepted_sigma_x": int(acc_sx),
                "accepted_sigma_y": int(acc_sy),
            }
        )

    result.final_state = state
    result.wall_time = time.perf_counter() - started
    _LOGGER.info(
        "Gibbs chain done: %d sweeps in %.1fs, final %s", iterations, result.wall_time, state.theta
    )
    return result


# ---------------------------------------------------------------------
# Particle marginal Metropolis-Hastings
# ---------------------------------------------------------------------

LoglikEstimator = Callable[[ParameterVector, np.random.Generator], float]


def _log_jacobian(theta: ParameterVector) -> float:
    """log |d natural / d working| for the log map of positive components."""
    mask = np.asarray(theta.positive, dtype=bool)
    return float(np.sum(np.log(theta.values[mask])))


def pmm_run(
    model: StateSpaceModel,
    Y: ObservationSeries,
    priors: PriorSpec,
    theta0: ParameterVector,
    M: int,
    iterations: int,
    target_acceptance: float,
    rng: np.random.Generator,
    *,
    M_bar: int | None = None,
    step: float | np.ndarray = DEFAULT_PMM_STEP,
    loglik_estimator: LoglikEstimator | None = None,
) -> ChainResult:
    """Pseudo-marginal random-walk MH on the working scale.

    The incumbent's likelihood estimate is kept and never recomputed; the
    estimator runs exactly once per proposal, including proposals outside
    the prior support, which are then rejected with probability one.
    """
    if iterations < 1:
        raise ContractViolation(f"Chain length must be >= 1, got {iterations}")
    if not 0 < target_acceptance < 1:
        raise ContractViolation(f"Target acceptance must lie in (0, 1), got {target_acceptance}")
    if loglik_estimator is None:
        threshold = M if M_bar is None else M_bar

        def loglik_estimator(theta, rng):
            return bootstrap_loglik(model, Y, theta, M, threshold, rng)

    started = time.perf_counter()
    loglik = float(loglik_estimator(theta0, rng))
    if not np.isfinite(loglik):
        raise ChainInitializationError(loglik)

    base = np.broadcast_to(np.asarray(step, dtype=float), (len(theta0),)).copy()
    state = ChainState(theta=theta0, loglik=loglik, log_scales=np.zeros(1))
    log_target = loglik + priors.logpdf(theta0) + _log_jacobian(theta0)
    freeze_at = int(ADAPTATION_FREEZE_FRACTION * iterations)
    result = ChainResult(tuple(theta0.names))

    for t in range(iterations):
        working = state.theta.to_working()
        scale = np.exp(state.log_scales[0])
        proposal_w = working + scale * base * rng.standard_normal(working.size)
        try:
            proposal = state.theta.with_working(proposal_w)
        except ContractViolation:
            proposal = None

        accepted = False
        prop_loglik = np.nan
        if proposal is not None:
            log_prior = priors.logpdf(proposal)
            prop_loglik = float(loglik_estimator(proposal, rng))
            if log_prior > -np.inf:
                prop_target = prop_loglik + log_prior + _log_jacobian(proposal)
                accepted = _accept(prop_target - log_target, rng)

        if accepted:
            state = replace(state, theta=proposal, loglik=prop_loglik)
            log_target = prop_target

        state = replace(
            state,
            iteration=t + 1,
            accepted=(accepted,),
            log_scales=np.array(
                [_robbins_monro(state.log_scales[0], accepted, target_acceptance, t, freeze_at)]
            ),
        )
        result.rows.append(
            {
                "iteration": t + 1,
                **state.theta.as_dict(),
                "loglik": state.loglik,
                "accepted": int(accepted),
            }
        )
        if (t + 1) % 500 == 0:
            _LOGGER.debug(
                f"🔧 PMM {t + 1}/{iterations}: acceptance {result.acceptance_rate():.3f}, "
                f"scale {np.exp(state.log_scales[0]):.3g}"
            )

    result.final_state = state
    result.wall_time = time.perf_counter() - started
    _LOGGER.info(
        "PMM chain done: %d iterations in %.1fs, acceptance %.3f",
        iterations,
        result.wall_time,
        result.acceptance_rate(),
    )
    return result


# ---------------------------------------------------------------------
# Convergence diagnostic
# ---------------------------------------------------------------------


def gelman_rubin(chains) -> np.ndarray:
    """Potential scale reduction per parameter for chains shaped (C, T) or (C, T, p)."""
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 2:
        chains = chains[:, :, None]
    n_chains, length, _ = chains.shape
    if n_chains < 2 or length < 2:
        raise ContractViolation("Need at least two chains of length >= 2")
    within = chains.var(axis=1, ddof=1).mean(axis=0)
    between = chains.mean(axis=1).var(axis=0, ddof=1)
    pooled = (length - 1) / length * within + between
    return np.sqrt(pooled / within)
