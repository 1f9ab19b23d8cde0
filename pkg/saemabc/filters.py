"""
filters.py  (ABC-SMC and bootstrap particle filters)

What this module does
---------------------
- run_abc_smc: particles propagated blindly through the model, one pseudo
  observation simulated per particle, weighted by an ABC kernel.
- run_bootstrap: same propagation, weighted by the observation density; also
  returns the log-likelihood estimate.
- stratified_resample / ess: resampling and its trigger.
- sample_genealogy_path: draws one particle at the last time and follows its
  ancestors back, returning the whole fine-grid path.
- rejection_abc_path: whole-series rejection sampling.

Both filters run through the same loop (_run_particle_filter); they differ
only in the weighting function and whether pseudo observations are drawn.

Random streams
--------------
One child generator per time step is spawned from the rng handed in (plus one
for the initial draws). Within a step the transition draws come first, then
pseudo observations, then resampling uniforms, so re-running the transitions
of a step with its stream reproduces the stored states exactly.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .const import WEIGHT_SUM_TOLERANCE
from .exceptions import AcceptanceFailure, ContractViolation, DegenerateFilterError
from .helpers import log_normalize, spawn_streams
from .kernels import KernelSpec, euclidean_distance, identity_summary, kernel_log_weight
from .model import (
    LatentPath,
    ObservationSeries,
    ParameterVector,
    StateSpaceModel,
    TimeGrid,
    simulate_path,
)

_LOGGER = logging.getLogger(__name__)


# ---------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ParticleSystem:
    """Everything a filter run stores, indexed by time step j = 0..n-1.

    ancestors[j, m] is the index, among the particles of step j-1 (or the
    initial draws for j = 0), of the parent of particle m at step j. It is the
    identity unless step j-1 resampled.
    """

    M: int
    grid: TimeGrid
    initial_states: np.ndarray  # (M, d_x)
    substates: np.ndarray  # (n, R, M, d_x), last substep is the sampling time
    log_weights: np.ndarray  # (n, M) unnormalised W
    weights: np.ndarray  # (n, M) normalised, before any reset
    prior_weights: np.ndarray  # (n, M) carried weights the step started from
    ancestors: np.ndarray  # (n, M)
    resampled: np.ndarray  # (n,) bool
    pseudo_observations: np.ndarray | None = None  # (n, M, d_y), ABC only

    @property
    def n(self) -> int:
        return self.substates.shape[0]

    @property
    def states(self) -> np.ndarray:
        """Particles at the sampling times, (n, M, d_x)."""
        return self.substates[:, -1]

    @property
    def post_weights(self) -> np.ndarray:
        """Weights after the optional reset: uniform where a step resampled."""
        post = self.weights.copy()
        post[self.resampled] = 1.0 / self.M
        return post

    def filtering_mean(self, j: int) -> np.ndarray:
        """Weighted particle mean at step j under the filtering weights."""
        return np.einsum("m,md->d", self.weights[j], self.states[j])

    def predictive_mean(self, j: int) -> np.ndarray:
        """Particle mean at step j under the weights carried into the step."""
        return np.einsum("m,md->d", self.prior_weights[j], self.states[j])


@dataclass(frozen=True)
class FilterDiagnostics:
    ess: np.ndarray  # (n,) in [1, M]
    distinct: np.ndarray  # (n,) in [1, M]
    resampled: np.ndarray  # (n,) bool
    M: int
    loglik: float | None = None  # bootstrap only

    @property
    def resample_events(self) -> np.ndarray:
        """1-based time indices at which resampling happened."""
        return np.flatnonzero(self.resampled) + 1

    @property
    def ess_mean(self) -> float:
        return float(np.mean(self.ess))

    @property
    def distinct_mean(self) -> float:
        return float(np.mean(self.distinct))

    @property
    def final_ess(self) -> float:
        return float(self.ess[-1])

    @property
    def distinct_drops(self) -> int:
        """Number of time steps where fewer than M distinct particles remain."""
        return int(np.sum(self.distinct < self.M))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "time_index": np.arange(1, self.ess.size + 1),
                "ess": self.ess,
                "distinct_count": self.distinct,
                "resampled": self.resampled.astype(int),
            }
        )


# ---------------------------------------------------------------------
# Weights and resampling
# ---------------------------------------------------------------------


def ess(normalized_weights) -> float:
    """Effective sample size 1 / sum(w^2)."""
    w = np.asarray(normalized_weights, dtype=float)
    total = w.sum()
    if np.any(w < 0) or abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise ContractViolation(f"Weights are not normalised (sum = {total!r})")
    return float(np.clip(1.0 / np.sum(w**2), 1.0, w.size))


def stratified_resample(normalized_weights, rng: np.random.Generator) -> np.ndarray:
    """One uniform per stratum ((m-1)/M, m/M], inverted through the weight CDF."""
    w = np.asarray(normalized_weights, dtype=float)
    M = w.size
    # 1 - U lies in (0, 1], so no draw sits on a stratum's closed left edge
    u = (np.arange(M) + (1.0 - rng.random(M))) / M
    cdf = np.cumsum(w)
    idx = np.searchsorted(cdf, u * cdf[-1], side="left")
    return np.minimum(idx, M - 1)


def _distinct_count(states: np.ndarray) -> int:
    return int(np.unique(states, axis=0).shape[0])


# ---------------------------------------------------------------------
# Shared filter loop
# ---------------------------------------------------------------------

WeightFn = Callable[[np.ndarray, np.ndarray, np.ndarray | None], np.ndarray]


def _run_particle_filter(
    model: StateSpaceModel,
    Y: ObservationSeries,
    theta: ParameterVector,
    M: int,
    M_bar: int,
    weigh: WeightFn,
    rng: np.random.Generator,
    *,
    simulate_pseudo: bool,
) -> tuple[ParticleSystem, FilterDiagnostics]:
    if M < 1:
        raise ContractViolation(f"Need at least one particle, got M={M}")
    if not 0 <= M_bar <= M:
        raise ContractViolation(f"Resampling threshold M_bar={M_bar} must lie in [0, M={M}]")

    grid = Y.grid
    n, R = grid.n, grid.substeps
    taus = grid.fine_times
    d_x = model.state_dim

    streams = spawn_streams(rng, n + 1)
    initial = model.sample_initial(streams[0], M)

    substates = np.empty((n, R, M, d_x))
    log_weights = np.empty((n, M))
    weights = np.empty((n, M))
    prior_weights = np.empty((n, M))
    ancestors = np.empty((n, M), dtype=np.intp)
    resampled = np.zeros(n, dtype=bool)
    ess_t = np.empty(n)
    distinct_t = np.empty(n, dtype=np.intp)
    pseudo = np.empty((n, M, model.obs_dim)) if simulate_pseudo else None

    identity = np.arange(M)
    parents = identity
    previous = initial
    carried = np.full(M, 1.0 / M)
    loglik = 0.0

    for j in range(n):
        step_rng = streams[j + 1]
        ancestors[j] = parents
        prior_weights[j] = carried

        x = previous[parents]
        for r in range(R):
            i = j * R + r
            x = model.simulate_transition(x, taus[i], taus[i + 1], theta, step_rng)
            substates[j, r] = x

        y_star = None
        if simulate_pseudo:
            y_star = model.simulate_obs(x, theta, step_rng)
            pseudo[j] = y_star

        with np.errstate(divide="ignore"):
            log_w = np.log(carried) + np.asarray(weigh(Y.values[j], x, y_star), dtype=float)
        w, log_total = log_normalize(log_w)
        if not np.isfinite(log_total):
            _LOGGER.debug(f"❌ All weights vanished at time index {j + 1}")
            raise DegenerateFilterError(j + 1)

        log_weights[j] = log_w
        weights[j] = w
        loglik += log_total
        ess_t[j] = ess(w)

        # no resampling after the last observation: the path index is drawn from w_n
        if j < n - 1 and ess_t[j] < M_bar:
            idx = stratified_resample(w, step_rng)
            resampled[j] = True
            distinct_t[j] = _distinct_count(x[idx])
            parents = idx
            carried = np.full(M, 1.0 / M)
        else:
            distinct_t[j] = _distinct_count(x)
            parents = identity
            carried = w
        previous = x

    ps = ParticleSystem(
        M=M,
        grid=grid,
        initial_states=initial,
        substates=substates,
        log_weights=log_weights,
        weights=weights,
        prior_weights=prior_weights,
        ancestors=ancestors,
        resampled=resampled,
        pseudo_observations=pseudo,
    )
    diag = FilterDiagnostics(
        ess=ess_t,
        distinct=distinct_t,
        resampled=resampled.copy(),
        M=M,
        loglik=None if simulate_pseudo else float(loglik),
    )
    _LOGGER.debug(
        f"✅ Filter done: M={M}, mean ESS={diag.ess_mean:.1f}, "
        f"mean distinct={diag.distinct_mean:.1f}, resamples={int(resampled.sum())}"
    )
    return ps, diag


# ---------------------------------------------------------------------
# Public filters
# ---------------------------------------------------------------------


def run_abc_smc(
    model: StateSpaceModel,
    Y: ObservationSeries,
    theta: ParameterVector,
    M: int,
    M_bar: int,
    delta: float,
    kernel: KernelSpec,
    rng: np.random.Generator,
) -> tuple[ParticleSystem, FilterDiagnostics]:
    """ABC-SMC filter with a threshold shared by all time points."""
    if not delta > 0:
        raise ContractViolation(f"Kernel threshold must be > 0, got {delta!r}")

    def weigh(y, states, y_star):
        return kernel_log_weight(kernel, y, y_star, delta)

    return _run_particle_filter(model, Y, theta, M, M_bar, weigh, rng, simulate_pseudo=True)


def run_bootstrap(
    model: StateSpaceModel,
    Y: ObservationSeries,
    theta: ParameterVector,
    M: int,
    M_bar: int,
    rng: np.random.Generator,
) -> tuple[ParticleSystem, FilterDiagnostics]:
    """Bootstrap filter weighting by the observation density."""

    def weigh(y, states, y_star):
        return model.obs_logdensity(y, states, theta)

    return _run_particle_filter(model, Y, theta, M, M_bar, weigh, rng, simulate_pseudo=False)


def bootstrap_loglik(
    model: StateSpaceModel,
    Y: ObservationSeries,
    theta: ParameterVector,
    M: int,
    M_bar: int,
    rng: np.random.Generator,
) -> float:
    """Bootstrap log-likelihood estimate; -inf when the filter degenerates."""
    try:
        _, diag = run_bootstrap(model, Y, theta, M, M_bar, rng)
    except DegenerateFilterError as err:
        _LOGGER.debug(f"⚠️ Likelihood estimate degenerate at {theta}: {err}")
        return -np.inf
    return diag.loglik


# ---------------------------------------------------------------------
# Path extraction
# ---------------------------------------------------------------------


def sample_genealogy_path(ps: ParticleSystem, rng: np.random.Generator) -> LatentPath:
    """Draw m' from the final weights and trace its lineage back to x_0."""
    n, R, M, d_x = ps.substates.shape
    b = int(rng.choice(M, p=ps.weights[-1]))
    values = np.empty((n * R, d_x))
    for j in range(n - 1, -1, -1):
        values[j * R : (j + 1) * R] = ps.substates[j, :, b]
        b = int(ps.ancestors[j, b])
    return LatentPath(ps.initial_states[b], values, ps.grid)


def rejection_abc_path(
    model: StateSpaceModel,
    Y: ObservationSeries,
    theta: ParameterVector,
    delta: float,
    max_attempts: int,
    rng: np.random.Generator,
    *,
    distance: Callable = euclidean_distance,
    summary: Callable = identity_summary,
) -> LatentPath:
    """Simulate whole series until rho(eta(Y*), eta(Y)) <= delta."""
    if max_attempts < 1:
        raise ContractViolation(f"max_attempts must be >= 1, got {max_attempts}")
    if delta < 0:
        raise ContractViolation(f"Threshold must be >= 0, got {delta!r}")

    target = summary(Y.values.reshape(-1))
    best = np.inf
    for attempt in range(1, max_attempts + 1):
        path = simulate_path(model, Y.grid, theta, rng)
        y_star = model.simulate_obs(path.at_sampling_times(), theta, rng)
        dist = float(distance(summary(y_star.reshape(-1)), target))
        best = min(best, dist)
        if dist <= delta:
            _LOGGER.debug(f"✅ Rejection ABC accepted after {attempt} attempt(s), distance {dist:.4g}")
            return path
    raise AcceptanceFailure(max_attempts, best)
