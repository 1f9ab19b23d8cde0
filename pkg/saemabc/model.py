"""
model.py  (state-space model abstraction)

What this module does
---------------------
Everything the estimation code agrees on before any filtering happens:

- TimeGrid: the sampling times t_1..t_n plus a fine grid with R sub-steps per
  sampling interval, used by numerical SDE integration.
- ParameterVector: named parameters on their natural scale with a log map to
  an unconstrained working scale for positive components.
- LatentPath / ObservationSeries: a latent trajectory on the fine grid and the
  observations at sampling times.
- StateSpaceModel: the contract every model implements (forward simulation,
  observation density, sufficient statistics, closed-form M-step, optional
  transition density and complete-data derivatives).
- complete_loglik / simulate_dataset: the plumbing on top of that contract.

Conventions
-----------
- States are handled in batches: a state argument is an (M, d_x) array and a
  single state is M = 1. Observation arrays are (n, d_y).
- Fine-grid index i runs 0..N with tau_0 = t_0; sampling time t_j is fine
  index j*R. LatentPath.values holds fine indices 1..N.
- All densities are log densities.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from typing import ClassVar

import numpy as np

from .exceptions import ContractViolation

_LOGGER = logging.getLogger(__name__)


# ---------------------------------------------------------------------
# Time grid
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    """Equispaced sampling grid with R fine sub-steps per interval."""

    n: int  # number of sampling times
    delta: float = 1.0  # sampling interval
    substeps: int = 1  # R
    t0: float = 0.0  # time of the initial state

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise ContractViolation(f"Grid needs n >= 1 sampling times, got {self.n!r}")
        if not self.delta > 0:
            raise ContractViolation(f"Sampling interval must be > 0, got {self.delta!r}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ContractViolation(f"Substeps per interval must be >= 1, got {self.substeps!r}")

    @classmethod
    def from_sampling_times(cls, times, substeps: int = 1) -> TimeGrid:
        """Build a grid from explicit equispaced sampling times."""
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size < 1:
            raise ContractViolation("Sampling times must be a non-empty 1-d sequence")
        if times.size == 1:
            delta = float(times[0]) if times[0] > 0 else 1.0
        else:
            steps = np.diff(times)
            if np.any(steps <= 0):
                raise ContractViolation("Sampling times must be strictly increasing")
            delta = float(steps[0])
            if not np.allclose(steps, delta, rtol=1e-9, atol=1e-12):
                raise ContractViolation("Sampling times must be equispaced")
        return cls(n=int(times.size), delta=delta, substeps=int(substeps), t0=float(times[0]) - delta)

    @property
    def h(self) -> float:
        return self.delta / self.substeps

    @property
    def N(self) -> int:  # noqa: N802
        return self.n * self.substeps

    @cached_property
    def fine_times(self) -> np.ndarray:
        # index arithmetic, never accumulated, so sampling times are grid members
        idx = np.arange(self.N + 1)
        times = self.t0 + (idx * self.delta) / self.substeps
        times.setflags(write=False)
        return times

    @cached_property
    def sampling_indices(self) -> np.ndarray:
        """Fine-grid indices j*R of the sampling times, j = 1..n."""
        return np.arange(1, self.n + 1) * self.substeps

    @cached_property
    def sampling_times(self) -> np.ndarray:
        return self.fine_times[self.sampling_indices]


# ---------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Named parameters stored on the natural scale."""

    names: tuple[str, ...]
    values: np.ndarray
    positive: tuple[bool, ...]

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float).reshape(-1)
        names = tuple(self.names)
        positive = tuple(bool(p) for p in self.positive)
        if not (len(names) == len(positive) == values.size):
            raise ContractViolation(
                f"ParameterVector needs one value and one domain flag per name {names}"
            )
        if len(set(names)) != len(names):
            raise ContractViolation(f"Duplicate parameter names in {names}")
        for name, value, pos in zip(names, values, positive, strict=True):
            if not np.isfinite(value):
                raise ContractViolation(f"Parameter '{name}' is not finite: {value!r}")
            if pos and value <= 0:
                raise ContractViolation(f"Parameter '{name}' must be > 0, got {value!r}")
        values.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "positive", positive)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_working(cls, names, positive, working) -> ParameterVector:
        working = np.asarray(working, dtype=float)
        natural = np.where(np.asarray(positive, dtype=bool), np.exp(working), working)
        return cls(tuple(names), natural, tuple(positive))

    def to_working(self) -> np.ndarray:
        mask = np.asarray(self.positive, dtype=bool)
        return np.where(mask, np.log(np.where(mask, self.values, 1.0)), self.values)

    def with_working(self, working) -> ParameterVector:
        """Same names and domains, new working-scale values."""
        return ParameterVector.from_working(self.names, self.positive, working)

    def replace(self, **updates: float) -> ParameterVector:
        unknown = set(updates) - set(self.names)
        if unknown:
            raise ContractViolation(f"Unknown parameter(s) {sorted(unknown)}")
        values = [updates.get(name, value) for name, value in zip(self.names, self.values, strict=True)]
        return ParameterVector(self.names, values, self.positive)

    def as_dict(self) -> dict[str, float]:
        return {name: float(v) for name, v in zip(self.names, self.values, strict=True)}

    def __getitem__(self, name: str) -> float:
        try:
            return float(self.values[self.names.index(name)])
        except ValueError:
            raise KeyError(name) from None

    def __len__(self) -> int:
        return len(self.names)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v:.6g}" for k, v in self.as_dict().items())
        return f"ParameterVector({inner})"


# ---------------------------------------------------------------------
# Paths and observations
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LatentPath:
    initial_state: np.ndarray  # x_0, shape (d_x,)
    values: np.ndarray  # fine indices 1..N, shape (N, d_x)
    grid: TimeGrid

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        x0 = np.asarray(self.initial_state, dtype=float).reshape(-1)
        if values.shape[0] != self.grid.N:
            raise ContractViolation(
                f"Latent path has {values.shape[0]} fine-grid values, grid needs {self.grid.N}"
            )
        if values.shape[1] != x0.size:
            raise ContractViolation("Initial state and path values differ in dimension")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "initial_state", x0)

    def at_sampling_times(self) -> np.ndarray:
        """Values at t_1..t_n, shape (n, d_x)."""
        return self.values[self.grid.sampling_indices - 1]

    def full(self) -> np.ndarray:
        """x_0..x_N, shape (N+1, d_x)."""
        return np.vstack([self.initial_state[None, :], self.values])


@dataclass(frozen=True, eq=False)
class ObservationSeries:
    values: np.ndarray  # shape (n, d_y)
    grid: TimeGrid

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != self.grid.n:
            raise ContractViolation(
                f"{values.shape[0]} observations for a grid of {self.grid.n} sampling times"
            )
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def times(self) -> np.ndarray:
        return self.grid.sampling_times


# ---------------------------------------------------------------------
# Model contract
# ---------------------------------------------------------------------


class StateSpaceModel(ABC):
    """Contract shared by every model the filters and SAEM can run on.

    Implementations are immutable; all randomness comes from the rng handed in.
    """

    parameter_names: ClassVar[tuple[str, ...]] = ()
    positive: ClassVar[tuple[bool, ...]] = ()
    state_dim: ClassVar[int] = 1
    obs_dim: ClassVar[int] = 1
    # optional capabilities
    has_transition_density: ClassVar[bool] = False
    has_derivatives: ClassVar[bool] = False

    def parameters(self, **values: float) -> ParameterVector:
        missing = set(self.parameter_names) - set(values)
        extra = set(values) - set(self.parameter_names)
        if missing or extra:
            raise ContractViolation(
                f"Expected parameters {self.parameter_names}, got {tuple(values)}"
            )
        return ParameterVector(
            self.parameter_names, [values[k] for k in self.parameter_names], self.positive
        )

    @abstractmethod
    def sample_initial(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw `size` initial states from p(x_0), shape (size, d_x)."""

    @abstractmethod
    def simulate_transition(self, states, tau_prev, tau_next, theta, rng) -> np.ndarray:
        """Advance each row of `states` from tau_prev to tau_next."""

    def transition_logdensity(self, x_next, x_prev, tau_prev, tau_next, theta) -> np.ndarray:
        """log p(x_next | x_prev) row by row; only when has_transition_density."""
        raise NotImplementedError(f"{type(self).__name__} has no transition density")

    @abstractmethod
    def obs_logdensity(self, y, states, theta) -> np.ndarray:
        """log f(y | x) row by row; y broadcasts against the leading axis of states."""

    @abstractmethod
    def simulate_obs(self, states, theta, rng) -> np.ndarray:
        """One observation per row of `states`, shape (M, d_y)."""

    @abstractmethod
    def sufficient_stats(self, Y: ObservationSeries, X: LatentPath) -> np.ndarray:
        """Complete-data sufficient statistic S_c(Y, X)."""

    @abstractmethod
    def mstep(self, s, grid: TimeGrid) -> ParameterVector:
        """Closed-form maximiser for the running statistic s."""

    def complete_derivatives(self, Y, X, theta) -> tuple[np.ndarray, np.ndarray]:
        """Gradient and hessian of the complete log-likelihood.

        Taken with respect to the model's derivative coordinates (see
        derivative_jacobian), which need not be the natural parameters.
        """
        raise NotImplementedError(f"{type(self).__name__} has no derivatives")

    def derivative_jacobian(self, theta: ParameterVector) -> np.ndarray:
        """d natural / d derivative-coordinate, one entry per parameter."""
        return np.ones(len(theta))

    def propose_transition(self, states, tau_prev, tau_next, y_next, theta, rng):
        """Reserved for data-informed proposals; filters only use blind propagation."""
        raise NotImplementedError("Guided proposals are not implemented")


# ---------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------


def _check_path_and_data(model: StateSpaceModel, Y: ObservationSeries, X: LatentPath) -> None:
    if X.grid != Y.grid:
        raise ContractViolation(f"Path grid {X.grid} does not match observation grid {Y.grid}")
    if X.values.shape[1] != model.state_dim:
        raise ContractViolation(
            f"Path has state dimension {X.values.shape[1]}, model expects {model.state_dim}"
        )
    if Y.values.shape[1] != model.obs_dim:
        raise ContractViolation(
            f"Observations have dimension {Y.values.shape[1]}, model expects {model.obs_dim}"
        )


def complete_loglik(
    model: StateSpaceModel, Y: ObservationSeries, X: LatentPath, theta: ParameterVector
) -> float:
    """Sum of observation and fine-grid transition log densities."""
    if not model.has_transition_density:
        raise ContractViolation(f"{type(model).__name__} provides no transition density")
    _check_path_and_data(model, Y, X)

    taus = X.grid.fine_times
    full = X.full()
    trans = np.asarray(
        model.transition_logdensity(full[1:], full[:-1], taus[:-1], taus[1:], theta), dtype=float
    )
    obs = np.asarray(model.obs_logdensity(Y.values, X.at_sampling_times(), theta), dtype=float)
    if np.any(trans == -np.inf) or np.any(obs == -np.inf):
        return -np.inf
    return float(obs.sum() + trans.sum())


def simulate_path(
    model: StateSpaceModel, grid: TimeGrid, theta: ParameterVector, rng: np.random.Generator
) -> LatentPath:
    """Forward-simulate one latent path over the fine grid."""
    taus = grid.fine_times
    state = model.sample_initial(rng, 1)
    x0 = state[0].copy()
    values = np.empty((grid.N, model.state_dim))
    for i in range(grid.N):
        state = model.simulate_transition(state, taus[i], taus[i + 1], theta, rng)
        values[i] = state[0]
    return LatentPath(x0, values, grid)


def simulate_dataset(
    model: StateSpaceModel, grid: TimeGrid, theta: ParameterVector, rng: np.random.Generator
) -> tuple[LatentPath, ObservationSeries]:
    """Latent path plus observations drawn at the sampling times only."""
    path = simulate_path(model, grid, theta, rng)
    ys = model.simulate_obs(path.at_sampling_times(), theta, rng)
    _LOGGER.debug(f"✅ Simulated dataset n={grid.n}, R={grid.substeps}, theta={theta}")
    return path, ObservationSeries(ys, grid)
