"""
saem.py  (stochastic approximation EM driver)

One SAEM iteration k:
    1. simulate one latent path given the current estimate (ABC-SMC filter,
       bootstrap filter or rejection ABC, chosen by the simulation spec),
    2. s_k = s_{k-1} + gamma_k (S_c(Y, X) - s_{k-1}),
    3. theta_k = mstep(s_k),
    4. Louis-style Fisher accumulators G, H, F updated with the same gamma_k
       when the model provides complete-data derivatives.

gamma_k is 1 during K1 warm-up iterations and 1/(k - K1) afterwards.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .const import DEFAULT_MAX_ATTEMPTS
from .exceptions import ContractViolation, DegenerateFilterError, MStepDomainError
from .filters import (
    FilterDiagnostics,
    rejection_abc_path,
    run_abc_smc,
    run_bootstrap,
    sample_genealogy_path,
)
from .kernels import KernelSpec, ThresholdSchedule, schedule_delta
from .model import ObservationSeries, ParameterVector, StateSpaceModel

_LOGGER = logging.getLogger(__name__)


# ---------------------------------------------------------------------
# Step sizes and updates
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class StepSizeSchedule:
    K: int  # total iterations
    K1: int  # warm-up iterations with gamma = 1

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ContractViolation(f"K must be >= 1, got {self.K}")
        if not 0 <= self.K1 < self.K:
            raise ContractViolation(f"Warm-up K1={self.K1} must satisfy 0 <= K1 < K={self.K}")


def gamma(sched: StepSizeSchedule, k: int) -> float:
    if not 1 <= k <= sched.K:
        raise ContractViolation(f"Iteration {k} outside 1..{sched.K}")
    if k <= sched.K1:
        return 1.0
    return 1.0 / (k - sched.K1)


def sa_update(s_prev, S_c, gamma_k: float) -> np.ndarray:
    s_prev = np.asarray(s_prev, dtype=float)
    S_c = np.asarray(S_c, dtype=float)
    if s_prev.shape != S_c.shape:
        raise ContractViolation(f"Statistic shapes differ: {s_prev.shape} vs {S_c.shape}")
    if not 0 < gamma_k <= 1:
        raise ContractViolation(f"Step size must lie in (0, 1], got {gamma_k!r}")
    if gamma_k == 1.0:
        return S_c.copy()
    return s_prev + gamma_k * (S_c - s_prev)


def _check_finite(name: str, arr: np.ndarray) -> None:
    bad = np.argwhere(~np.isfinite(arr))
    if bad.size:
        entry = tuple(int(i) for i in bad[0])
        raise ContractViolation(f"Non-finite {name} entry at {entry}: {arr[entry]!r}")


def fisher_update(G, H, grad, hess, gamma_k: float):
    """Return (G', H', F') with F' = H' - G' G'^T, symmetrised."""
    G = np.asarray(G, dtype=float)
    H = np.asarray(H, dtype=float)
    grad = np.asarray(grad, dtype=float)
    hess = np.asarray(hess, dtype=float)
    p = G.size
    if grad.shape != (p,) or H.shape != (p, p) or hess.shape != (p, p):
        raise ContractViolation(
            f"Inconsistent Fisher shapes: G{G.shape} H{H.shape} grad{grad.shape} hess{hess.shape}"
        )
    for name, arr in (("gradient", grad), ("hessian", hess), ("G", G), ("H", H)):
        _check_finite(name, arr)

    G_new = G + gamma_k * (grad - G)
    H_new = H + gamma_k * (hess + np.outer(grad, grad) - H)
    F_new = H_new - np.outer(G_new, G_new)

    scale = max(float(np.max(np.abs(F_new))), 1.0)
    asym = float(np.max(np.abs(F_new - F_new.T))) / scale
    if asym > 1e-8:
        _LOGGER.debug(f"⚠️ Fisher matrix asymmetry {asym:.2e} before symmetrisation")
    H_new = 0.5 * (H_new + H_new.T)
    F_new = 0.5 * (F_new + F_new.T)
    return G_new, H_new, F_new


def standard_errors(F) -> np.ndarray:
    """sqrt(diag((-F)^-1)) in the derivative coordinates of F.

    Returns NaNs, with a warning, when -F is not positive definite.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    neg = -0.5 * (F + F.T)
    try:
        chol = np.linalg.cholesky(neg)
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(neg) if np.all(np.isfinite(neg)) else np.array([np.nan])
        _LOGGER.warning(
            "⚠️ Negative Fisher matrix is not positive definite (eigenvalues %s); "
            "standard errors unavailable",
            np.array2string(eig, precision=4),
        )
        return np.full(F.shape[0], np.nan)
    inv_chol = np.linalg.inv(chol)
    cov = inv_chol.T @ inv_chol
    return np.sqrt(np.diag(cov))


# ---------------------------------------------------------------------
# Simulation steps
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class AbcFilterSpec:
    """SAEM-ABC: ABC-SMC filter with a threshold schedule."""

    schedule: ThresholdSchedule
    M: int
    M_bar: int
    kernel: KernelSpec = field(default_factory=KernelSpec)

    def draw_path(self, model, Y, theta, k, rng):
        delta = schedule_delta(self.schedule, k)
        ps, diag = run_abc_smc(model, Y, theta, self.M, self.M_bar, delta, self.kernel, rng)
        return sample_genealogy_path(ps, rng), diag, delta


@dataclass(frozen=True)
class BootstrapFilterSpec:
    """SAEM-SMC: bootstrap filter."""

    M: int
    M_bar: int

    def draw_path(self, model, Y, theta, k, rng):
        ps, diag = run_bootstrap(model, Y, theta, self.M, self.M_bar, rng)
        return sample_genealogy_path(ps, rng), diag, float("nan")


@dataclass(frozen=True)
class RejectionSpec:
    """Whole-series rejection ABC as the simulation step."""

    schedule: ThresholdSchedule
    max_attempts: int = DEFAULT_MAX_ATTEMPTS

    def draw_path(self, model, Y, theta, k, rng):
        delta = schedule_delta(self.schedule, k)
        return rejection_abc_path(model, Y, theta, delta, self.max_attempts, rng), None, delta


SimulationSpec = AbcFilterSpec | BootstrapFilterSpec | RejectionSpec


# ---------------------------------------------------------------------
# State, trace and result
# ---------------------------------------------------------------------


@dataclass
class SAEMState:
    k: int
    s: np.ndarray
    theta: ParameterVector
    G: np.ndarray
    H: np.ndarray
    F: np.ndarray


@dataclass
class SAEMTrace:
    parameter_names: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)

    def record(self, k, gamma_k, delta, theta: ParameterVector, diag: FilterDiagnostics | None):
        row = {"iteration": k, "gamma": gamma_k, "delta": delta}
        row.update(theta.as_dict())
        row.update({f"working_{name}": w for name, w in zip(theta.names, theta.to_working(), strict=True)})
        row["ess_mean"] = diag.ess_mean if diag is not None else float("nan")
        row["distinct_mean"] = diag.distinct_mean if diag is not None else float("nan")
        self.rows.append(row)

    def to_frame(self, *, working: bool = False) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows)
        natural = ["iteration", "gamma", "delta", *self.parameter_names, "ess_mean", "distinct_mean"]
        if frame.empty:
            return pd.DataFrame(columns=natural)
        if working:
            return frame
        return frame[natural]

    def estimates(self) -> np.ndarray:
        """(K, p) natural-scale estimates per iteration."""
        return np.array([[row[name] for name in self.parameter_names] for row in self.rows])


@dataclass
class SAEMResult:
    theta: ParameterVector
    se: np.ndarray  # natural scale
    se_working: np.ndarray  # log scale for positive components
    trace: SAEMTrace
    state: SAEMState
    last_diagnostics: FilterDiagnostics | None
    wall_time: float

    def se_dict(self) -> dict[str, float]:
        return {f"se_{k}": float(v) for k, v in zip(self.theta.names, self.se, strict=True)}


def _apply_mstep(model, s, grid, theta_prev: ParameterVector, k: int) -> ParameterVector:
    try:
        return model.mstep(s, grid)
    except MStepDomainError as err:
        _LOGGER.warning(
            "⚠️ Iteration %d: M-step for %s out of domain (%.4g); keeping previous value",
            k,
            err.component,
            err.value,
        )
        accepted = {name: v for name, v in err.partial.items() if name in theta_prev.names}
        return theta_prev.replace(**accepted)


def convert_standard_errors(model, theta, se_coord):
    """Delta method from derivative coordinates to natural and working scales."""
    se_natural = np.abs(model.derivative_jacobian(theta)) * se_coord
    positive = np.asarray(theta.positive, dtype=bool)
    se_working = np.where(positive, se_natural / theta.values, se_natural)
    return se_natural, se_working


# ---------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------


def run_saem(
    model: StateSpaceModel,
    Y: ObservationSeries,
    theta0: ParameterVector,
    sched: StepSizeSchedule,
    simulation: SimulationSpec,
    rng: np.random.Generator,
    *,
    fisher: bool = True,
) -> SAEMResult:
    """Run K SAEM iterations from theta0 and return estimate, SEs and trace."""
    threshold = getattr(simulation, "schedule", None)
    if threshold is not None and threshold.total != sched.K:
        raise ContractViolation(
            f"Threshold schedule covers {threshold.total} iterations, SAEM runs K={sched.K}"
        )
    if tuple(theta0.names) != tuple(model.parameter_names):
        raise ContractViolation(
            f"Starting values {theta0.names} do not match model parameters {model.parameter_names}"
        )

    use_fisher = fisher and model.has_derivatives
    p = len(theta0)
    state = SAEMState(
        k=0,
        s=None,
        theta=theta0,
        G=np.zeros(p),
        H=np.zeros((p, p)),
        F=np.zeros((p, p)),
    )
    trace = SAEMTrace(tuple(theta0.names))
    diag = None
    started = time.perf_counter()
    _LOGGER.info("SAEM start: %s, K=%d, K1=%d, theta0=%s", type(simulation).__name__, sched.K, sched.K1, theta0)

    for k in range(1, sched.K + 1):
        gamma_k = gamma(sched, k)
        try:
            path, diag, delta = simulation.draw_path(model, Y, state.theta, k, rng)
        except DegenerateFilterError as err:
            raise DegenerateFilterError(err.time_index, iteration=k) from err

        S_c = np.asarray(model.sufficient_stats(Y, path), dtype=float)
        s_prev = np.zeros_like(S_c) if state.s is None else state.s
        state.s = sa_update(s_prev, S_c, gamma_k)
        state.theta = _apply_mstep(model, state.s, Y.grid, state.theta, k)

        if use_fisher:
            grad, hess = model.complete_derivatives(Y, path, state.theta)
            state.G, state.H, state.F = fisher_update(state.G, state.H, grad, hess, gamma_k)

        state.k = k
        trace.record(k, gamma_k, delta, state.theta, diag)
        _LOGGER.debug(f"🔧 k={k} gamma={gamma_k:.4g} delta={delta:.4g} theta={state.theta}")

    if use_fisher:
        se_coord = standard_errors(state.F)
        se, se_working = convert_standard_errors(model, state.theta, se_coord)
    else:
        se = np.full(p, np.nan)
        se_working = np.full(p, np.nan)

    wall = time.perf_counter() - started
    _LOGGER.info("SAEM done in %.1fs: theta=%s", wall, state.theta)
    return SAEMResult(
        theta=state.theta,
        se=se,
        se_working=se_working,
        trace=trace,
        state=state,
        last_diagnostics=diag,
        wall_time=wall,
    )

