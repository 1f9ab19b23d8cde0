"""ABC kernels and deterministic threshold schedules."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .const import KERNEL_GAUSSIAN, KERNEL_UNIFORM
from .exceptions import ContractViolation

_LOGGER = logging.getLogger(__name__)


def euclidean_distance(a, b):
    """Row-wise Euclidean distance; broadcasts over leading axes."""
    return np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), axis=-1)


def identity_summary(y):
    return np.asarray(y, dtype=float)


@dataclass(frozen=True)
class KernelSpec:
    """Which ABC kernel to weight pseudo-observations with.

    distance and summary are only used by the uniform kernel and must accept
    arrays with a leading particle axis.
    """

    kind: str = KERNEL_GAUSSIAN
    distance: Callable = field(default=euclidean_distance, compare=False)
    summary: Callable = field(default=identity_summary, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in (KERNEL_GAUSSIAN, KERNEL_UNIFORM):
            raise ContractViolation(f"Unknown kernel kind: '{self.kind}'")


def kernel_log_weight(spec: KernelSpec, y, y_star, delta: float):
    """log J_delta(y, y*).

    y has shape (d_y,); y_star is (d_y,) or (M, d_y), in which case one log
    weight per row is returned.
    """
    if not delta > 0:
        raise ContractViolation(f"Kernel threshold must be > 0, got {delta!r}")
    y = np.asarray(y, dtype=float)
    y_star = np.asarray(y_star, dtype=float)
    if y_star.shape[-1:] != y.shape[-1:]:
        raise ContractViolation(
            f"Observation dimension {y.shape[-1:]} differs from pseudo-observation {y_star.shape[-1:]}"
        )

    if spec.kind == KERNEL_GAUSSIAN:
        sq = np.sum((y_star - y) ** 2, axis=-1)
        return -np.log(delta) - sq / (2.0 * delta**2)

    dist = np.asarray(spec.distance(spec.summary(y_star), spec.summary(y)), dtype=float)
    return np.where(dist <= delta, 0.0, -np.inf)


# ---------------------------------------------------------------------
# Threshold schedules
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdSchedule:
    """Strictly decreasing thresholds, each held for a block of iterations."""

    levels: tuple[tuple[float, int], ...]

    def __post_init__(self) -> None:
        levels = tuple((float(d), int(k)) for d, k in self.levels)
        if not levels:
            raise ContractViolation("Threshold schedule needs at least one level")
        for delta, iterations in levels:
            if not delta > 0:
                raise ContractViolation(f"Threshold must be > 0, got {delta!r}")
            if iterations < 1:
                raise ContractViolation(f"Level {delta} needs >= 1 iterations, got {iterations}")
        deltas = [d for d, _ in levels]
        if any(b >= a for a, b in zip(deltas, deltas[1:], strict=False)):
            raise ContractViolation(f"Thresholds must be strictly decreasing: {deltas}")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def constant(cls, delta: float, total: int) -> ThresholdSchedule:
        return cls(((delta, total),))

    @classmethod
    def stepped(
        cls, deltas: Sequence[float], *, first: int, every: int, total: int
    ) -> ThresholdSchedule:
        """First threshold for `first` iterations, then one step down every
        `every` iterations; the last threshold takes whatever is left of `total`.
        """
        deltas = list(deltas)
        counts = [first] + [every] * (len(deltas) - 2) if len(deltas) > 1 else []
        remainder = total - sum(counts)
        if remainder < 1:
            raise ContractViolation(
                f"{total} iterations are too few for {len(deltas)} thresholds "
                f"(first={first}, every={every})"
            )
        counts.append(remainder)
        return cls(tuple(zip(deltas, counts, strict=True)))

    @property
    def total(self) -> int:
        return sum(k for _, k in self.levels)

    @property
    def deltas(self) -> tuple[float, ...]:
        return tuple(d for d, _ in self.levels)


def schedule_delta(sched: ThresholdSchedule, k: int) -> float:
    """Threshold in force at SAEM iteration k (1-based)."""
    if not 1 <= k <= sched.total:
        raise ContractViolation(f"Iteration {k} outside schedule range 1..{sched.total}")
    ends = np.cumsum([it for _, it in sched.levels])
    level = int(np.searchsorted(ends, k, side="left"))
    return sched.levels[level][0]
