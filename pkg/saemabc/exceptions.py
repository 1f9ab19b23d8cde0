"""Error taxonomy for saemabc."""

from __future__ import annotations

from typing import Any


class SaemAbcError(Exception):
    """Base error for every failure raised by this package."""


class ContractViolation(SaemAbcError, ValueError):
    """A precondition, dimension or domain requirement was not met."""


class DegenerateFilterError(SaemAbcError):
    """Every particle weight vanished at one time step."""

    def __init__(self, time_index: int, iteration: int | None = None) -> None:
        self.time_index = time_index
        self.iteration = iteration
        where = f"time index {time_index}"
        if iteration is not None:
            where += f" (SAEM iteration {iteration})"
        super().__init__(f"All particle weights are zero at {where}")


class AcceptanceFailure(SaemAbcError):
    """Rejection ABC exhausted its attempt budget."""

    def __init__(self, attempts: int, best_distance: float) -> None:
        self.attempts = attempts
        self.best_distance = best_distance
        super().__init__(
            f"No simulation accepted after {attempts} attempts "
            f"(best distance {best_distance:.6g})"
        )


class MStepDomainError(SaemAbcError):
    """A closed-form M-step produced a value outside the parameter domain.

    ``partial`` holds the components that could still be computed, so callers
    can keep the previous value for ``component`` and accept the rest.
    """

    def __init__(
        self, component: str, value: float, partial: dict[str, float] | None = None
    ) -> None:
        self.component = component
        self.value = value
        self.partial = dict(partial or {})
        super().__init__(f"M-step value for '{component}' out of domain: {value!r}")


class SingularRegressionError(SaemAbcError):
    """The drift regression design is numerically singular."""

    def __init__(self, condition: float) -> None:
        self.condition = condition
        super().__init__(f"Regression design is singular (cond(C'C) = {condition:.3g})")


class ChainInitializationError(SaemAbcError):
    """The starting log-likelihood estimate of a chain is not finite."""

    def __init__(self, loglik: float) -> None:
        self.loglik = loglik
        super().__init__(
            f"Initial log-likelihood estimate is not finite ({loglik!r}); "
            "increase the particle count or move the starting values"
        )


class ConfigError(SaemAbcError):
    """An experiment configuration was rejected."""

    def __init__(self, field: str, message: str, value: Any = None) -> None:
        self.field = field
        self.value = value
        super().__init__(f"Invalid config field '{field}': {message}")
