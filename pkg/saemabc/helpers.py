import logging

import numpy as np
from scipy.special import logsumexp

from .const import VARIANCE_FLOOR
from .exceptions import ContractViolation

_LOGGER = logging.getLogger(__name__)


def log_normalize(log_weights):
    """Return (normalized weights, log of their sum) for log-space weights.

    Max-subtraction is done by logsumexp. A vector of all -inf returns a NaN
    weight vector and -inf; callers decide whether that is degenerate.
    """
    log_weights = np.asarray(log_weights, dtype=float)
    log_total = logsumexp(log_weights)
    if not np.isfinite(log_total):
        return np.full_like(log_weights, np.nan), log_total
    weights = np.exp(log_weights - log_total)
    return weights / weights.sum(), log_total


def floor_variance(value, name):
    """Clamp a variance-type M-step update at VARIANCE_FLOOR."""
    if value < 0:
        raise ContractViolation(f"Negative statistic for '{name}': {value!r}")
    if value < VARIANCE_FLOOR:
        _LOGGER.warning(
            "⚠️ M-step update for %s is %.3g, clamped at %.0e", name, value, VARIANCE_FLOOR
        )
        return VARIANCE_FLOOR
    return float(value)


def spawn_streams(rng, count):
    """Derive `count` independent child generators from rng, in a fixed order."""
    return rng.spawn(count)


def quartiles(values):
    """Median, Q1 and Q3 with linear interpolation between order statistics."""
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return float("nan"), float("nan"), float("nan")
    q1, median, q3 = np.quantile(values, [0.25, 0.5, 0.75], method="linear")
    return float(median), float(q1), float(q3)
