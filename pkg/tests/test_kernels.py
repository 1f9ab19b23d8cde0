from __future__ import annotations

import numpy as np
import pytest

from saemabc.const import KERNEL_GAUSSIAN, KERNEL_UNIFORM, NLG_DELTA_UNIFORM_STEPS
from saemabc.exceptions import ContractViolation
from saemabc.helpers import log_normalize
from saemabc.kernels import KernelSpec, ThresholdSchedule, kernel_log_weight, schedule_delta

GAUSSIAN = KernelSpec(KERNEL_GAUSSIAN)
UNIFORM = KernelSpec(KERNEL_UNIFORM)
BENCHMARK_SCHEDULE = ThresholdSchedule(((2.0, 80), (1.7, 70), (1.3, 50), (1.0, 200)))


def test_gaussian_kernel_at_zero_distance() -> None:
    assert kernel_log_weight(GAUSSIAN, [1.0], [1.0], 0.5) == pytest.approx(np.log(2.0))


def test_gaussian_kernel_one_threshold_away() -> None:
    delta = 0.7
    assert kernel_log_weight(GAUSSIAN, [1.0], [1.0 + delta], delta) == pytest.approx(-np.log(delta) - 0.5)


def test_uniform_kernel_outside_ball() -> None:
    assert kernel_log_weight(UNIFORM, [0.0], [1.1], 1.0) == -np.inf
    assert kernel_log_weight(UNIFORM, [0.0], [0.9], 1.0) == 0.0


def test_kernel_rejects_non_positive_threshold() -> None:
    with pytest.raises(ContractViolation):
        kernel_log_weight(GAUSSIAN, [0.0], [0.0], 0.0)
    with pytest.raises(ContractViolation):
        kernel_log_weight(GAUSSIAN, [0.0], [0.0, 1.0], 1.0)


def test_kernel_weighs_particle_rows() -> None:
    y_star = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 4.0]])
    out = kernel_log_weight(UNIFORM, [0.0, 0.0], y_star, 1.0)
    np.testing.assert_array_equal(out, [0.0, 0.0, -np.inf])
    gauss = kernel_log_weight(GAUSSIAN, [0.0, 0.0], y_star, 2.0)
    np.testing.assert_allclose(gauss, -np.log(2.0) - np.array([0.0, 1.0, 25.0]) / 8.0)


def test_normalised_weights_ignore_threshold_constant(rng) -> None:
    y = rng.normal(size=1)
    y_star = rng.normal(size=(500, 1)) * 3
    delta = 0.8
    log_w = kernel_log_weight(GAUSSIAN, y, y_star, delta)
    w_with, _ = log_normalize(log_w)
    w_without, _ = log_normalize(log_w + np.log(delta))
    np.testing.assert_allclose(w_with, w_without, rtol=0, atol=1e-12)


def test_gaussian_kernel_peaks_at_the_observation(rng) -> None:
    y = rng.normal(size=3)
    best = kernel_log_weight(GAUSSIAN, y, y, 1.3)
    perturbed = y + rng.normal(size=(200, 3))
    assert np.all(kernel_log_weight(GAUSSIAN, y, perturbed, 1.3) < best)


def test_schedule_delta_level_boundaries() -> None:
    assert schedule_delta(BENCHMARK_SCHEDULE, 80) == 2.0
    assert schedule_delta(BENCHMARK_SCHEDULE, 81) == 1.7
    assert schedule_delta(BENCHMARK_SCHEDULE, 400) == 1.0
    theo = ThresholdSchedule(((0.5, 80), (0.2, 50), (0.1, 50), (0.03, 120)))
    assert schedule_delta(theo, 300) == 0.03


def test_constant_schedule() -> None:
    sched = ThresholdSchedule.constant(1.0, 50)
    assert {schedule_delta(sched, k) for k in range(1, 51)} == {1.0}


def test_schedule_is_non_increasing() -> None:
    deltas = [schedule_delta(BENCHMARK_SCHEDULE, k) for k in range(1, BENCHMARK_SCHEDULE.total + 1)]
    assert all(b <= a for a, b in zip(deltas, deltas[1:], strict=False))


def test_schedule_out_of_range() -> None:
    with pytest.raises(ContractViolation):
        schedule_delta(BENCHMARK_SCHEDULE, 0)
    with pytest.raises(ContractViolation):
        schedule_delta(BENCHMARK_SCHEDULE, 401)


def test_schedule_validation() -> None:
    with pytest.raises(ContractViolation):
        ThresholdSchedule(((1.0, 10), (1.0, 10)))
    with pytest.raises(ContractViolation):
        ThresholdSchedule(((1.0, 0),))
    with pytest.raises(ContractViolation):
        ThresholdSchedule(())


def test_stepped_schedule() -> None:
    sched = ThresholdSchedule.stepped(NLG_DELTA_UNIFORM_STEPS, first=80, every=60, total=400)
    assert sched.deltas == NLG_DELTA_UNIFORM_STEPS
    assert [k for _, k in sched.levels] == [80, 60, 60, 200]
    assert sched.total == 400
    with pytest.raises(ContractViolation):
        ThresholdSchedule.stepped(NLG_DELTA_UNIFORM_STEPS, first=300, every=60, total=400)
