from __future__ import annotations

import logging

import numpy as np
import pytest

from saemabc.const import KERNEL_GAUSSIAN, KERNEL_UNIFORM, NLG_DELTAS, NLG_LEVEL_ITERATIONS
from saemabc.exceptions import ContractViolation, DegenerateFilterError
from saemabc.kernels import KernelSpec, ThresholdSchedule
from saemabc.model import TimeGrid, simulate_dataset
from saemabc.nonlinear_gaussian import nlg_derivatives, nlg_mstep, nlg_sufficient_stats
from saemabc.saem import (
    AbcFilterSpec,
    BootstrapFilterSpec,
    RejectionSpec,
    StepSizeSchedule,
    _apply_mstep,
    convert_standard_errors,
    fisher_update,
    gamma,
    run_saem,
    sa_update,
    standard_errors,
)


def test_gamma_schedule() -> None:
    sched = StepSizeSchedule(K=400, K1=300)
    assert gamma(sched, 1) == 1.0
    assert gamma(sched, 300) == 1.0
    assert gamma(sched, 301) == 1.0
    assert gamma(sched, 310) == pytest.approx(0.1)
    with pytest.raises(ContractViolation):
        gamma(sched, 401)
    with pytest.raises(ContractViolation):
        StepSizeSchedule(K=10, K1=10)


def test_sa_update_examples() -> None:
    S_c = np.array([3.0, -1.5])
    np.testing.assert_array_equal(sa_update([7.0, 8.0], S_c, 1.0), S_c)
    np.testing.assert_array_equal(sa_update(S_c, S_c, 0.3), S_c)
    np.testing.assert_allclose(sa_update([0.0], [4.0], 0.5), [2.0])
    with pytest.raises(ContractViolation):
        sa_update([0.0], [1.0, 2.0], 0.5)


def test_fisher_update_first_iteration(rng) -> None:
    grad = rng.normal(size=3)
    a = rng.normal(size=(3, 3))
    hess = a + a.T
    G, H, F = fisher_update(np.zeros(3), np.zeros((3, 3)), grad, hess, 1.0)
    np.testing.assert_allclose(G, grad)
    np.testing.assert_allclose(H, hess + np.outer(grad, grad))
    np.testing.assert_allclose(F, hess, atol=1e-12)


def test_fisher_update_fixed_point() -> None:
    G = np.array([1.0, 2.0])
    H = np.array([[2.0, 0.5], [0.5, 1.0]])
    G2, H2, _ = fisher_update(G, H, np.zeros(2), H, 0.25)
    np.testing.assert_allclose(G2, 0.75 * G)
    np.testing.assert_allclose(H2, H)


def test_fisher_update_symmetric_output(rng) -> None:
    G, H = np.zeros(2), np.zeros((2, 2))
    for gamma_k in (1.0, 0.5, 0.2):
        grad = rng.normal(size=2)
        hess = rng.normal(size=(2, 2))
        hess = hess + hess.T
        G, H, F = fisher_update(G, H, grad, hess, gamma_k)
        np.testing.assert_array_equal(F, F.T)


def test_fisher_update_rejects_non_finite() -> None:
    with pytest.raises(ContractViolation, match=r"gradient entry at \(1,\)"):
        fisher_update(np.zeros(2), np.zeros((2, 2)), [0.0, np.nan], np.eye(2), 1.0)


def test_fisher_known_path_gaussian_information(nlg_model, nlg_data) -> None:
    X, Y = nlg_data
    v_x, v_y = nlg_mstep(nlg_sufficient_stats(Y, X), Y.n)
    theta = nlg_model.parameters(sigma_x=np.sqrt(v_x), sigma_y=np.sqrt(v_y))
    sched = StepSizeSchedule(K=50, K1=10)
    G, H = np.zeros(2), np.zeros((2, 2))
    for k in range(1, sched.K + 1):
        grad, hess = nlg_derivatives(Y, X, theta)
        G, H, F = fisher_update(G, H, grad, hess, gamma(sched, k))
    assert F[1, 1] == pytest.approx(-Y.n / (2 * v_y**2), rel=1e-6)


def test_standard_errors_examples() -> None:
    np.testing.assert_allclose(standard_errors([[-4.0]]), [0.5])
    np.testing.assert_allclose(standard_errors(-np.eye(2)), [1.0, 1.0])


def test_standard_errors_indefinite(caplog) -> None:
    with caplog.at_level(logging.WARNING):
        se = standard_errors(np.diag([-1.0, 2.0]))
    assert np.isnan(se).all()
    assert "not positive definite" in caplog.text


def test_convert_standard_errors(nlg_model) -> None:
    theta = nlg_model.parameters(sigma_x=2.0, sigma_y=0.5)
    se, se_working = convert_standard_errors(nlg_model, theta, np.array([0.4, 0.1]))
    np.testing.assert_allclose(se, [0.1, 0.1])
    np.testing.assert_allclose(se_working, [0.05, 0.2])


def test_mstep_domain_error_keeps_previous_component(lg_model, caplog) -> None:
    grid = TimeGrid(n=2)
    previous = lg_model.parameters(a=0.3, sigma_x=1.5, sigma_y=1.0)
    with caplog.at_level(logging.WARNING):
        theta = _apply_mstep(lg_model, np.array([0.0, 0.0, 4.0, 8.0]), grid, previous, 7)
    assert theta["a"] == 0.3
    assert theta["sigma_x"] == 1.5
    assert theta["sigma_y"] == pytest.approx(2.0)
    assert "Iteration 7" in caplog.text


def _small_abc_spec(K: int) -> AbcFilterSpec:
    return AbcFilterSpec(ThresholdSchedule.constant(1.0, K), M=60, M_bar=20, kernel=KernelSpec(KERNEL_GAUSSIAN))


def test_run_saem_smoke(nlg_model, nlg_data) -> None:
    _, Y = nlg_data
    theta0 = nlg_model.parameters(sigma_x=1.0, sigma_y=3.0)
    result = run_saem(nlg_model, Y, theta0, StepSizeSchedule(K=12, K1=6), _small_abc_spec(12), np.random.default_rng(4))

    frame = result.trace.to_frame()
    assert list(frame.columns) == ["iteration", "gamma", "delta", "sigma_x", "sigma_y", "ess_mean", "distinct_mean"]
    assert frame["iteration"].tolist() == list(range(1, 13))
    assert (frame["gamma"].iloc[:7] == 1.0).all()
    assert (frame["delta"] == 1.0).all()
    assert np.all(result.theta.values > 0)
    assert result.se.shape == (2,)
    assert result.last_diagnostics is not None
    np.testing.assert_array_equal(result.state.F, result.state.F.T)
    assert "working_sigma_x" in result.trace.to_frame(working=True).columns


def test_run_saem_warmup_replaces_statistic(nlg_model, nlg_data) -> None:
    _, Y = nlg_data
    seen = []
    original = nlg_model.sufficient_stats

    def record(Y_, X_):
        out = original(Y_, X_)
        seen.append(out)
        return out

    nlg_model.sufficient_stats = record
    try:
        result = run_saem(
            nlg_model,
            Y,
            nlg_model.parameters(sigma_x=2.0, sigma_y=2.0),
            StepSizeSchedule(K=3, K1=2),
            BootstrapFilterSpec(M=40, M_bar=20),
            np.random.default_rng(8),
        )
    finally:
        del nlg_model.sufficient_stats
    assert len(seen) == 3
    np.testing.assert_array_equal(result.state.s, seen[-1])


def test_run_saem_is_reproducible(nlg_model, nlg_data) -> None:
    _, Y = nlg_data
    theta0 = nlg_model.parameters(sigma_x=1.5, sigma_y=1.5)

    def fit():
        return run_saem(nlg_model, Y, theta0, StepSizeSchedule(K=8, K1=4), _small_abc_spec(8), np.random.default_rng(12))

    np.testing.assert_array_equal(fit().trace.estimates(), fit().trace.estimates())


def test_run_saem_with_rejection_step(lg_model) -> None:
    theta = lg_model.parameters(a=0.5, sigma_x=0.3, sigma_y=0.3)
    _, Y = simulate_dataset(lg_model, TimeGrid(n=3), theta, np.random.default_rng(0))
    spec = RejectionSpec(ThresholdSchedule.constant(50.0, 4), max_attempts=10)
    result = run_saem(lg_model, Y, theta, StepSizeSchedule(K=4, K1=2), spec, np.random.default_rng(1))
    assert result.trace.to_frame()["ess_mean"].isna().all()
    assert np.isnan(result.se).all()


def test_run_saem_schedule_length_mismatch(nlg_model, nlg_data) -> None:
    _, Y = nlg_data
    with pytest.raises(ContractViolation):
        run_saem(
            nlg_model,
            Y,
            nlg_model.parameters(sigma_x=1.0, sigma_y=1.0),
            StepSizeSchedule(K=10, K1=5),
            _small_abc_spec(9),
            np.random.default_rng(0),
        )


def test_run_saem_degeneracy_names_iteration(nlg_model, nlg_data) -> None:
    _, Y = nlg_data
    spec = AbcFilterSpec(ThresholdSchedule.constant(1e-12, 5), M=20, M_bar=5, kernel=KernelSpec(KERNEL_UNIFORM))
    with pytest.raises(DegenerateFilterError) as err:
        run_saem(
            nlg_model,
            Y,
            nlg_model.parameters(sigma_x=1.0, sigma_y=1.0),
            StepSizeSchedule(K=5, K1=2),
            spec,
            np.random.default_rng(0),
        )
    assert err.value.iteration == 1
    assert err.value.time_index == 1


def test_run_saem_noise_free_stays_at_truth(nlg_model) -> None:
    theta = nlg_model.parameters(sigma_x=1e-6, sigma_y=1e-6)
    _, Y = simulate_dataset(nlg_model, TimeGrid(n=10), theta, np.random.default_rng(0))
    result = run_saem(nlg_model, Y, theta, StepSizeSchedule(K=10, K1=5), BootstrapFilterSpec(M=50, M_bar=25), np.random.default_rng(3))
    est = result.trace.estimates()
    assert np.max(np.abs(est[5:] - 1e-6)) < 1e-3


def _benchmark_observations(nlg_model, nlg_theta):
    _, Y = simulate_dataset(nlg_model, TimeGrid(n=50), nlg_theta, np.random.default_rng(2017))
    return Y


def _benchmark_spec() -> AbcFilterSpec:
    return AbcFilterSpec(ThresholdSchedule(tuple(zip(NLG_DELTAS, NLG_LEVEL_ITERATIONS, strict=True))), M=1000, M_bar=200)


@pytest.mark.slow
def test_benchmark_saem_abc_reproduction(nlg_model, nlg_theta) -> None:
    Y = _benchmark_observations(nlg_model, nlg_theta)
    sched = StepSizeSchedule(K=400, K1=300)
    estimates = []
    for g in np.random.default_rng(30).spawn(30):
        start_rng, algo_rng = g.spawn(2)
        working = nlg_theta.to_working() + np.sqrt(2.0) * start_rng.standard_normal(2)
        result = run_saem(nlg_model, Y, nlg_theta.with_working(working), sched, _benchmark_spec(), algo_rng, fisher=False)
        estimates.append(result.theta.values)
    medians = np.median(estimates, axis=0)
    assert 2.15 <= medians[0] <= 2.45
    assert 1.75 <= medians[1] <= 2.05


@pytest.mark.slow
def test_step_norm_shrinks_after_warmup(nlg_model, nlg_theta) -> None:
    Y = _benchmark_observations(nlg_model, nlg_theta)
    sched = StepSizeSchedule(K=400, K1=300)
    result = run_saem(nlg_model, Y, nlg_theta, sched, _benchmark_spec(), np.random.default_rng(5), fisher=False)
    est = result.trace.estimates()
    # step k is est[k-1] - est[k-2]
    steps = np.linalg.norm(np.diff(est, axis=0), axis=1)
    early = steps[sched.K1 - 2 : sched.K1 + 49].mean()
    late = steps[-50:].mean()
    # gamma sums over the two windows give an expected ratio near 0.1
    assert late < 0.15 * early
