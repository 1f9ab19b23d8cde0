from __future__ import annotations

from unittest import mock

import numpy as np
import pytest
from scipy import stats

from saemabc import bayes
from saemabc.bayes import (
    ChainState,
    Prior,
    PriorSpec,
    gelman_rubin,
    gibbs_conditional_logdensities,
    gibbs_log_posterior,
    gibbs_run,
    metropolis_within_gibbs_step,
    pmm_run,
)
from saemabc.exceptions import ChainInitializationError, ContractViolation
from saemabc.linear_gaussian import kalman_loglik
from saemabc.model import TimeGrid, simulate_dataset
from saemabc.nonlinear_gaussian import state_map


def test_uniform_prior() -> None:
    prior = Prior("uniform", 0.1, 15.0)
    assert prior.logpdf(1.0) == pytest.approx(-np.log(14.9))
    assert prior.logpdf(15.0) == pytest.approx(-np.log(14.9))
    assert prior.logpdf(20.0) == -np.inf


def test_flat_log_prior() -> None:
    prior = Prior("flat-log")
    assert prior.logpdf(np.e) == pytest.approx(-1.0)
    assert prior.logpdf(-1.0) == -np.inf


def test_prior_validation() -> None:
    with pytest.raises(ContractViolation):
        Prior("uniform", 2.0, 1.0)
    with pytest.raises(ContractViolation):
        Prior("gamma", 1.0, 2.0)


def test_prior_spec_ignores_unlisted_parameters(nlg_model) -> None:
    spec = PriorSpec.uniform(sigma_x=(0.0, 2.0))
    assert spec.logpdf(nlg_model.parameters(sigma_x=1.0, sigma_y=100.0)) == pytest.approx(-np.log(2.0))
    assert spec.logpdf(nlg_model.parameters(sigma_x=3.0, sigma_y=1.0)) == -np.inf


def test_sigma_y_conditional_for_exact_observation() -> None:
    assert gibbs_conditional_logdensities("sigma_y", [0.3], [0.3], 2.0, 1.0) == 0.0


def test_x_conditional_is_joint_density_up_to_constant(rng) -> None:
    y = rng.normal(size=6)
    x = rng.normal(size=6)
    sigma_x, sigma_y = 1.3, 0.7
    prev = np.concatenate([[0.0], x[:-1]])
    joint = np.sum(stats.norm.logpdf(x, loc=state_map(prev), scale=sigma_x)) + np.sum(
        stats.norm.logpdf(y, loc=x, scale=sigma_y)
    )
    value = gibbs_conditional_logdensities("x", y, x, sigma_x, sigma_y)
    assert value - joint == pytest.approx(6 * np.log(2 * np.pi))


def test_x_conditional_prefers_paths_near_data() -> None:
    y = np.array([1.0, -0.5, 2.0])
    x = y.copy()
    near = gibbs_conditional_logdensities("x", y, x, 100.0, 1.0)
    x[-1] += 3.0
    far = gibbs_conditional_logdensities("x", y, x, 100.0, 1.0)
    assert near > far


def test_sigma_x_conditional_matches_posterior_slice(rng) -> None:
    y = rng.normal(size=5)
    x = rng.normal(size=5)
    priors = PriorSpec.uniform(sigma_x=(0.1, 15.0), sigma_y=(0.1, 15.0))
    offsets = [
        gibbs_log_posterior(y, x, s, 0.8, priors) - gibbs_conditional_logdensities("sigma_x", y, x, s, 0.8, priors)
        for s in (0.5, 1.0, 2.5, 7.0)
    ]
    np.testing.assert_allclose(offsets, offsets[0], rtol=0, atol=1e-10)


def test_conditional_rejects_bad_arguments() -> None:
    with pytest.raises(ContractViolation):
        gibbs_conditional_logdensities("x", [0.0], [0.0], 0.0, 1.0)
    with pytest.raises(ContractViolation):
        gibbs_conditional_logdensities("a", [0.0], [0.0], 1.0, 1.0)


def _state(nlg_model, path, log_scales=(0.0, 0.0)):
    return ChainState(
        theta=nlg_model.parameters(sigma_x=1.5, sigma_y=2.0),
        path=np.asarray(path, dtype=float),
        log_scales=np.asarray(log_scales, dtype=float),
    )


def test_identity_proposals_are_always_accepted(nlg_model, rng) -> None:
    y = rng.normal(size=8)
    start = _state(nlg_model, rng.normal(size=8), log_scales=(-np.inf, -np.inf))
    state = start
    for _ in range(20):
        state = metropolis_within_gibbs_step(
            state, y, PriorSpec(), rng, propose_path=lambda current, _rng: current.path
        )
        assert state.accepted == (True, True, True)
    np.testing.assert_allclose(state.path, start.path)
    np.testing.assert_allclose(state.theta.values, start.theta.values)
    assert state.iteration == 20


def test_prior_support_is_respected(nlg_model, nlg_data) -> None:
    _, Y = nlg_data
    priors = PriorSpec.uniform(sigma_x=(0.1, 15.0), sigma_y=(1.9, 2.1))
    theta0 = nlg_model.parameters(sigma_x=2.0, sigma_y=2.0)
    chain = gibbs_run(Y, theta0, 150, np.random.default_rng(0), priors=priors)
    frame = chain.to_frame()
    assert frame["sigma_y"].between(1.9, 2.1).all()


def test_sweep_ignores_additive_constants(nlg_model, rng) -> None:
    y = rng.normal(size=8)
    start = _state(nlg_model, rng.normal(size=8))
    plain = metropolis_within_gibbs_step(start, y, PriorSpec(), np.random.default_rng(9))
    original = bayes.gibbs_conditional_logdensities
    with mock.patch(
        "saemabc.bayes.gibbs_conditional_logdensities",
        side_effect=lambda *args, **kwargs: original(*args, **kwargs) + 123.0,
    ):
        shifted = metropolis_within_gibbs_step(start, y, PriorSpec(), np.random.default_rng(9))
    assert shifted.accepted == plain.accepted
    np.testing.assert_allclose(shifted.theta.values, plain.theta.values)
    np.testing.assert_allclose(shifted.path, plain.path)


def test_gibbs_run_records_every_sweep(nlg_theta, nlg_data) -> None:
    _, Y = nlg_data
    chain = gibbs_run(Y, nlg_theta, 40, np.random.default_rng(1))
    frame = chain.to_frame()
    assert len(frame) == 40
    assert {"sigma_x", "sigma_y", "log_posterior", "accepted_x", "accepted_sigma_x", "accepted_sigma_y"} <= set(frame.columns)
    assert frame["accepted_x"].isin([0, 1]).all()
    assert (frame[["sigma_x", "sigma_y"]] > 0).all().all()
    assert chain.posterior_mean().shape == (2,)
    assert chain.final_state.path.shape == (Y.n,)


def test_gibbs_run_is_reproducible(nlg_theta, nlg_data) -> None:
    _, Y = nlg_data
    a = gibbs_run(Y, nlg_theta, 25, np.random.default_rng(3)).to_frame()
    b = gibbs_run(Y, nlg_theta, 25, np.random.default_rng(3)).to_frame()
    np.testing.assert_array_equal(a[["sigma_x", "sigma_y"]].to_numpy(), b[["sigma_x", "sigma_y"]].to_numpy())


def test_pmm_runs_estimator_once_per_proposal(lg_model, lg_data) -> None:
    _, Y = lg_data
    calls = []

    def estimator(theta, rng):
        calls.append(theta)
        return -10.0

    pmm_run(lg_model, Y, PriorSpec(), lg_model.default_parameters(), 10, 30, 0.3, np.random.default_rng(0), loglik_estimator=estimator)
    assert len(calls) == 31


def test_pmm_estimates_proposals_outside_support(lg_model, lg_data) -> None:
    _, Y = lg_data
    calls = []

    def estimator(theta, rng):
        calls.append(theta["sigma_x"])
        return -10.0

    priors = PriorSpec.uniform(sigma_x=(0.95, 1.05))
    chain = pmm_run(
        lg_model, Y, priors, lg_model.default_parameters(), 10, 100, 0.3, np.random.default_rng(0), step=0.5, loglik_estimator=estimator
    )
    assert len(calls) == 101
    assert any(not 0.95 <= s <= 1.05 for s in calls)
    assert chain.to_frame()["sigma_x"].between(0.95, 1.05).all()


def test_pmm_small_steps_are_mostly_accepted(lg_model, lg_data) -> None:
    _, Y = lg_data
    chain = pmm_run(
        lg_model,
        Y,
        PriorSpec(),
        lg_model.default_parameters(),
        10,
        200,
        0.99,
        np.random.default_rng(1),
        step=1e-4,
        loglik_estimator=lambda theta, rng: kalman_loglik(lg_model, Y, theta),
    )
    assert chain.acceptance_rate() > 0.9
    assert chain.to_frame()["loglik"].notna().all()


def test_pmm_with_particle_filter(lg_model, lg_data) -> None:
    _, Y = lg_data
    chain = pmm_run(lg_model, Y, PriorSpec(), lg_model.default_parameters(), 50, 20, 0.25, np.random.default_rng(2), M_bar=25)
    frame = chain.to_frame()
    assert list(frame.columns) == ["iteration", "a", "sigma_x", "sigma_y", "loglik", "accepted"]
    assert np.isfinite(frame["loglik"]).all()


def test_pmm_needs_finite_start(lg_model, lg_data) -> None:
    _, Y = lg_data
    with pytest.raises(ChainInitializationError):
        pmm_run(
            lg_model, Y, PriorSpec(), lg_model.default_parameters(), 10, 5, 0.3, np.random.default_rng(0),
            loglik_estimator=lambda theta, rng: -np.inf,
        )


def test_pmm_argument_checks(lg_model, lg_data) -> None:
    _, Y = lg_data
    theta = lg_model.default_parameters()
    with pytest.raises(ContractViolation):
        pmm_run(lg_model, Y, PriorSpec(), theta, 10, 0, 0.3, np.random.default_rng(0))
    with pytest.raises(ContractViolation):
        pmm_run(lg_model, Y, PriorSpec(), theta, 10, 5, 1.0, np.random.default_rng(0))


def test_gelman_rubin_iid_chains(rng) -> None:
    r_hat = gelman_rubin(rng.normal(size=(4, 2000)))
    assert r_hat.shape == (1,)
    assert abs(r_hat[0] - 1.0) < 0.01


def test_gelman_rubin_flags_separated_chains(rng) -> None:
    chains = rng.normal(size=(4, 500, 2)) + np.arange(4)[:, None, None]
    assert np.all(gelman_rubin(chains) > 1.1)
    with pytest.raises(ContractViolation):
        gelman_rubin(rng.normal(size=(1, 100)))


@pytest.mark.slow
def test_pmm_chains_agree(lg_model, lg_data) -> None:
    _, Y = lg_data
    chains = []
    for g in np.random.default_rng(11).spawn(4):
        chain = pmm_run(lg_model, Y, PriorSpec(), lg_model.default_parameters(), 200, 3000, 0.25, g, M_bar=100)
        chains.append(chain.samples())
    assert np.all(gelman_rubin(chains) < 1.1)


def _batch_means_se(draws, batches=40) -> float:
    usable = draws[: draws.size // batches * batches]
    means = usable.reshape(batches, -1).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(batches))


@pytest.mark.slow
def test_pmm_with_exact_likelihood_matches_reference_chain(lg_model, lg_data) -> None:
    _, Y = lg_data
    priors = PriorSpec.uniform(a=(-0.99, 0.99), sigma_x=(0.1, 10.0), sigma_y=(0.1, 10.0))

    def exact(theta, rng):
        return kalman_loglik(lg_model, Y, theta)

    def run(iterations, seed):
        chain = pmm_run(
            lg_model, Y, priors, lg_model.default_parameters(), 1, iterations, 0.25, np.random.default_rng(seed), loglik_estimator=exact
        )
        return chain.samples()[:, 0]

    draws = run(20_000, 1)
    reference = run(100_000, 2)
    se = np.hypot(_batch_means_se(draws), _batch_means_se(reference))
    assert abs(draws.mean() - reference.mean()) <= 3 * se


@pytest.mark.slow
def test_gibbs_chains_from_dispersed_starts_mix(nlg_model) -> None:
    truth = nlg_model.parameters(sigma_x=2.23, sigma_y=2.23)
    _, Y = simulate_dataset(nlg_model, TimeGrid(n=50), truth, np.random.default_rng(44))
    starts = [(0.8, 4.0), (2.23, 2.23), (5.0, 0.8)]
    chains = [
        gibbs_run(Y, nlg_model.parameters(sigma_x=sx, sigma_y=sy), 20_000, g, x0=nlg_model.x0).samples()
        for (sx, sy), g in zip(starts, np.random.default_rng(45).spawn(3), strict=True)
    ]
    assert np.all(gelman_rubin(chains) < 1.1)
    pooled = np.concatenate(chains).mean(axis=0)
    assert np.all((pooled > 1.3) & (pooled < 2.6))
