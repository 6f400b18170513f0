import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from robustbias.model import (
    Hyperparameters,
    ModelError,
    ParameterState,
    StudyData,
    StudyRecord,
    delta_prior_logpdf,
    inv_logit,
    log_posterior_unnorm,
    logit,
    study_log_likelihood,
)


def test_logit_examples():
    assert logit(0.5) == 0.0
    assert logit(0.75) == pytest.approx(math.log(3), abs=1e-15)
    # 40-digit evaluation of ln(0.0497 / 0.9503)
    assert logit(0.0497) == pytest.approx(-2.950772791114686513, abs=1e-14)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_logit_domain(p):
    with pytest.raises(ModelError):
        logit(p)


def test_inv_logit_extremes():
    assert inv_logit(0.0) == 0.5
    big = inv_logit(700.0)
    # 1 - 1e-300 rounds to 1.0, so the open lower end cannot be asserted in doubles
    assert 1 - 1e-300 <= big <= 1.0
    # 40-digit value of exp(-700) / (1 + exp(-700))
    assert inv_logit(-700.0) == pytest.approx(9.859676543759770857e-305, rel=1e-12)
    assert inv_logit(-1000.0) == 0.0
    with pytest.raises(ModelError):
        inv_logit(math.inf)


@given(st.floats(min_value=1e-9, max_value=1 - 1e-9))
def test_inv_logit_inverts_logit(p):
    assert inv_logit(logit(p)) == pytest.approx(p, abs=1e-12)


def test_study_loglik_wa16291():
    rec = StudyRecord("WA16291", 40, 5, 40, 17)
    b = logit(0.125)
    d = logit(0.425) - logit(0.125)
    # 40-digit value of 5 ln .125 + 35 ln .875 + 17 ln .425 + 23 ln .575
    assert study_log_likelihood(rec, b, d) == pytest.approx(-42.34499079948880731, abs=1e-11)
    brute = (stats.binom.logpmf(5, 40, 0.125) - math.log(math.comb(40, 5))
             + stats.binom.logpmf(17, 40, 0.425) - math.log(math.comb(40, 17)))
    assert study_log_likelihood(rec, b, d) == pytest.approx(brute, abs=1e-9)


def test_study_loglik_saturated_and_extreme():
    rec = StudyRecord("all", 30, 30, 25, 25)
    assert study_log_likelihood(rec, 40.0, 0.0) == pytest.approx(0.0, abs=1e-15)
    rec = StudyRecord("mixed", 30, 3, 25, 20)
    for b, d in [(1e4, -3e4), (-1e4, 1e4), (800.0, 0.0)]:
        v = study_log_likelihood(rec, b, d)
        assert math.isfinite(v) and v < -1e3
    assert study_log_likelihood(rec, 0.3, 1.1) == study_log_likelihood(rec, 0.3, 1.1)


@pytest.mark.parametrize("args", [(0, 0, 1, 1), (10, 11, 10, 1), (10, -1, 10, 1), (10, 1, 10, 12)])
def test_study_record_invariants(args):
    with pytest.raises(ModelError):
        StudyRecord("x", *args)


def test_study_data_needs_studies():
    with pytest.raises(ModelError, match="K >= 1"):
        StudyData([])


def test_hyperparameters_positive():
    assert Hyperparameters() == Hyperparameters(0, 10, 0, 10, 0.01, 0.01)
    with pytest.raises(ModelError):
        Hyperparameters(sigma_mu=0)
    with pytest.raises(ModelError):
        Hyperparameters(lambda_=-1)


def _state(rng, k):
    return ParameterState(rng.normal(-2, 0.5, k), rng.normal(1.4, 0.5, k), rng.normal(1.4, 0.3), rng.uniform(0.01, 1))


def _reference_log_posterior(state, data, hyper, q):
    total = 0.0
    for i, s in enumerate(data.studies):
        p1 = 1 / (1 + math.exp(-state.beta[i]))
        p2 = 1 / (1 + math.exp(-(state.beta[i] + state.delta[i])))
        total += (stats.binom.logpmf(s.r_control, s.n_control, p1) - math.log(math.comb(s.n_control, s.r_control))
                  + stats.binom.logpmf(s.r_treatment, s.n_treatment, p2)
                  - math.log(math.comb(s.n_treatment, s.r_treatment)))
        total += stats.norm.logpdf(state.beta[i], hyper.mu_beta, hyper.sigma_beta)
        total += stats.norm.logpdf(state.delta[i], state.mu, math.sqrt(state.sigma2_theta / q[i]))
    total += stats.norm.logpdf(state.mu, hyper.mu_mu, hyper.sigma_mu)
    total += stats.invgamma.logpdf(state.sigma2_theta, hyper.alpha, scale=hyper.lambda_)
    return total


def test_log_posterior_matches_scipy(data, hyper):
    rng = np.random.default_rng(3)
    for _ in range(20):
        state = _state(rng, len(data))
        q = rng.uniform(0.1, 1, len(data))
        assert log_posterior_unnorm(state, data, hyper, q) == pytest.approx(
            _reference_log_posterior(state, data, hyper, q), abs=1e-8)


def test_log_posterior_unit_quality_is_unadjusted(data, hyper):
    rng = np.random.default_rng(4)
    state = _state(rng, len(data))
    ones = log_posterior_unnorm(state, data, hyper, [1.0] * len(data))
    s = state.sigma2_theta
    manual = sum(study_log_likelihood(r, state.beta[i], state.delta[i]) for i, r in enumerate(data.studies))
    manual += sum(stats.norm.logpdf(b, 0, 10) for b in state.beta)
    manual += sum(stats.norm.logpdf(d, state.mu, math.sqrt(s)) for d in state.delta)
    manual += stats.norm.logpdf(state.mu, 0, 10) + stats.invgamma.logpdf(s, 0.01, scale=0.01)
    assert ones == pytest.approx(manual, abs=1e-9)


def test_log_posterior_delta_difference(data, hyper):
    rng = np.random.default_rng(5)
    state = _state(rng, len(data))
    q = [0.3, 0.6, 0.9, 1.0]
    a, b = 0.7, 2.3
    sa, sb = state.copy(), state.copy()
    sa.delta[0], sb.delta[0] = a, b
    diff = log_posterior_unnorm(sa, data, hyper, q) - log_posterior_unnorm(sb, data, hyper, q)
    rec = data.studies[0]
    expected = (study_log_likelihood(rec, state.beta[0], a) - study_log_likelihood(rec, state.beta[0], b)
                - 0.5 * q[0] * ((a - state.mu) ** 2 - (b - state.mu) ** 2) / state.sigma2_theta)
    assert diff == pytest.approx(expected, abs=1e-9)


def test_halving_quality_changes_only_delta_prior(data, hyper):
    rng = np.random.default_rng(6)
    state = _state(rng, len(data))
    q = np.array([0.8, 0.5, 0.9, 0.7])
    half = q.copy()
    half[0] /= 2
    diff = log_posterior_unnorm(state, data, hyper, half) - log_posterior_unnorm(state, data, hyper, q)
    s = state.sigma2_theta
    expected = (stats.norm.logpdf(state.delta[0], state.mu, math.sqrt(2 * s / q[0]))
                - stats.norm.logpdf(state.delta[0], state.mu, math.sqrt(s / q[0])))
    assert diff == pytest.approx(expected, abs=1e-10)


def test_log_posterior_invalid_variance(data, hyper):
    state = ParameterState(np.zeros(4), np.zeros(4), 0.0, 0.0)
    assert log_posterior_unnorm(state, data, hyper, [1] * 4) == -math.inf


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=8, max_size=8),
    st.floats(-50, 50),
    st.floats(1e-12, 1e12),
    st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4),
)
def test_log_posterior_finite(data, hyper, params, mu, s2, q):
    state = ParameterState(params[:4], params[4:], mu, s2)
    assert math.isfinite(log_posterior_unnorm(state, data, hyper, q))


@given(st.floats(-5, 5), st.floats(0.01, 10), st.floats(0.05, 1), st.floats(0, 5), st.floats(0.01, 5))
def test_delta_prior_decreases_with_distance(mu, s2, q, r, extra):
    near = delta_prior_logpdf(mu + r, mu, s2, q)
    far = delta_prior_logpdf(mu - (r + extra), mu, s2, q)
    assert far < near


def test_quality_must_be_in_unit_interval(data, hyper):
    state = ParameterState(np.zeros(4), np.zeros(4), 0.0, 1.0)
    for bad in ([0, 1, 1, 1], [1.1, 1, 1, 1], [1, 1, 1]):
        with pytest.raises(ModelError):
            log_posterior_unnorm(state, data, hyper, bad)
