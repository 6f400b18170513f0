"""Metropolis-within-Gibbs sampler for the bias-adjusted model.

One sweep updates, in order, every ``beta_i`` and every ``delta_i`` with a
univariate Gaussian random-walk Metropolis step, then draws ``mu`` and
``sigma2_theta`` from their conjugate full conditionals:

    mu | .           ~ Normal(m, v),  1/v = 1/sigma_mu^2 + sum_i q_i / sigma2_theta
                                      m   = v * (mu_mu/sigma_mu^2 + sum_i q_i delta_i / sigma2_theta)
    sigma2_theta | . ~ InvGamma(alpha + K/2, lambda + 1/2 sum_i q_i (delta_i - mu)^2)

Random-walk step sizes are tuned during burn-in only (Robbins-Monro on the
log step, one update per ``adapt_window`` sweeps) and frozen afterwards.

Random streams: chain ``c`` of a run keyed by ``key`` draws from
``PCG64(SeedSequence(seed, spawn_key=key + (c,)))``, so every chain owns an
independent stream that does not depend on scheduling.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba
import numpy as np

from .model import (
    Hyperparameters,
    ModelError,
    ParameterState,
    StudyData,
    _arm_loglik,
    check_quality,
    logit,
)

log = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    """Invalid sampler settings."""


@dataclass(frozen=True)
class McmcSettings:
    n_chains: int = 4
    n_burnin: int = 5000
    n_samples: int = 20000
    thin: int = 1
    seed: int = 20220607
    initial_step_beta: float = 0.25
    initial_step_delta: float = 0.25
    adapt_window: int = 50
    target_accept: float = 0.44

    def __post_init__(self):
        if self.n_chains < 1:
            raise ConfigurationError(f"n_chains must be >= 1, got {self.n_chains}")
        if self.n_samples < 1:
            raise ConfigurationError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.n_burnin < 0:
            raise ConfigurationError(f"n_burnin must be >= 0, got {self.n_burnin}")
        if self.thin < 1:
            raise ConfigurationError(f"thin must be >= 1, got {self.thin}")
        if self.adapt_window < 1:
            raise ConfigurationError(f"adapt_window must be >= 1, got {self.adapt_window}")
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigurationError(f"target_accept must be in (0, 1), got {self.target_accept}")
        if not (self.initial_step_beta > 0 and self.initial_step_delta > 0):
            raise ConfigurationError("initial step sizes must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass
class PosteriorSamples:
    """Retained draws, indexed ``[chain, sample]`` (and ``[..., study]``)."""

    mu: np.ndarray
    sigma2_theta: np.ndarray
    beta: np.ndarray
    delta: np.ndarray
    accept_rates: dict = field(default_factory=dict)
    steps_after_burnin: dict = field(default_factory=dict)
    steps_final: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.mu.shape[0]

    @property
    def n_samples(self) -> int:
        return self.mu.shape[1]


@dataclass
class PosteriorSummary:
    mean_mu: float
    exceedance: dict[float, float]
    percentiles_mu: dict[float, float]
    mean_delta: list[float]
    exceedance_delta: list[dict[float, float]]
    percentiles_delta: list[dict[float, float]]
    ess_mu: float
    rhat_mu: float


def stream(seed: int, key: tuple = ()) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))


# --- conditionals ------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _mu_conditional(delta, q, s2, mu_mu, var_mu):
    prec = 1.0 / var_mu
    num = mu_mu / var_mu
    for i in range(delta.shape[0]):
        prec += q[i] / s2
        num += q[i] * delta[i] / s2
    return num / prec, 1.0 / prec


@numba.njit(cache=True, nogil=True)
def _sigma2_conditional(delta, q, mu, alpha, lam):
    ss = 0.0
    for i in range(delta.shape[0]):
        ss += q[i] * (delta[i] - mu) ** 2
    return alpha + 0.5 * delta.shape[0], lam + 0.5 * ss


@numba.njit(cache=True, nogil=True)
def _draw_mu(delta, q, s2, mu_mu, var_mu, rng):
    m, v = _mu_conditional(delta, q, s2, mu_mu, var_mu)
    return m + math.sqrt(v) * rng.standard_normal()


@numba.njit(cache=True, nogil=True)
def _draw_sigma2(delta, q, mu, alpha, lam, rng):
    shape, rate = _sigma2_conditional(delta, q, mu, alpha, lam)
    return rate / rng.standard_gamma(shape)


@numba.njit(cache=True, nogil=True)
def _accept(log_ratio, rng):
    # one uniform per proposal, whatever the outcome
    u = rng.random()
    if log_ratio >= 0.0:
        return True
    return u < math.exp(log_ratio)


@numba.njit(cache=True, nogil=True)
def _mh_beta(i, beta, delta, r1, n1, r2, n2, ll_c, ll_t, mu_beta, var_beta, step, rng):
    old = beta[i]
    new = old + step * rng.standard_normal()
    new_c = _arm_loglik(r1[i], n1[i], new)
    new_t = _arm_loglik(r2[i], n2[i], new + delta[i])
    log_ratio = new_c + new_t - ll_c[i] - ll_t[i] - 0.5 * ((new - mu_beta) ** 2 - (old - mu_beta) ** 2) / var_beta
    if _accept(log_ratio, rng):
        beta[i] = new
        ll_c[i] = new_c
        ll_t[i] = new_t
        return True
    return False


@numba.njit(cache=True, nogil=True)
def _mh_delta(i, beta, delta, r2, n2, ll_t, mu, s2, q_i, step, rng):
    old = delta[i]
    new = old + step * rng.standard_normal()
    new_t = _arm_loglik(r2[i], n2[i], beta[i] + new)
    log_ratio = new_t - ll_t[i] - 0.5 * q_i * ((new - mu) ** 2 - (old - mu) ** 2) / s2
    if _accept(log_ratio, rng):
        delta[i] = new
        ll_t[i] = new_t
        return True
    return False


@numba.njit(cache=True, nogil=True)
def _chain_kernel(
    r1, n1, r2, n2, q,
    mu_beta, var_beta, mu_mu, var_mu, alpha, lam,
    beta, delta, mu, s2, step_b, step_d,
    n_burnin, n_samples, thin, adapt_window, target, rng,
    out_mu, out_s2, out_beta, out_delta, acc_b, acc_d, steps_burnin,
):
    k = beta.shape[0]
    ll_c = np.empty(k)
    ll_t = np.empty(k)
    for i in range(k):
        ll_c[i] = _arm_loglik(r1[i], n1[i], beta[i])
        ll_t[i] = _arm_loglik(r2[i], n2[i], beta[i] + delta[i])
    win_b = np.zeros(k)
    win_d = np.zeros(k)
    n_windows = 0
    if n_burnin == 0:
        steps_burnin[0, :] = step_b
        steps_burnin[1, :] = step_d
    for it in range(n_burnin + n_samples * thin):
        burning = it < n_burnin
        for i in range(k):
            if _mh_beta(i, beta, delta, r1, n1, r2, n2, ll_c, ll_t, mu_beta, var_beta, step_b[i], rng):
                if burning:
                    win_b[i] += 1.0
                else:
                    acc_b[i] += 1.0
        for i in range(k):
            if _mh_delta(i, beta, delta, r2, n2, ll_t, mu, s2, q[i], step_d[i], rng):
                if burning:
                    win_d[i] += 1.0
                else:
                    acc_d[i] += 1.0
        mu = _draw_mu(delta, q, s2, mu_mu, var_mu, rng)
        s2 = _draw_sigma2(delta, q, mu, alpha, lam, rng)
        if burning:
            if (it + 1) % adapt_window == 0:
                n_windows += 1
                gain = 1.0 / math.sqrt(n_windows)
                for i in range(k):
                    step_b[i] *= math.exp(gain * (win_b[i] / adapt_window - target))
                    step_d[i] *= math.exp(gain * (win_d[i] / adapt_window - target))
                    win_b[i] = 0.0
                    win_d[i] = 0.0
            if it == n_burnin - 1:
                steps_burnin[0, :] = step_b
                steps_burnin[1, :] = step_d
        else:
            j = it - n_burnin
            if (j + 1) % thin == 0:
                s = j // thin
                out_mu[s] = mu
                out_s2[s] = s2
                out_beta[s, :] = beta
                out_delta[s, :] = delta


# --- single-update entry points ---------------------------------------------


def mu_conditional(state: ParameterState, hyper: Hyperparameters, q: Sequence[float]) -> tuple[float, float]:
    """Mean and variance of the normal full conditional of ``mu``."""
    qv = check_quality(q, state.delta.shape[0])
    return _mu_conditional(state.delta, qv, float(state.sigma2_theta), hyper.mu_mu, hyper.var_mu)


def sigma2_conditional(state: ParameterState, hyper: Hyperparameters, q: Sequence[float]) -> tuple[float, float]:
    """Shape and rate of the inverse-gamma full conditional of ``sigma2_theta``."""
    qv = check_quality(q, state.delta.shape[0])
    return _sigma2_conditional(state.delta, qv, float(state.mu), hyper.alpha, hyper.lambda_)


def gibbs_update_mu(state, hyper, q, rng: np.random.Generator) -> float:
    if not state.sigma2_theta > 0:
        raise ModelError("sigma2_theta must be positive")
    m, v = mu_conditional(state, hyper, q)
    return m + math.sqrt(v) * rng.standard_normal()


def gibbs_update_sigma2(state, hyper, q, rng: np.random.Generator) -> float:
    shape, rate = sigma2_conditional(state, hyper, q)
    return rate / rng.standard_gamma(shape)


def mh_update_site(site, state, data, hyper, q, step, rng, proposal=None):
    """One random-walk Metropolis update of ``("beta", i)`` or ``("delta", i)``.

    ``proposal`` overrides the random-walk draw (the uniform is still
    consumed). Returns ``(new_value, accepted)``; ``state`` is not modified.
    """
    name, i = site
    if not step > 0:
        raise ConfigurationError(f"step must be positive, got {step}")
    qv = check_quality(q, len(data))
    r1, n1, r2, n2 = data.arrays()
    beta, delta = state.beta, state.delta
    ll_c = _arm_loglik(r1[i], n1[i], beta[i])
    ll_t = _arm_loglik(r2[i], n2[i], beta[i] + delta[i])
    z = rng.standard_normal()
    if name == "beta":
        old = beta[i]
        new = old + step * z if proposal is None else float(proposal)
        log_ratio = (
            _arm_loglik(r1[i], n1[i], new) + _arm_loglik(r2[i], n2[i], new + delta[i]) - ll_c - ll_t
            - 0.5 * ((new - hyper.mu_beta) ** 2 - (old - hyper.mu_beta) ** 2) / hyper.var_beta
        )
    elif name == "delta":
        old = delta[i]
        new = old + step * z if proposal is None else float(proposal)
        log_ratio = (
            _arm_loglik(r2[i], n2[i], beta[i] + new) - ll_t
            - 0.5 * qv[i] * ((new - state.mu) ** 2 - (old - state.mu) ** 2) / state.sigma2_theta
        )
    else:
        raise ValueError(f"unknown site {site!r}")
    u = rng.random()
    if log_ratio >= 0 or u < math.exp(log_ratio):
        return float(new), True
    return float(old), False


def site_log_ratio(site, state, data, hyper, q, new_value) -> float:
    """Site-local log acceptance ratio for moving ``site`` to ``new_value``."""
    name, i = site
    qv = check_quality(q, len(data))
    r1, n1, r2, n2 = data.arrays()
    b, d = state.beta[i], state.delta[i]
    if name == "beta":
        return (
            _arm_loglik(r1[i], n1[i], new_value) + _arm_loglik(r2[i], n2[i], new_value + d)
            - _arm_loglik(r1[i], n1[i], b) - _arm_loglik(r2[i], n2[i], b + d)
            - 0.5 * ((new_value - hyper.mu_beta) ** 2 - (b - hyper.mu_beta) ** 2) / hyper.var_beta
        )
    return (
        _arm_loglik(r2[i], n2[i], b + new_value) - _arm_loglik(r2[i], n2[i], b + d)
        - 0.5 * qv[i] * ((new_value - state.mu) ** 2 - (d - state.mu) ** 2) / state.sigma2_theta
    )


# --- chains -----------------------------------------------------------------


def _empirical_logit(r: float, n: float) -> float:
    if r == 0 or r == n:
        return logit((r + 0.5) / (n + 1.0))
    return logit(r / n)


def initial_state(data: StudyData) -> ParameterState:
    """Deterministic starting point from the empirical log-odds of each arm."""
    beta = np.array([_empirical_logit(s.r_control, s.n_control) for s in data.studies])
    treat = np.array([_empirical_logit(s.r_treatment, s.n_treatment) for s in data.studies])
    delta = treat - beta
    return ParameterState(beta, delta, float(delta.mean()), max(float(delta.var()), 0.01))


def run_chain(
    data: StudyData,
    hyper: Hyperparameters,
    q: Sequence[float],
    settings: McmcSettings,
    key: tuple = (),
) -> PosteriorSamples:
    """Run ``settings.n_chains`` independent chains targeting the posterior at ``q``.

    Deterministic in ``(settings, data, hyper, q, key)``.
    """
    if not isinstance(settings, McmcSettings):
        raise ConfigurationError(f"expected McmcSettings, got {type(settings).__name__}")
    k = len(data)
    qv = np.ascontiguousarray(check_quality(q, k))
    r1, n1, r2, n2 = data.arrays()
    init = initial_state(data)
    C, S = settings.n_chains, settings.n_samples
    out_mu = np.empty((C, S))
    out_s2 = np.empty((C, S))
    out_beta = np.empty((C, S, k))
    out_delta = np.empty((C, S, k))
    acc_b = np.zeros((C, k))
    acc_d = np.zeros((C, k))
    steps_burnin = np.empty((C, 2, k))
    steps_final = np.empty((C, 2, k))
    for c in range(C):
        rng = stream(settings.seed, tuple(key) + (c,))
        jitter = rng.normal(0.0, 0.1, size=2 * k + 1)
        beta = init.beta + jitter[:k]
        delta = init.delta + jitter[k:2 * k]
        mu = init.mu + jitter[2 * k]
        step_b = np.full(k, settings.initial_step_beta)
        step_d = np.full(k, settings.initial_step_delta)
        _chain_kernel(
            r1, n1, r2, n2, qv,
            hyper.mu_beta, hyper.var_beta, hyper.mu_mu, hyper.var_mu, hyper.alpha, hyper.lambda_,
            beta, delta, mu, init.sigma2_theta, step_b, step_d,
            settings.n_burnin, S, settings.thin, settings.adapt_window, settings.target_accept, rng,
            out_mu[c], out_s2[c], out_beta[c], out_delta[c], acc_b[c], acc_d[c], steps_burnin[c],
        )
        steps_final[c, 0] = step_b
        steps_final[c, 1] = step_d
    n_post = S * settings.thin
    return PosteriorSamples(
        mu=out_mu,
        sigma2_theta=out_s2,
        beta=out_beta,
        delta=out_delta,
        accept_rates={"beta": acc_b / n_post, "delta": acc_d / n_post},
        steps_after_burnin={"beta": steps_burnin[:, 0], "delta": steps_burnin[:, 1]},
        steps_final={"beta": steps_final[:, 0], "delta": steps_final[:, 1]},
    )


def run_unadjusted_chain(data: StudyData, hyper: Hyperparameters, settings: McmcSettings, key: tuple = ()) -> PosteriorSamples:
    """Plain-Python sampler for the model without study qualities.

    Independent of the compiled kernel (and much slower); the variance of
    every ``delta_i`` is ``sigma2_theta`` itself. Used to cross-check the
    ``q = 1`` case of :func:`run_chain`.
    """
    k = len(data)
    r1, n1, r2, n2 = data.arrays()
    init = initial_state(data)
    C, S = settings.n_chains, settings.n_samples
    samples = {name: np.empty((C, S)) for name in ("mu", "s2")}
    beta_out = np.empty((C, S, k))
    delta_out = np.empty((C, S, k))

    def loglik(i, b, d):
        return _arm_loglik(r1[i], n1[i], b) + _arm_loglik(r2[i], n2[i], b + d)

    for c in range(C):
        rng = stream(settings.seed, tuple(key) + (2, c))  # 2: streams of this path only
        beta = init.beta + rng.normal(0.0, 0.1, size=k)
        delta = init.delta + rng.normal(0.0, 0.1, size=k)
        mu, s2 = init.mu, init.sigma2_theta
        steps = np.full((2, k), settings.initial_step_beta)
        hits = np.zeros((2, k))
        n_windows = 0
        for it in range(settings.n_burnin + S * settings.thin):
            for i in range(k):
                prop = beta[i] + steps[0, i] * rng.standard_normal()
                lr = loglik(i, prop, delta[i]) - loglik(i, beta[i], delta[i])
                lr -= 0.5 * ((prop - hyper.mu_beta) ** 2 - (beta[i] - hyper.mu_beta) ** 2) / hyper.var_beta
                if math.log(1.0 - rng.random()) < lr:
                    beta[i] = prop
                    hits[0, i] += 1
            for i in range(k):
                prop = delta[i] + steps[1, i] * rng.standard_normal()
                lr = loglik(i, beta[i], prop) - loglik(i, beta[i], delta[i])
                lr -= 0.5 * ((prop - mu) ** 2 - (delta[i] - mu) ** 2) / s2
                if math.log(1.0 - rng.random()) < lr:
                    delta[i] = prop
                    hits[1, i] += 1
            precision = 1.0 / hyper.var_mu + k / s2
            mean = (hyper.mu_mu / hyper.var_mu + delta.sum() / s2) / precision
            mu = rng.normal(mean, math.sqrt(1.0 / precision))
            s2 = 1.0 / rng.gamma(hyper.alpha + k / 2.0, 1.0 / (hyper.lambda_ + 0.5 * np.sum((delta - mu) ** 2)))
            if it < settings.n_burnin:
                if (it + 1) % settings.adapt_window == 0:
                    n_windows += 1
                    steps *= np.exp((hits / settings.adapt_window - settings.target_accept) / math.sqrt(n_windows))
                    hits[:] = 0
            elif (it - settings.n_burnin + 1) % settings.thin == 0:
                s = (it - settings.n_burnin) // settings.thin
                samples["mu"][c, s] = mu
                samples["s2"][c, s] = s2
                beta_out[c, s] = beta
                delta_out[c, s] = delta
    return PosteriorSamples(samples["mu"], samples["s2"], beta_out, delta_out)


# --- diagnostics --------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostics:
    """``nan`` marks a diagnostic that could not be computed."""

    rhat: float
    ess: float

    @property
    def available(self) -> bool:
        return not (math.isnan(self.rhat) or math.isnan(self.ess))


def _split(draws: np.ndarray) -> np.ndarray:
    half = draws.shape[1] // 2
    return np.concatenate([draws[:, :half], draws[:, -half:]], axis=0)


def split_rhat(draws: np.ndarray) -> float:
    """Split potential scale reduction factor.

    Each chain is cut in half; with ``m`` half-chains of length ``n``,
    ``W`` the mean within-half variance and ``B/n`` the variance of the
    half-chain means, ``rhat = sqrt(((n - 1)/n * W + B/n) / W)``. Returns
    ``nan`` when every half-chain is constant at the same value and ``inf``
    when they are constant at different values.
    """
    draws = np.asarray(draws, dtype=np.float64)
    if draws.ndim != 2 or draws.shape[0] < 2 or draws.shape[1] < 4:
        return math.nan
    x = _split(draws)
    n = x.shape[1]
    w = x.var(axis=1, ddof=1).mean()
    b_over_n = x.mean(axis=1).var(ddof=1)
    if w == 0:
        return math.inf if b_over_n > 0 else math.nan
    return math.sqrt(((n - 1) / n * w + b_over_n) / w)


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    size = 2 ** int(math.ceil(math.log2(2 * n)))
    centred = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(centred, n=size, axis=-1)
    return np.fft.irfft(f * np.conj(f), n=size, axis=-1)[..., :n] / n


def effective_sample_size(draws: np.ndarray) -> float:
    """Multi-chain effective sample size on split chains.

    Autocorrelations are combined across chains as
    ``rho_t = 1 - (W - mean_c acov_c(t)) / var_plus`` and summed with
    Geyer's initial positive, monotone sequence rule. Returns ``nan`` for
    zero-variance input or fewer than 10 draws per chain.
    """
    draws = np.asarray(draws, dtype=np.float64)
    if draws.ndim != 2 or draws.shape[1] < 10:
        return math.nan
    x = _split(draws)
    m, n = x.shape
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1.0)
    w = chain_var.mean()
    var_plus = w * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if not var_plus > 0:
        return math.nan
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum consecutive pairs while positive, enforce monotone pairs
    tau = -1.0
    prev_pair = math.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev_pair)
        tau += 2.0 * pair
        prev_pair = pair
        t += 2
    tau = max(tau, 1.0 / math.log10(m * n))
    return m * n / tau


def diagnostics(samples: PosteriorSamples) -> Diagnostics:
    rhat = split_rhat(samples.mu) if samples.n_chains >= 2 else math.nan
    ess = effective_sample_size(samples.mu)
    if math.isnan(rhat) or math.isnan(ess):
        log.debug("convergence diagnostics unavailable for %d x %d draws", samples.n_chains, samples.n_samples)
    return Diagnostics(rhat, ess)


# --- summaries -------------------------------------------------------------


def quantiles(x: np.ndarray, levels: Iterable[float]) -> list[float]:
    """Empirical quantiles by linear interpolation of order statistics.

    For sorted ``x[0..n-1]`` and level ``p``, with ``h = (n - 1) p``, the
    quantile is ``x[floor(h)] + (h - floor(h)) (x[floor(h)+1] - x[floor(h)])``
    (Hyndman and Fan type 7).
    """
    return [float(v) for v in np.quantile(np.asarray(x).ravel(), list(levels), method="linear")]


def summarize(samples: PosteriorSamples, thresholds: Sequence[float], levels: Sequence[float]) -> PosteriorSummary:
    """Pool all chains and estimate means, exceedance probabilities and percentiles."""
    thresholds = [float(t) for t in thresholds]
    levels = sorted(float(p) for p in levels)
    mu = samples.mu.ravel()
    if mu.size == 0:
        raise ValueError("no samples to summarise")
    delta = samples.delta.reshape(-1, samples.delta.shape[-1])
    diag = diagnostics(samples) if samples.n_samples >= 10 else Diagnostics(math.nan, math.nan)
    return PosteriorSummary(
        mean_mu=float(mu.mean()),
        exceedance={t: float(np.mean(mu > t)) for t in thresholds},
        percentiles_mu=dict(zip(levels, quantiles(mu, levels))),
        mean_delta=[float(v) for v in delta.mean(axis=0)],
        exceedance_delta=[{t: float(np.mean(delta[:, i] > t)) for t in thresholds} for i in range(delta.shape[1])],
        percentiles_delta=[dict(zip(levels, quantiles(delta[:, i], levels))) for i in range(delta.shape[1])],
        ess_mu=diag.ess,
        rhat_mu=diag.rhat,
    )
