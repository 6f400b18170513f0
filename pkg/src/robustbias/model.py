"""Bias-adjusted random-effects model for binary outcomes.

Each study contributes two binomial arms on the logit scale,

    logit(p_control)   = beta_i
    logit(p_treatment) = beta_i + delta_i

and the study effects are exchangeable around the overall effect with a
variance inflated by the study quality,

    delta_i | mu, sigma2_theta ~ Normal(mu, sigma2_theta / q_i).

This module holds only the data types and the (unnormalised) log-posterior.
Sampling lives in :mod:`robustbias.sampler`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class ModelError(ValueError):
    """Invalid data, parameters or hyperparameters."""


@dataclass(frozen=True)
class StudyRecord:
    name: str
    n_control: int
    r_control: int
    n_treatment: int
    r_treatment: int

    def __post_init__(self):
        for arm, n, r in (
            ("control", self.n_control, self.r_control),
            ("treatment", self.n_treatment, self.r_treatment),
        ):
            if n < 1:
                raise ModelError(f"study {self.name!r}: {arm} arm needs at least one patient, got N={n}")
            if not 0 <= r <= n:
                raise ModelError(f"study {self.name!r}: {arm} arm responders r={r} outside [0, N={n}]")


@dataclass(frozen=True)
class StudyData:
    studies: tuple[StudyRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "studies", tuple(self.studies))
        if not self.studies:
            raise ModelError("K >= 1 required: no studies given")
        names = [s.name for s in self.studies]
        if len(set(names)) != len(names):
            raise ModelError(f"duplicate study names in {names}")

    def __len__(self) -> int:
        return len(self.studies)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.studies]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(r_control, n_control, r_treatment, n_treatment)`` as float arrays."""
        r1 = np.array([s.r_control for s in self.studies], dtype=np.float64)
        n1 = np.array([s.n_control for s in self.studies], dtype=np.float64)
        r2 = np.array([s.r_treatment for s in self.studies], dtype=np.float64)
        n2 = np.array([s.n_treatment for s in self.studies], dtype=np.float64)
        return r1, n1, r2, n2


@dataclass(frozen=True)
class Hyperparameters:
    """Prior hyperparameters.

    ``beta_i ~ N(mu_beta, sigma_beta**2)``, ``mu ~ N(mu_mu, sigma_mu**2)`` and
    ``sigma2_theta ~ InvGamma(alpha, lambda_)`` with density proportional to
    ``x**(-alpha - 1) * exp(-lambda_ / x)``.
    """

    mu_beta: float = 0.0
    sigma_beta: float = 10.0
    mu_mu: float = 0.0
    sigma_mu: float = 10.0
    alpha: float = 0.01
    lambda_: float = 0.01

    def __post_init__(self):
        for name in ("sigma_beta", "sigma_mu", "alpha", "lambda_"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ModelError(f"hyperparameter {name} must be positive and finite, got {value}")
        for name in ("mu_beta", "mu_mu"):
            if not math.isfinite(getattr(self, name)):
                raise ModelError(f"hyperparameter {name} must be finite")

    @property
    def var_beta(self) -> float:
        return self.sigma_beta**2

    @property
    def var_mu(self) -> float:
        return self.sigma_mu**2


@dataclass
class ParameterState:
    beta: np.ndarray
    delta: np.ndarray
    mu: float
    sigma2_theta: float

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.delta = np.asarray(self.delta, dtype=np.float64)
        if self.beta.shape != self.delta.shape or self.beta.ndim != 1:
            raise ModelError(f"beta {self.beta.shape} and delta {self.delta.shape} must be matching vectors")

    def copy(self) -> "ParameterState":
        return ParameterState(self.beta.copy(), self.delta.copy(), self.mu, self.sigma2_theta)


QualityVector = tuple  # tuple[float, ...], one quality per study, each in (0, 1]


def check_quality(q: Sequence[float], n_studies: int | None = None) -> np.ndarray:
    """Validate a quality vector and return it as a float array."""
    arr = np.asarray(q, dtype=np.float64)
    if arr.ndim != 1:
        raise ModelError(f"quality vector must be one-dimensional, got shape {arr.shape}")
    if n_studies is not None and arr.shape[0] != n_studies:
        raise ModelError(f"quality vector has {arr.shape[0]} entries for {n_studies} studies")
    if not np.all((arr > 0) & (arr <= 1)):
        raise ModelError(f"study qualities must lie in (0, 1], got {arr.tolist()}")
    return arr


# --- scalar kernels shared with the sampler -------------------------------


@numba.njit(cache=True, nogil=True)
def _inv_logit(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@numba.njit(cache=True, nogil=True)
def _log_inv_logit(x):
    # log(1 / (1 + exp(-x))) without overflow or underflow to -inf
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


@numba.njit(cache=True, nogil=True)
def _arm_loglik(r, n, eta):
    # r*log(p) + (n-r)*log(1-p), p = inv_logit(eta); binomial coefficient dropped
    return r * _log_inv_logit(eta) + (n - r) * _log_inv_logit(-eta)


# --- public API ------------------------------------------------------------


def logit(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ModelError(f"logit is defined on (0, 1), got {p}")
    return math.log(p / (1.0 - p))


def inv_logit(x: float) -> float:
    """Logistic function, evaluated on the branch that cannot overflow."""
    if not math.isfinite(x):
        raise ModelError(f"inv_logit needs a finite argument, got {x}")
    return _inv_logit(float(x))


def study_log_likelihood(record: StudyRecord, beta_i: float, delta_i: float) -> float:
    """Binomial log-likelihood of one study, without the binomial coefficients."""
    return _arm_loglik(float(record.r_control), float(record.n_control), float(beta_i)) + _arm_loglik(
        float(record.r_treatment), float(record.n_treatment), float(beta_i + delta_i)
    )


def normal_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + math.log(var) + (x - mean) ** 2 / var)


def inv_gamma_logpdf(x, shape, rate):
    return shape * math.log(rate) - math.lgamma(shape) - (shape + 1.0) * math.log(x) - rate / x


def delta_prior_logpdf(delta_i: float, mu: float, sigma2_theta: float, q_i: float) -> float:
    """Log-density of ``delta_i`` given ``mu``: normal with variance ``sigma2_theta / q_i``."""
    return normal_logpdf(delta_i, mu, sigma2_theta / q_i)


def log_posterior_unnorm(
    state: ParameterState, data: StudyData, hyper: Hyperparameters, q: Sequence[float]
) -> float:
    """Unnormalised log-posterior density of all model parameters for fixed ``q``.

    Prior terms are full normalised log-densities; only the binomial
    coefficients of the likelihood are omitted. Returns ``-inf`` when
    ``sigma2_theta <= 0``.
    """
    k = len(data)
    if state.beta.shape[0] != k:
        raise ModelError(f"state has {state.beta.shape[0]} studies, data has {k}")
    qv = check_quality(q, k)
    s2 = state.sigma2_theta
    if not s2 > 0:
        return -math.inf
    total = 0.0
    for i, rec in enumerate(data.studies):
        b, d = float(state.beta[i]), float(state.delta[i])
        total += study_log_likelihood(rec, b, d)
        total += normal_logpdf(b, hyper.mu_beta, hyper.var_beta)
        total += delta_prior_logpdf(d, state.mu, s2, float(qv[i]))
    total += normal_logpdf(state.mu, hyper.mu_mu, hyper.var_mu)
    total += inv_gamma_logpdf(s2, hyper.alpha, hyper.lambda_)
    return total
