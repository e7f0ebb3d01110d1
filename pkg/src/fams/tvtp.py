"""Time-varying transition probabilities through a multinomial logit link.

Coefficients are indexed by destination: ``gamma[j, k]`` is the intercept for
moving to ``j`` from source ``k`` and ``beta[j]`` the (source-common) slope
vector of destination ``j``. The baseline destination ``h0`` has zero
intercepts and slopes, so

    xi[j, k] = exp(gamma[j, k] + beta[j] @ z) / sum_l exp(gamma[l, k] + beta[l] @ z)

The Gibbs update of ``(gamma, beta)`` uses the partial difference random
utility representation with a finite normal scale-mixture approximation of
the logistic error, turning each destination's block into a heteroskedastic
Gaussian regression.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .core import DimensionError, PriorConfig, check_states
from .msar import TransitionPath, relabel_states

# Six-component zero-mean normal scale mixture for the standard logistic,
# fitted by minimizing Kullback-Leibler divergence. CDF sup-norm error ~7e-6.
LOGISTIC_WEIGHTS = np.array([
    0.0804203112767732, 0.30807810525690527, 0.3219255701628553,
    0.22191496153414114, 0.06402827732824616, 0.00363277444107906,
])
LOGISTIC_VARIANCES = np.array([
    0.9082235855109808, 1.7365995115572803, 2.9827819453138393,
    4.979342489800359, 8.733667666499288, 15.799035757720112,
])


def logistic_mixture_table():
    """The frozen ``(weight, variance)`` pairs approximating the logistic law."""
    return list(zip(LOGISTIC_WEIGHTS.tolist(), LOGISTIC_VARIANCES.tolist()))


@dataclass(frozen=True)
class FactorPath:
    """Centered factor series ``values`` (r, T) and the removed means (r,)."""

    values: np.ndarray
    means: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, ndmin=2)
        means = np.array(self.means, dtype=float, ndmin=1).reshape(v.shape[0])
        if v.shape[1] and np.any(np.abs(v.mean(axis=1)) > 1e-8):
            raise ValueError("factor series must be centered")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "means", means)

    @classmethod
    def from_raw(cls, raw) -> "FactorPath":
        raw = np.array(raw, dtype=float, ndmin=2)
        means = raw.mean(axis=1) if raw.shape[1] else np.zeros(raw.shape[0])
        return cls(raw - means[:, None], means)

    @classmethod
    def empty(cls, T: int) -> "FactorPath":
        return cls(np.zeros((0, T)), np.zeros(0))

    @property
    def r(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TvtpCoefficients:
    gamma: np.ndarray
    beta: np.ndarray
    h0: int
    d: int = 0

    def __post_init__(self):
        gamma = np.array(self.gamma, dtype=float, ndmin=2)
        H = gamma.shape[0]
        if gamma.shape != (H, H):
            raise DimensionError("gamma must be H x H")
        beta = np.array(self.beta, dtype=float).reshape(H, -1)
        if not 0 <= self.h0 < H:
            raise ValueError(f"baseline state {self.h0} outside 0..{H - 1}")
        if self.d < 0:
            raise ValueError("delay must be nonnegative")
        if np.any(gamma[self.h0] != 0) or np.any(beta[self.h0] != 0):
            raise ValueError("baseline destination coefficients must be exactly zero")
        gamma.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def zeros(cls, H: int, r: int, h0: int, d: int = 0) -> "TvtpCoefficients":
        return cls(np.zeros((H, H)), np.zeros((H, r)), h0, d)

    @property
    def H(self) -> int:
        return self.gamma.shape[0]

    @property
    def r(self) -> int:
        return self.beta.shape[1]

    def permute(self, order) -> "TvtpCoefficients":
        """Relabel states (new ``i`` = old ``order[i]``); the baseline moves along."""
        order = np.asarray(order)
        new_h0 = int(relabel_states([self.h0], order)[0])
        return replace(self, gamma=self.gamma[np.ix_(order, order)], beta=self.beta[order],
                       h0=new_h0)

    def rebase(self, h0: int) -> "TvtpCoefficients":
        """Express the same transition law relative to another baseline destination."""
        gamma = self.gamma - self.gamma[h0][None, :]
        beta = self.beta - self.beta[h0][None, :]
        return replace(self, gamma=gamma, beta=beta, h0=h0)


def _as_covariates(covariates, r):
    c = np.asarray(covariates, dtype=float)
    if c.ndim == 1:
        c = c.reshape(-1, r) if r else c.reshape(-1, 0)
    if c.ndim != 2 or c.shape[1] != r:
        raise DimensionError(f"covariates must have {r} columns")
    return c


def _softmax_columns(eta):
    eta = eta - eta.max(axis=-2, keepdims=True)
    e = np.exp(eta)
    return e / e.sum(axis=-2, keepdims=True)


def transition_matrix(coeffs: TvtpCoefficients, z) -> np.ndarray:
    """``H x H`` matrix of ``P(S_t = j | S_{t-1} = k)`` at covariate value ``z``."""
    z = np.asarray(z, dtype=float).reshape(coeffs.r)
    return _softmax_columns(coeffs.gamma + (coeffs.beta @ z)[:, None])


def lagged_covariates(factors: FactorPath, T: int, p: int, d: int) -> np.ndarray:
    """Covariates ``Z_{t-d}`` for every usable period ``t = p..T-1``, shape ``(T - p, r)``."""
    values = factors.values
    if values.shape[1] != T:
        raise DimensionError(f"factor path covers {values.shape[1]} periods, target has {T}")
    if p - d < 0:
        raise DimensionError(f"delay d={d} needs factor history before the first usable period p={p}")
    return values[:, p - d:T - d].T


def transition_path_array(coeffs: TvtpCoefficients, covariates) -> np.ndarray:
    """Stack of transition matrices for covariate rows ``(n, r)`` -> ``(n, H, H)``."""
    covariates = _as_covariates(covariates, coeffs.r)
    eta = coeffs.gamma[None, :, :] + (covariates @ coeffs.beta.T)[:, :, None]
    return _softmax_columns(eta)


def build_transition_path(coeffs: TvtpCoefficients, factors: FactorPath, T: int,
                          p: int) -> TransitionPath:
    """Transition path over the usable sample built from ``Z_{t-d}``."""
    return TransitionPath(transition_path_array(coeffs, lagged_covariates(factors, T, p, coeffs.d)))


# --- partial dRUM sampler ----------------------------------------------------

def sample_utility_differences(eta, outcome, rng: np.random.Generator) -> np.ndarray:
    """Latent ``w = eta + eps`` with logistic ``eps``, truncated to agree with ``outcome``.

    ``w > 0`` exactly when ``outcome`` is 1.
    """
    eta = np.asarray(eta, dtype=float)
    d = np.asarray(outcome, dtype=bool)
    u = rng.random(eta.shape)
    with np.errstate(divide="ignore"):
        log_d = np.where(d, 0.0, -np.inf)
        log_nd = np.where(d, -np.inf, 0.0)
        num = np.logaddexp(eta + np.log(u), log_d)
        den = np.logaddexp(np.log1p(-u), eta + log_nd)
    return num - den


def sample_mixture_components(eps, rng: np.random.Generator) -> np.ndarray:
    """Posterior draw of the scale-mixture component for each logistic error."""
    eps = np.asarray(eps, dtype=float)
    logp = (np.log(LOGISTIC_WEIGHTS) - 0.5 * np.log(LOGISTIC_VARIANCES)
            - 0.5 * eps[:, None] ** 2 / LOGISTIC_VARIANCES)
    logp -= logp.max(axis=1, keepdims=True)
    cdf = np.cumsum(np.exp(logp), axis=1)
    u = rng.random(eps.shape[0]) * cdf[:, -1]
    comp = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(comp, LOGISTIC_WEIGHTS.size - 1)


def draw_logit_coefficients(outcome, X, offset, coef, prior_mean, prior_var,
                            rng: np.random.Generator) -> np.ndarray:
    """One auxiliary-mixture Gibbs step for ``P(outcome=1) = logistic(X @ coef - offset)``.

    Draws the utility differences, the mixture components and then the
    coefficients from the resulting Gaussian regression with independent
    normal priors.
    """
    X = np.asarray(X, dtype=float)
    offset = np.asarray(offset, dtype=float)
    eta = X @ coef - offset
    w = sample_utility_differences(eta, outcome, rng)
    comp = sample_mixture_components(w - eta, rng)
    prec_obs = 1.0 / LOGISTIC_VARIANCES[comp]
    prior_prec = 1.0 / np.asarray(prior_var, dtype=float)
    P = (X * prec_obs[:, None]).T @ X + np.diag(prior_prec)
    rhs = X.T @ (prec_obs * (w + offset)) + prior_prec * prior_mean
    chol = np.linalg.cholesky(P)
    mean = solve_triangular(chol.T, solve_triangular(chol, rhs, lower=True), lower=False)
    return mean + solve_triangular(chol.T, rng.standard_normal(mean.shape[0]), lower=False)


def transition_pairs(states):
    """Source and destination of every observed transition ``(S_{t-1}, S_t)``, ``t >= 1``."""
    s = np.asarray(states)
    return s[:-1], s[1:]


def draw_mnl_coefficients(states, covariates, coeffs: TvtpCoefficients, prior: PriorConfig,
                          rng: np.random.Generator, slope_var=None) -> TvtpCoefficients:
    """Gibbs update of every non-baseline destination block ``(gamma[j, :], beta[j])``.

    Parameters
    ----------
    states : int array (n,)
        Current state path; transitions ``t = 1..n-1`` form the observations.
    covariates : array (n, r)
        ``Z_{t-d}`` for every usable period (row ``t`` drives ``S_{t-1} -> S_t``).
    slope_var : array (H, r) or None
        Prior variances of the slopes (normal-gamma ``2 psi / lambda2``); when
        ``None`` the fixed ``prior.beta_var`` is used.

    Sources share the slope vector of a destination, so each destination's
    block pools transitions from every source with source-specific intercept
    dummies. Sources never visited get their intercepts from the prior.
    """
    H, r = coeffs.H, coeffs.r
    states = check_states(states, H)
    covariates = _as_covariates(covariates, r)
    if covariates.shape[0] != states.shape[0]:
        raise DimensionError("one covariate row per usable period required")
    if H == 1:
        return coeffs
    src, dst = transition_pairs(states)
    Z = covariates[1:]
    n = src.shape[0]
    D = np.zeros((n, H))
    D[np.arange(n), src] = 1.0
    X = np.concatenate([D, Z], axis=1)
    if slope_var is None:
        slope_var = np.full((H, r), prior.beta_var)
    slope_var = np.asarray(slope_var, dtype=float).reshape(H, r)

    gamma = np.array(coeffs.gamma)
    beta = np.array(coeffs.beta)
    for j in range(H):
        if j == coeffs.h0:
            continue
        lin = gamma[:, src].T + Z @ beta.T  # (n, H) utilities of all destinations
        others = np.delete(lin, j, axis=1)
        offset = logsumexp(others, axis=1)
        coef = np.r_[gamma[j], beta[j]]
        prior_mean = np.r_[np.full(H, prior.g0), np.zeros(r)]
        prior_var = np.r_[np.full(H, prior.G0), slope_var[j]]
        new = draw_logit_coefficients(dst == j, X, offset, coef, prior_mean, prior_var, rng)
        gamma[j], beta[j] = new[:H], new[H:]
    return replace(coeffs, gamma=gamma, beta=beta)


def mnl_log_likelihood(states, covariates, coeffs: TvtpCoefficients) -> float:
    """``sum_t log xi[S_t, S_{t-1}, t]`` over the observed transitions."""
    states = np.asarray(states)
    if states.shape[0] < 2:
        return 0.0
    covariates = _as_covariates(covariates, coeffs.r)
    eta = coeffs.gamma[None, :, :] + (covariates @ coeffs.beta.T)[:, :, None]
    logxi = eta - logsumexp(eta, axis=1, keepdims=True)
    src, dst = transition_pairs(states)
    return float(logxi[np.arange(1, states.shape[0]), dst, src].sum())
