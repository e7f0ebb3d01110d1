"""Markov switching AR(p) machinery.

Transition matrices use ``xi[t, j, k] = P(S_t = j | S_{t-1} = k)``, so each
column is a distribution over destinations. Filtering runs on the ``n = T - p``
usable observations; ``init`` is the distribution of the first usable state,
so ``path[0]`` is carried for alignment but does not enter the recursion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit
from scipy.linalg import solve_triangular

from .core import DimensionError, PriorConfig, RegimeParams, build_lag_design, check_states

_LOG_2PI = np.log(2.0 * np.pi)


class FilterUnderflowError(FloatingPointError):
    """All regime densities vanished at some period."""

    def __init__(self, t: int):
        super().__init__(f"all regime densities underflow at usable period t={t}")
        self.t = t


@dataclass(frozen=True)
class TransitionPath:
    """Sequence of column-stochastic transition matrices, shape ``(n, H, H)``."""

    matrices: np.ndarray

    def __post_init__(self):
        xi = np.array(self.matrices, dtype=float)
        if xi.ndim != 3 or xi.shape[1] != xi.shape[2]:
            raise DimensionError("transition path must have shape (n, H, H)")
        if np.any(xi < 0) or np.any(xi > 1):
            raise ValueError("transition probabilities must lie in [0, 1]")
        if not np.allclose(xi.sum(axis=1), 1.0, rtol=0, atol=1e-10):
            raise ValueError("each source column must sum to one")
        xi.setflags(write=False)
        object.__setattr__(self, "matrices", xi)

    def __len__(self):
        return self.matrices.shape[0]

    @property
    def H(self) -> int:
        return self.matrices.shape[1]


class FilterOutput(NamedTuple):
    filtered: np.ndarray
    predicted: np.ndarray
    loglik: float


def _matrices(path) -> np.ndarray:
    return np.asarray(getattr(path, "matrices", path), dtype=float)


def regime_log_density(y, p: int, params: RegimeParams) -> np.ndarray:
    """Log normal density of every usable ``y_t`` under every regime, ``(T - p, H)``."""
    X, resp = build_lag_design(y, p)
    coef = np.column_stack([params.mu[:, None], params.phi]).T  # (p+1, H)
    resid = resp[:, None] - X @ coef
    return -0.5 * (_LOG_2PI + np.log(params.sigma2) + resid ** 2 / params.sigma2)


def regime_density(y_t: float, lags, params: RegimeParams) -> np.ndarray:
    """Normal density of one observation under each regime.

    ``lags[j]`` is ``y_{t-j-1}``.
    """
    lags = np.asarray(lags, dtype=float).reshape(params.p)
    mean = params.mu + params.phi @ lags
    return np.exp(-0.5 * (y_t - mean) ** 2 / params.sigma2) / np.sqrt(2 * np.pi * params.sigma2)


@njit(cache=True)
def _filter_kernel(logdens, xi, init):
    n, H = logdens.shape
    filtered = np.empty((n, H))
    predicted = np.empty((n, H))
    loglik = 0.0
    for t in range(n):
        if t == 0:
            for h in range(H):
                predicted[0, h] = init[h]
        else:
            for j in range(H):
                acc = 0.0
                for k in range(H):
                    acc += xi[t, j, k] * filtered[t - 1, k]
                predicted[t, j] = acc
        mx = logdens[t, 0]
        for h in range(1, H):
            if logdens[t, h] > mx:
                mx = logdens[t, h]
        total = 0.0
        for h in range(H):
            v = predicted[t, h] * np.exp(logdens[t, h] - mx)
            filtered[t, h] = v
            total += v
        if not (total > 0.0) or not np.isfinite(mx):
            return filtered, predicted, loglik, t
        for h in range(H):
            filtered[t, h] /= total
        loglik += np.log(total) + mx
    return filtered, predicted, loglik, -1


@njit(cache=True)
def _backward_kernel(filtered, xi, u):
    n, H = filtered.shape
    states = np.empty(n, dtype=np.int64)
    w = np.empty(H)
    for t in range(n - 1, -1, -1):
        total = 0.0
        for h in range(H):
            if t == n - 1:
                w[h] = filtered[t, h]
            else:
                w[h] = filtered[t, h] * xi[t + 1, states[t + 1], h]
            total += w[h]
        target = u[t] * total
        acc = 0.0
        pick = H - 1
        for h in range(H):
            acc += w[h]
            if target < acc:
                pick = h
                break
        states[t] = pick
    return states


def filter_from_log_density(logdens, path, init=None) -> FilterOutput:
    """Hamilton recursion given precomputed regime log densities ``(n, H)``."""
    logdens = np.ascontiguousarray(logdens, dtype=float)
    n, H = logdens.shape
    xi = np.ascontiguousarray(_matrices(path))
    if xi.shape != (n, H, H):
        raise DimensionError(f"transition path shape {xi.shape} does not match ({n}, {H}, {H})")
    init = np.full(H, 1.0 / H) if init is None else np.asarray(init, dtype=float)
    if init.shape != (H,) or np.any(init < 0) or abs(init.sum() - 1.0) > 1e-10:
        raise ValueError("init must be a probability vector over the H states")
    filtered, predicted, loglik, bad = _filter_kernel(logdens, xi, init)
    if bad >= 0:
        raise FilterUnderflowError(int(bad))
    return FilterOutput(filtered, predicted, float(loglik))


def hamilton_filter(y, p: int, params: RegimeParams, path, init=None) -> FilterOutput:
    """Filtered and one-step predicted state probabilities plus the log-likelihood.

    The likelihood conditions on the first ``p`` observations. ``init``
    defaults to the uniform distribution.
    """
    return filter_from_log_density(regime_log_density(y, p, params), path, init)


def ffbs_sample(filt: FilterOutput, path, rng: np.random.Generator) -> np.ndarray:
    """Joint draw of the usable-sample state path by backward sampling."""
    filtered = np.ascontiguousarray(filt.filtered)
    xi = np.ascontiguousarray(_matrices(path))
    return _backward_kernel(filtered, xi, rng.random(filtered.shape[0]))


def smoothed_probabilities(filt: FilterOutput, path) -> np.ndarray:
    """Exact smoothed marginals ``P(S_t = h | y)`` by the backward recursion."""
    xi = _matrices(path)
    F, P = filt.filtered, filt.predicted
    n, H = F.shape
    out = np.empty_like(F)
    out[-1] = F[-1]
    for t in range(n - 2, -1, -1):
        ratio = np.divide(out[t + 1], P[t + 1], out=np.zeros(H), where=P[t + 1] > 0)
        out[t] = F[t] * (xi[t + 1].T @ ratio)
        out[t] /= out[t].sum()
    return out


# --- conditional regression draws ------------------------------------------

def _regression_blocks(y, p, states, params_like: RegimeParams):
    H = params_like.H
    X, resp = build_lag_design(y, p)
    n = resp.shape[0]
    states = check_states(states, H)
    if states.shape[0] != n:
        raise DimensionError(f"state path length {states.shape[0]} != usable sample {n}")
    D = np.zeros((n, H))
    D[np.arange(n), states] = 1.0
    cols = [D] if params_like.switch_mean else [np.ones((n, 1))]
    if p:
        lags = X[:, 1:]
        if params_like.switch_ar:
            cols.append(np.concatenate([lags * D[:, [h]] for h in range(H)], axis=1))
        else:
            cols.append(lags)
    return np.concatenate(cols, axis=1), resp, states


def _split_coefficients(coef, H, p, switch_mean, switch_ar):
    k = H if switch_mean else 1
    mu = coef[:k] if switch_mean else np.repeat(coef[0], H)
    rest = coef[k:]
    if p == 0:
        phi = np.zeros((H, 0))
    elif switch_ar:
        phi = rest.reshape(H, p)
    else:
        phi = np.tile(rest, (H, 1))
    return mu, phi


def _coefficient_conditional(y, p, states, prior: PriorConfig, current: RegimeParams):
    W, resp, states = _regression_blocks(y, p, states, current)
    k_mu = current.H if current.switch_mean else 1
    k_ar = W.shape[1] - k_mu
    prior_mean = np.r_[np.full(k_mu, prior.m0), np.full(k_ar, prior.r0)]
    prior_prec = np.r_[np.full(k_mu, 1.0 / prior.M0), np.full(k_ar, 1.0 / prior.R0)]
    w = 1.0 / current.sigma2[states]
    prec = (W * w[:, None]).T @ W + np.diag(prior_prec)
    rhs = W.T @ (w * resp) + prior_prec * prior_mean
    chol = np.linalg.cholesky(prec)
    z = solve_triangular(chol, rhs, lower=True)
    mean = solve_triangular(chol.T, z, lower=False)
    return W, resp, states, chol, mean


def regression_posterior(y, p: int, states, prior: PriorConfig, current: RegimeParams):
    """Normal full conditional of the intercept/AR coefficients given ``sigma2``.

    Returns the posterior mean and covariance of the stacked coefficient
    vector (intercepts first, then AR terms, state-major when switching).
    """
    *_, chol, mean = _coefficient_conditional(y, p, states, prior, current)
    inv_chol = solve_triangular(chol, np.eye(chol.shape[0]), lower=True)
    return mean, inv_chol.T @ inv_chol


def draw_regime_regression(y, p: int, states, prior: PriorConfig, current: RegimeParams,
                           rng: np.random.Generator) -> RegimeParams:
    """Draw ``(mu, phi)`` given ``sigma2`` and then ``sigma2`` given ``(mu, phi)``.

    Blocks whose switch flag is off are pooled over all observations. A
    switching state without observations is drawn from its prior, which the
    conjugate formulas deliver automatically.
    """
    W, resp, states, chol, mean = _coefficient_conditional(y, p, states, prior, current)
    H = current.H
    coef = mean + solve_triangular(chol.T, rng.standard_normal(mean.shape[0]), lower=False)
    mu, phi = _split_coefficients(coef, H, p, current.switch_mean, current.switch_ar)

    resid = resp - W @ coef
    if current.switch_var:
        counts = np.bincount(states, minlength=H)
        ssr = np.bincount(states, weights=resid ** 2, minlength=H)
        sigma2 = (prior.d0_sig + ssr / 2.0) / rng.gamma(prior.c0_sig + counts / 2.0)
    else:
        shape = prior.c0_sig + resp.shape[0] / 2.0
        scale = prior.d0_sig + (resid ** 2).sum() / 2.0
        sigma2 = np.full(H, scale / rng.gamma(shape))
    return RegimeParams(mu=mu, phi=phi, sigma2=sigma2, switch_mean=current.switch_mean,
                        switch_ar=current.switch_ar, switch_var=current.switch_var)


# --- identification --------------------------------------------------------

class IdentificationError(ValueError):
    pass


@dataclass(frozen=True)
class IdentificationRule:
    """Strict ordering of one state-indexed block.

    ``block`` is ``"mu"``, ``"sigma2"`` or ``"phi1"`` (first AR coefficient);
    ``descending=True`` means state 0 carries the largest value.
    """

    block: str = "mu"
    descending: bool = True

    def values(self, params: RegimeParams) -> np.ndarray:
        if self.block == "mu":
            return params.mu
        if self.block == "sigma2":
            return params.sigma2
        if self.block == "phi1":
            return params.phi[:, 0]
        raise ValueError(f"unknown identification block {self.block!r}")

    def order(self, params: RegimeParams) -> np.ndarray:
        v = np.asarray(self.values(params), dtype=float)
        order = np.argsort(-v if self.descending else v, kind="stable")
        sv = v[order]
        gaps = np.abs(np.diff(sv))
        tol = 4 * np.finfo(float).eps * np.maximum(np.abs(sv[:-1]), 1.0)
        if np.any(gaps <= tol):
            raise IdentificationError(f"tied {self.block} values {v} cannot be ordered")
        return order

    def satisfied(self, params: RegimeParams) -> bool:
        d = np.diff(self.values(params))
        return bool(np.all(d < 0) if self.descending else np.all(d > 0))


def relabel_states(states, order) -> np.ndarray:
    """Map old labels to new ones when new state ``i`` is old state ``order[i]``."""
    order = np.asarray(order)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    return inverse[np.asarray(states)]


def enforce_identification(params: RegimeParams, states, rule: IdentificationRule,
                           *extras):
    """Permute every state-indexed component so ``rule`` holds.

    ``extras`` are objects with a ``permute(order)`` method (MNL coefficients,
    shrinkage state) and are relabeled consistently.

    Returns
    -------
    params, states, extras (tuple), order
    """
    if params.H == 1:
        return params, np.asarray(states), tuple(extras), np.zeros(1, dtype=int)
    order = rule.order(params)
    if np.array_equal(order, np.arange(params.H)):
        return params, np.asarray(states), tuple(extras), order
    new_extras = tuple(None if e is None else e.permute(order) for e in extras)
    return params.permute(order), relabel_states(states, order), new_extras, order


def companion_matrix(phi) -> np.ndarray:
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    p = phi.shape[0]
    C = np.zeros((p, p))
    C[0] = phi
    if p > 1:
        C[1:, :-1] = np.eye(p - 1)
    return C


def companion_eigenvalues(phi) -> np.ndarray:
    """Eigenvalues of the AR(p) companion matrix; moduli < 1 means stationary."""
    if np.size(phi) < 1:
        raise ValueError("need at least one AR coefficient")
    return np.linalg.eigvals(companion_matrix(phi))


def is_stationary(phi, tol: float = 1e-10) -> bool:
    return bool(np.all(np.abs(companion_eigenvalues(phi)) < 1.0 - tol))
