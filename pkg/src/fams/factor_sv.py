"""Sparse factor model with stochastic volatility.

    x_t | Lambda, z_t, g_t ~ N(Lambda z_t, diag(exp(g_t)))
    z_t | h_t              ~ N(0, diag(exp(h_t)))
    g_it = mu_i + phi_i (g_i,t-1 - mu_i) + N(0, sigma2_i)
    h_jt = phi_j h_j,t-1 + N(0, sigma2_j)

Loadings are lower triangular (zeros above the diagonal) with a row-wise
normal-gamma prior. Log-variance paths are drawn by linearizing
``log(e_t**2)`` with a ten-component normal mixture for the log chi-square(1)
law and a Kalman forward-filter / backward-sampler.
"""

from __future__ import annotations

import warnings

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from numba import njit

from .core import PriorConfig
from .shrinkage import NormalGammaState, draw_gig, update_normal_gamma
from .tvtp import FactorPath

# Ten-component normal mixture for log(eps**2), eps ~ N(0, 1)
# (Omori, Chib, Shephard and Nakajima, 2007).
LOGCHI2_WEIGHTS = np.array([0.00609, 0.04775, 0.13057, 0.20674, 0.22715,
                            0.18842, 0.12047, 0.05591, 0.01575, 0.00115])
LOGCHI2_MEANS = np.array([1.92677, 1.34744, 0.73504, 0.02266, -0.85173,
                          -1.97278, -3.46788, -5.55246, -8.68384, -14.65000])
LOGCHI2_VARIANCES = np.array([0.11265, 0.17788, 0.26768, 0.40611, 0.62699,
                              0.98583, 1.57469, 2.54498, 4.16591, 7.33342])

LOG_OFFSET = 1e-8


@dataclass
class SVParams:
    """Parameters of a batch of AR(1) log-variance processes."""

    mu: np.ndarray
    phi: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        self.sigma2 = np.atleast_1d(np.asarray(self.sigma2, dtype=float))
        if np.any(np.abs(self.phi) >= 1):
            raise ValueError("SV persistence must satisfy |phi| < 1")
        if np.any(self.sigma2 <= 0):
            raise ValueError("SV innovation variances must be positive")

    def copy(self) -> "SVParams":
        return SVParams(self.mu.copy(), self.phi.copy(), self.sigma2.copy())


@dataclass
class FactorState:
    """One draw of every factor-model quantity."""

    loadings: np.ndarray          # (m, r), zeros above the diagonal
    factors: np.ndarray           # (r, T)
    idio_logvar: np.ndarray       # (m, T)
    fac_logvar: np.ndarray        # (r, T)
    idio_sv: SVParams
    fac_sv: SVParams               # mu fixed at 0
    ng: NormalGammaState           # local (m, r), global (m,)

    @property
    def m(self) -> int:
        return self.loadings.shape[0]

    @property
    def r(self) -> int:
        return self.loadings.shape[1]

    def covariance(self, t: int) -> np.ndarray:
        """``Sigma_t = Lambda V_t Lambda' + U_t``."""
        L = self.loadings
        return (L * np.exp(self.fac_logvar[:, t])) @ L.T + np.diag(np.exp(self.idio_logvar[:, t]))

    def copy(self) -> "FactorState":
        return FactorState(self.loadings.copy(), self.factors.copy(), self.idio_logvar.copy(),
                           self.fac_logvar.copy(), self.idio_sv.copy(), self.fac_sv.copy(),
                           self.ng)


def loading_mask(m: int, r: int) -> np.ndarray:
    """True where a loading is free (on or below the diagonal)."""
    return np.tril(np.ones((m, r), dtype=bool))


# --- factors and loadings --------------------------------------------------

def _batched_gaussian(prec, rhs, rng):
    """Draw from N(prec^-1 rhs, prec^-1) for stacks of small systems."""
    chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, rhs[..., None])[..., 0]
    z = rng.standard_normal(rhs.shape)
    noise = np.linalg.solve(np.swapaxes(chol, -1, -2), z[..., None])[..., 0]
    return mean + noise


def draw_factors(series, state: FactorState, rng: np.random.Generator) -> np.ndarray:
    """Draw every ``z_t`` from its Gaussian full conditional, shape ``(r, T)``.

    Precision ``Lambda' U_t^-1 Lambda + V_t^-1``; periods are independent.
    """
    X = np.asarray(series, dtype=float)
    L = state.loadings
    w = np.exp(-state.idio_logvar)                      # (m, T)
    prec = np.einsum("it,ij,ik->tjk", w, L, L)
    r = L.shape[1]
    idx = np.arange(r)
    prec[:, idx, idx] += np.exp(-state.fac_logvar).T
    rhs = np.einsum("it,ij,it->tj", w, L, X)
    return _batched_gaussian(prec, rhs, rng).T


def draw_loadings(series, state: FactorState, rng: np.random.Generator,
                  prior_var=None) -> np.ndarray:
    """Draw each loadings row from its Gaussian full conditional.

    Free entries get prior variance ``2 tau_ij / lambda2_i`` (or ``prior_var``
    when given); entries above the diagonal stay exactly zero.
    """
    X = np.asarray(series, dtype=float)
    m, r = state.loadings.shape
    Z = state.factors
    w = np.exp(-state.idio_logvar)
    pv = state.ng.prior_variances() if prior_var is None else np.broadcast_to(prior_var, (m, r))
    out = np.zeros((m, r))
    full = min(r - 1, m)
    for i in range(full):
        k = i + 1
        Zi = Z[:k]
        prec = (Zi * w[i]) @ Zi.T + np.diag(1.0 / pv[i, :k])
        rhs = Zi @ (w[i] * X[i])
        out[i, :k] = _batched_gaussian(prec[None], rhs[None], rng)[0]
    if m > full:
        rows = slice(full, m)
        prec = np.einsum("it,jt,kt->ijk", w[rows], Z, Z)
        idx = np.arange(r)
        prec[:, idx, idx] += 1.0 / pv[rows]
        rhs = (w[rows] * X[rows]) @ Z.T
        out[rows] = _batched_gaussian(prec, rhs, rng)
    return out


# --- log-variance paths ----------------------------------------------------

@njit(cache=True)
def _sv_ffbs(obs, obs_var, mu, phi, sigma2, z):
    k, T = obs.shape
    out = np.empty((k, T))
    a_f = np.empty(T)
    P_f = np.empty(T)
    for i in range(k):
        a = mu[i]
        P = sigma2[i] / (1.0 - phi[i] * phi[i])
        for t in range(T):
            if t > 0:
                a = mu[i] + phi[i] * (a_f[t - 1] - mu[i])
                P = phi[i] * phi[i] * P_f[t - 1] + sigma2[i]
            S = P + obs_var[i, t]
            K = P / S
            a_f[t] = a + K * (obs[i, t] - a)
            P_f[t] = P - K * P
        h = a_f[T - 1] + np.sqrt(max(P_f[T - 1], 0.0)) * z[i, T - 1]
        out[i, T - 1] = h
        for t in range(T - 2, -1, -1):
            Pp = phi[i] * phi[i] * P_f[t] + sigma2[i]
            G = P_f[t] * phi[i] / Pp
            m = a_f[t] + G * (h - mu[i] - phi[i] * (a_f[t] - mu[i]))
            v = P_f[t] - G * phi[i] * P_f[t]
            h = m + np.sqrt(max(v, 0.0)) * z[i, t]
            out[i, t] = h
    return out


def sample_logchi2_components(resid_obs, path, rng: np.random.Generator) -> np.ndarray:
    """Mixture indicators for ``log(e**2) - h`` (any shape)."""
    u = np.asarray(resid_obs - path, dtype=float)
    logp = (np.log(LOGCHI2_WEIGHTS) - 0.5 * np.log(LOGCHI2_VARIANCES)
            - 0.5 * (u[..., None] - LOGCHI2_MEANS) ** 2 / LOGCHI2_VARIANCES)
    logp -= logp.max(axis=-1, keepdims=True)
    cdf = np.cumsum(np.exp(logp), axis=-1)
    draw = rng.random(u.shape) * cdf[..., -1]
    comp = (draw[..., None] >= cdf).sum(axis=-1)
    return np.minimum(comp, LOGCHI2_WEIGHTS.size - 1)


def draw_logvariance_path(residuals, params: SVParams, rng: np.random.Generator,
                          current=None) -> np.ndarray:
    """Draw log-variance paths given residuals ``e_t ~ N(0, exp(path_t))``.

    ``residuals`` is ``(T,)`` or a batch ``(k, T)`` with one parameter entry per
    row. ``current`` is the present path, used to draw the mixture
    indicators; when omitted the indicators are drawn around the process mean.
    """
    e = np.asarray(residuals, dtype=float)
    single = e.ndim == 1
    e = np.atleast_2d(e)
    k, T = e.shape
    mu = np.broadcast_to(params.mu, (k,)).astype(float)
    phi = np.broadcast_to(params.phi, (k,)).astype(float)
    s2 = np.broadcast_to(params.sigma2, (k,)).astype(float)
    obs = np.log(e ** 2 + LOG_OFFSET)
    cur = np.broadcast_to(mu[:, None], (k, T)) if current is None else np.atleast_2d(current)
    comp = sample_logchi2_components(obs, cur, rng)
    y = np.ascontiguousarray(obs - LOGCHI2_MEANS[comp])
    v = np.ascontiguousarray(LOGCHI2_VARIANCES[comp])
    path = _sv_ffbs(y, v, np.ascontiguousarray(mu), np.ascontiguousarray(phi),
                    np.ascontiguousarray(s2), rng.standard_normal((k, T)))
    return path[0] if single else path


def _sv_sums(path, mu, phi):
    dev = path - mu[:, None]
    lag = dev[:, :-1]
    innov = dev[:, 1:] - phi[:, None] * lag
    ss = (1.0 - phi ** 2) * dev[:, 0] ** 2 + (innov ** 2).sum(axis=1)
    return dev, lag, ss


def _log_phi_target(phi, dev, sigma2, b0, b1):
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = (b0 - 1.0) * np.log1p(phi) + (b1 - 1.0) * np.log1p(-phi)
        lp += 0.5 * np.log1p(-phi ** 2)
        innov = dev[:, 1:] - phi[:, None] * dev[:, :-1]
        ss = (1.0 - phi ** 2) * dev[:, 0] ** 2 + (innov ** 2).sum(axis=1)
        lp -= ss / (2.0 * sigma2)
    return np.where(np.abs(phi) < 1.0, lp, -np.inf)


def draw_sv_params(path, prior: PriorConfig, centered: bool, current: SVParams,
                   rng: np.random.Generator) -> SVParams:
    """One Gibbs pass over ``(mu, phi, sigma2)`` for a batch of log-variance paths.

    ``mu`` is conjugate normal (centered processes only, else fixed at 0);
    ``phi`` takes a random-walk Metropolis step under the shifted Beta prior;
    ``sigma2`` is drawn exactly from its GIG full conditional under the
    ``Gamma(1/2, rate=1/(2 B_sigma))`` prior. The stationary distribution of
    the first period is part of the likelihood.
    """
    h = np.atleast_2d(np.asarray(path, dtype=float))
    k, T = h.shape
    if T < 3:
        raise ValueError("need a path of length >= 3")
    mu = np.broadcast_to(current.mu, (k,)).astype(float).copy()
    phi = np.broadcast_to(current.phi, (k,)).astype(float).copy()
    s2 = np.broadcast_to(current.sigma2, (k,)).astype(float).copy()

    if centered:
        prec = ((1.0 - phi ** 2) + (T - 1) * (1.0 - phi) ** 2) / s2 + 1.0 / prior.mu_g_var
        lin = ((1.0 - phi ** 2) * h[:, 0]
               + (1.0 - phi) * (h[:, 1:] - phi[:, None] * h[:, :-1]).sum(axis=1)) / s2
        lin += prior.mu_g_mean / prior.mu_g_var
        mu = lin / prec + rng.standard_normal(k) / np.sqrt(prec)
    else:
        mu = np.zeros(k)

    dev = h - mu[:, None]
    scale = np.sqrt(s2 / np.maximum((dev[:, :-1] ** 2).sum(axis=1), 1e-12))
    step = np.minimum(2.4 * scale, 0.5)
    prop = phi + step * rng.standard_normal(k)
    log_ratio = (_log_phi_target(prop, dev, s2, prior.b0, prior.b1)
                 - _log_phi_target(phi, dev, s2, prior.b0, prior.b1))
    accept = np.log(rng.random(k)) < log_ratio
    phi = np.where(accept, prop, phi)

    _, _, ss = _sv_sums(h, mu, phi)
    s2 = draw_gig(0.5 - T / 2.0, 1.0 / prior.B_sigma, np.maximum(ss, 1e-300), rng)
    s2 = np.atleast_1d(s2)
    return SVParams(mu, phi, s2)


def simulate_sv_path(params: SVParams, T: int, rng: np.random.Generator) -> np.ndarray:
    """Simulate stationary AR(1) log-variance paths, shape ``(k, T)``."""
    mu, phi, s2 = params.mu, params.phi, params.sigma2
    k = mu.shape[0]
    out = np.empty((k, T))
    out[:, 0] = mu + np.sqrt(s2 / (1 - phi ** 2)) * rng.standard_normal(k)
    for t in range(1, T):
        out[:, t] = mu + phi * (out[:, t - 1] - mu) + np.sqrt(s2) * rng.standard_normal(k)
    return out


# --- full sweep --------------------------------------------------------------

def initial_factor_state(series, r: int, prior: PriorConfig) -> FactorState:
    """Principal-components start rotated to the lower-triangular pattern."""
    X = np.asarray(series, dtype=float)
    m, T = X.shape
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    L = U[:, :r] * s[:r] / np.sqrt(T)
    Z = Vt[:r] * np.sqrt(T)
    Q, R = np.linalg.qr(L.T)            # L = R' Q'
    L0 = R.T
    Z0 = Q.T @ Z
    signs = np.sign(np.diag(L0[:r, :r]))
    signs[signs == 0] = 1.0
    L0 = L0 * signs
    Z0 = Z0 * signs[:, None]
    L0[~loading_mask(m, r)] = 0.0
    resid = X - L0 @ Z0
    g = np.log(np.maximum(resid.var(axis=1), 1e-4))
    hvar = np.log(np.maximum(Z0.var(axis=1), 1e-4))
    ng = NormalGammaState.initial(m, r, prior.omega_tau, prior.c_tau0, prior.c_tau1)
    return FactorState(
        loadings=L0, factors=Z0,
        idio_logvar=np.repeat(g[:, None], T, axis=1),
        fac_logvar=np.repeat(hvar[:, None], T, axis=1),
        idio_sv=SVParams(g, np.full(m, 0.5), np.full(m, 0.1)),
        fac_sv=SVParams(np.zeros(r), np.full(r, 0.5), np.full(r, 0.1)),
        ng=ng,
    )


def factor_sv_sweep(series, state: FactorState, prior: PriorConfig,
                    rng: np.random.Generator) -> FactorState:
    """Loadings, factors, log-variances, SV parameters, shrinkage, then sign fix."""
    X = np.asarray(series, dtype=float)
    m, r = state.loadings.shape
    st = state.copy()
    st.loadings = draw_loadings(X, st, rng)
    st.factors = draw_factors(X, st, rng)
    resid = X - st.loadings @ st.factors
    st.idio_logvar = draw_logvariance_path(resid, st.idio_sv, rng, current=st.idio_logvar)
    st.fac_logvar = draw_logvariance_path(st.factors, st.fac_sv, rng, current=st.fac_logvar)
    st.idio_sv = draw_sv_params(st.idio_logvar, prior, True, st.idio_sv, rng)
    st.fac_sv = draw_sv_params(st.fac_logvar, prior, False, st.fac_sv, rng)
    st.ng = update_normal_gamma(st.loadings, st.ng, rng, mask=loading_mask(m, r))
    # sign identification: positive diagonal loadings
    k = min(m, r)
    flip = np.ones(r)
    flip[:k] = np.where(np.diag(st.loadings[:k, :k]) < 0, -1.0, 1.0)
    st.loadings = st.loadings * flip
    st.factors = st.factors * flip[:, None]
    return st


@dataclass
class FactorDraws:
    """Retained factor-stage output."""

    factors: np.ndarray                  # (K, r, T)
    loadings: np.ndarray                 # (K, m, r)
    share_mean: np.ndarray               # (m, T) posterior mean explained share
    last: FactorState
    names: list = field(default_factory=list)


def run_factor_sv(series, r: int, prior: PriorConfig, burn: int, keep: int,
                  rng: np.random.Generator, thin: int = 1,
                  callback: Callable[[int, FactorState], None] | None = None) -> FactorDraws:
    """Run the factor-SV Gibbs sampler and keep every ``thin``-th post-burn-in draw."""
    X = np.asarray(series, dtype=float)
    m, T = X.shape
    if not 1 <= r <= m:
        raise ValueError(f"number of factors r={r} must lie in 1..{m}")
    state = initial_factor_state(X, r, prior)
    fac = np.empty((keep, r, T))
    lds = np.empty((keep, m, r))
    share = np.zeros((m, T))
    kept = 0
    for it in range(burn + keep * thin):
        state = factor_sv_sweep(X, state, prior, rng)
        if callback is not None:
            callback(it, state)
        if it >= burn and (it - burn) % thin == 0:
            fac[kept] = state.factors
            lds[kept] = state.loadings
            share += explained_variance_share(state)[3]
            kept += 1
    return FactorDraws(fac, lds, share / max(kept, 1), state)


# --- diagnostics -------------------------------------------------------------

def explained_variance_share(state: FactorState):
    """Share of each series' conditional variance carried by the factors.

    Returns ``(overall, per_series, per_time, shares)`` where ``shares`` is the
    ``(m, T)`` matrix of ``(Lambda V_t Lambda')_ii / Sigma_t,ii``.
    """
    common = (state.loadings ** 2) @ np.exp(state.fac_logvar)
    total = common + np.exp(state.idio_logvar)
    shares = common / total
    return float(shares.mean()), shares.mean(axis=1), shares.mean(axis=0), shares


def top_loadings_report(loadings, names, k: int):
    """Per factor, the ``k`` series names with the largest absolute loading.

    Ties keep series order.
    """
    L = np.asarray(loadings, dtype=float)
    if k > L.shape[0]:
        raise ValueError(f"k={k} exceeds the number of series {L.shape[0]}")
    return [[names[i] for i in np.argsort(-np.abs(L[:, j]), kind="stable")[:k]]
            for j in range(L.shape[1])]


def factor_count_criterion(series, r_candidates) -> dict:
    """BIC of a homoskedastic static factor model for each candidate ``r``.

    ``-2 * max loglik + k * log(T)`` with ``k = m r - r (r - 1) / 2 + m`` free
    parameters; the likelihood is the maximum-likelihood factor analysis fit
    on the ``T`` periods. Smaller is better.
    """
    from sklearn.decomposition import FactorAnalysis
    from sklearn.exceptions import ConvergenceWarning

    X = np.asarray(series, dtype=float).T            # (T, m)
    T, m = X.shape
    out = {}
    cache = {}
    for r in r_candidates:
        r = int(r)
        if not 1 <= r <= m:
            raise ValueError(f"candidate r={r} outside 1..{m}")
        if r not in cache:
            fa = FactorAnalysis(n_components=r, tol=1e-8, max_iter=5000, random_state=0)
            with warnings.catch_warnings():
                # the tight tolerance rarely converges fully; the fit is still at its plateau
                warnings.simplefilter("ignore", ConvergenceWarning)
                fa.fit(X)
            loglik = fa.score(X) * T
            k = m * r - r * (r - 1) / 2 + m
            cache[r] = -2.0 * loglik + k * np.log(T)
        out[r] = cache[r]
    return out


def export_centered_factor_means(draws) -> FactorPath:
    """Posterior mean factor path across draws ``(K, r, T)``, each row centered."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 2:
        draws = draws[None]
    if draws.shape[0] == 0:
        raise ValueError("no factor draws to average")
    return FactorPath.from_raw(draws.mean(axis=0))
