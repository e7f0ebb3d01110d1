"""Two-step estimation: factor stage, then the switching-regression Gibbs sampler.

Stage 2 sweep order: classification (filter + backward sampling of the
states), regression parameters, transition coefficients, shrinkage scales,
identification by relabeling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.stats import norm

from .core import PriorConfig, RegimeParams, TimePanel
from .factor_sv import FactorDraws, export_centered_factor_means, run_factor_sv
from .msar import (
    FilterUnderflowError,
    IdentificationRule,
    TransitionPath,
    draw_regime_regression,
    enforce_identification,
    ffbs_sample,
    filter_from_log_density,
    regime_log_density,
)
from .shrinkage import NormalGammaState, update_normal_gamma
from .tvtp import (
    FactorPath,
    TvtpCoefficients,
    draw_mnl_coefficients,
    lagged_covariates,
    transition_path_array,
)


class DivergenceError(RuntimeError):
    """A sweep produced a non-finite likelihood."""

    def __init__(self, sweep: int, reason: str = ""):
        super().__init__(f"chain diverged at sweep {sweep}{': ' + reason if reason else ''}")
        self.sweep = sweep


@dataclass(frozen=True)
class FamsConfig:
    """Model and chain settings. States and the baseline ``h0`` are zero-based."""

    H: int = 2
    p: int = 1
    switch_mean: bool = True
    switch_ar: bool = False
    switch_var: bool = False
    h0: int = 0
    d: int = 0
    r: int = 0
    burn: int = 1000
    keep: int = 1000
    thin: int = 1
    factor_burn: int = 1000
    factor_keep: int = 1000
    shrinkage: bool = False
    prior: PriorConfig = field(default_factory=PriorConfig)
    rule: IdentificationRule = field(default_factory=IdentificationRule)
    init: tuple | None = None
    seed: int | None = None

    def __post_init__(self):
        problems = []
        if self.H < 1:
            problems.append("H must be >= 1")
        if self.p < 0:
            problems.append("p must be >= 0")
        if not 0 <= self.h0 < max(self.H, 1):
            problems.append(f"h0 must lie in 0..{self.H - 1}")
        if self.d < 0:
            problems.append("d must be >= 0")
        if self.r < 0:
            problems.append("r must be >= 0")
        for name in ("burn", "factor_burn"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        for name in ("keep", "thin", "factor_keep"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class DrawStore:
    """Retained stage-2 draws.

    Transition coefficients are stored relative to ``report_h0`` so every
    draw shares one baseline. States are zero-based and cover the usable
    sample ``t = p .. T-1``.
    """

    mu: np.ndarray          # (K, H)
    phi: np.ndarray         # (K, H, p)
    sigma2: np.ndarray      # (K, H)
    gamma: np.ndarray       # (K, H, H) destination x source
    beta: np.ndarray        # (K, H, r)
    states: np.ndarray      # (K, n)
    loglik: np.ndarray      # (K,)
    ng_local: np.ndarray | None
    ng_global: np.ndarray | None
    config: FamsConfig
    factors: FactorPath
    factor_stage: FactorDraws | None = None
    two_step: bool = True

    @property
    def K(self) -> int:
        return self.mu.shape[0]

    @property
    def H(self) -> int:
        return self.mu.shape[1]

    def regime_params(self, k: int) -> RegimeParams:
        c = self.config
        return RegimeParams(self.mu[k], self.phi[k], self.sigma2[k], c.switch_mean,
                            c.switch_ar, c.switch_var)

    def coefficients(self, k: int) -> TvtpCoefficients:
        return TvtpCoefficients(self.gamma[k], self.beta[k], self.config.h0, self.config.d)


def _initial_params(y, config: FamsConfig) -> RegimeParams:
    prior = config.prior
    H, p = config.H, config.p
    s2 = float(np.var(y[p:])) if y.shape[0] - p > 1 else 1.0
    return RegimeParams(np.full(H, prior.m0), np.full((H, p), prior.r0), np.full(H, max(s2, 1e-8)),
                        config.switch_mean, config.switch_ar, config.switch_var)


def _filter(y, p, params, coeffs, cov, init):
    path = TransitionPath(transition_path_array(coeffs, cov))
    return filter_from_log_density(regime_log_density(y, p, params), path, init), path


def run_ms_stage(y, factors: FactorPath, config: FamsConfig, rng: np.random.Generator,
                 callback=None) -> DrawStore:
    """Gibbs sampler for the switching AR with factor-driven transitions."""
    y = np.asarray(y, dtype=float)
    T, p, H = y.shape[0], config.p, config.H
    cov = lagged_covariates(factors, T, p, config.d)
    r = cov.shape[1]
    n = T - p
    init = None if config.init is None else np.asarray(config.init, dtype=float)

    params = _initial_params(y, config)
    coeffs = TvtpCoefficients.zeros(H, r, config.h0, config.d)
    prior = config.prior
    ng = None
    if config.shrinkage and r > 0:
        ng = NormalGammaState.initial(H, r, prior.omega_psi, prior.c_psi0, prior.c_psi1)

    K = config.keep
    store = dict(mu=np.empty((K, H)), phi=np.empty((K, H, p)), sigma2=np.empty((K, H)),
                 gamma=np.empty((K, H, H)), beta=np.empty((K, H, r)),
                 states=np.empty((K, n), dtype=np.int8 if H < 128 else np.int64),
                 loglik=np.empty(K))
    ng_local = np.empty((K, H, r)) if ng is not None else None
    ng_global = np.empty((K, H)) if ng is not None else None

    kept = 0
    total = config.burn + K * config.thin
    for sweep in range(total):
        try:
            filt, path = _filter(y, p, params, coeffs, cov, init)
        except FilterUnderflowError as exc:
            raise DivergenceError(sweep, str(exc)) from exc
        if not np.isfinite(filt.loglik):
            raise DivergenceError(sweep, "non-finite log-likelihood")
        states = ffbs_sample(filt, path, rng)
        params = _checked_regression(y, p, states, prior, params, rng, sweep)
        if H > 1:
            slope_var = ng.prior_variances() if ng is not None else None
            coeffs = draw_mnl_coefficients(states, cov, coeffs, prior, rng, slope_var=slope_var)
            if ng is not None:
                mask = np.ones((H, r), dtype=bool)
                mask[coeffs.h0] = False
                ng = update_normal_gamma(coeffs.beta, ng, rng, mask=mask)
            params, states, (coeffs, ng), _ = enforce_identification(
                params, states, config.rule, coeffs, ng)
        if callback is not None:
            callback(sweep, params, coeffs, states)
        if sweep >= config.burn and (sweep - config.burn) % config.thin == 0:
            try:
                ll = _filter(y, p, params, coeffs, cov, init)[0].loglik
            except FilterUnderflowError as exc:
                raise DivergenceError(sweep, str(exc)) from exc
            if not np.isfinite(ll):
                raise DivergenceError(sweep, "non-finite log-likelihood")
            rep = coeffs.rebase(config.h0)
            store["mu"][kept] = params.mu
            store["phi"][kept] = params.phi
            store["sigma2"][kept] = params.sigma2
            store["gamma"][kept] = rep.gamma
            store["beta"][kept] = rep.beta
            store["states"][kept] = states
            store["loglik"][kept] = ll
            if ng is not None:
                ng_local[kept] = ng.local
                ng_global[kept] = ng.global_
            kept += 1
    return DrawStore(**store, ng_local=ng_local, ng_global=ng_global, config=config,
                     factors=factors)


def _checked_regression(y, p, states, prior, params, rng, sweep):
    new = draw_regime_regression(y, p, states, prior, params, rng)
    if not (np.all(np.isfinite(new.mu)) and np.all(np.isfinite(new.phi))
            and np.all(np.isfinite(new.sigma2))):
        raise DivergenceError(sweep, "non-finite regression draw")
    return new


def run_fams(panel: TimePanel, config: FamsConfig, rng: np.random.Generator | None = None,
             factors: FactorPath | None = None) -> DrawStore:
    """Full two-step estimation on ``panel``.

    Stage 1 runs the factor-SV sampler on the covariate panel (skipped when
    ``r == 0`` or when ``factors`` is supplied) and hands the centered
    posterior-mean factors to stage 2.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    stage1 = None
    if factors is None:
        if config.r > 0:
            stage1 = run_factor_sv(panel.series, config.r, config.prior, config.factor_burn,
                                   config.factor_keep, rng)
            factors = export_centered_factor_means(stage1.factors)
        else:
            factors = FactorPath.empty(panel.T)
    store = run_ms_stage(panel.target, factors, config, rng)
    store.factor_stage = stage1
    return store


def run_chains(panel: TimePanel, config: FamsConfig, chains: int, seed: int | None = None,
               workers: int = 1) -> list[DrawStore]:
    """Run ``chains`` stage-2 chains on one shared factor stage.

    Streams come from ``SeedSequence(seed).spawn(chains + 1)``: child 0 drives
    the factor stage, child ``c + 1`` drives chain ``c``.
    """
    seed = config.seed if seed is None else seed
    children = np.random.SeedSequence(seed).spawn(chains + 1)
    stage1 = None
    if config.r > 0:
        stage1 = run_factor_sv(panel.series, config.r, config.prior, config.factor_burn,
                               config.factor_keep, np.random.default_rng(children[0]))
        factors = export_centered_factor_means(stage1.factors)
    else:
        factors = FactorPath.empty(panel.T)
    jobs = [(panel.target, factors, config, children[c + 1]) for c in range(chains)]
    if workers > 1 and chains > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            stores = list(pool.map(_chain_job, jobs))
    else:
        stores = [_chain_job(j) for j in jobs]
    for s in stores:
        s.factor_stage = stage1
    return stores


def _chain_job(job):
    y, factors, config, ss = job
    return run_ms_stage(y, factors, config, np.random.default_rng(ss))


def merge_stores(stores) -> DrawStore:
    """Concatenate the draws of several chains sharing one configuration."""
    stores = list(stores)
    if not stores:
        raise ValueError("nothing to merge")
    first = stores[0]
    if len(stores) == 1:
        return first

    def cat(name):
        parts = [getattr(s, name) for s in stores]
        return None if parts[0] is None else np.concatenate(parts, axis=0)

    return replace(first, mu=cat("mu"), phi=cat("phi"), sigma2=cat("sigma2"),
                   gamma=cat("gamma"), beta=cat("beta"), states=cat("states"),
                   loglik=cat("loglik"), ng_local=cat("ng_local"), ng_global=cat("ng_global"))


# --- summaries ---------------------------------------------------------------

def hpd_interval(draws, level: float):
    """Shortest interval containing ``ceil(level * K)`` of the sorted draws."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    K = x.shape[0]
    if K == 0:
        raise ValueError("no draws")
    k = max(int(math.ceil(level * K)), 1)
    widths = x[k - 1:] - x[:K - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def parameter_draws(store: DrawStore, state_labels=None, state_order=None) -> dict:
    """Flatten the store into ``name -> (K,)`` arrays of scalar parameters.

    Blocks shared across states appear once. Labels default to ``1..H``;
    ``state_order`` (zero-based) sets the listing order of state-specific rows.
    """
    c = store.config
    H = store.H
    labels = [str(h + 1) for h in range(H)] if state_labels is None else list(state_labels)
    order = list(range(H)) if state_order is None else [int(h) for h in state_order]
    if sorted(order) != list(range(H)):
        raise ValueError(f"state_order must be a permutation of 0..{H - 1}")
    out = {}
    if c.switch_mean:
        for h in order:
            out[f"mu_{labels[h]}"] = store.mu[:, h]
    else:
        out["mu"] = store.mu[:, 0]
    if c.switch_var:
        for h in order:
            out[f"sigma2_{labels[h]}"] = store.sigma2[:, h]
    else:
        out["sigma2"] = store.sigma2[:, 0]
    for j in range(store.phi.shape[2]):
        if c.switch_ar:
            for h in order:
                out[f"phi{j + 1}_{labels[h]}"] = store.phi[:, h, j]
        else:
            out[f"phi{j + 1}"] = store.phi[:, 0, j]
    for dst in order:
        if dst == c.h0:
            continue
        for src in order:
            out[f"gamma_{labels[dst]}|{labels[src]}"] = store.gamma[:, dst, src]
        for i in range(store.beta.shape[2]):
            out[f"beta_{labels[dst]}_{i + 1}"] = store.beta[:, dst, i]
    return out


def summarize(store: DrawStore, hpd_level: float = 0.9, state_labels=None,
              state_order=None) -> pd.DataFrame:
    """Posterior median and HPD bounds per scalar parameter.

    ``frame.attrs["two_step"]`` is True when the factors were plugged in as
    fixed posterior means, so intervals ignore factor-estimation uncertainty.
    """
    if store.K == 0:
        raise ValueError("empty draw store")
    rows = []
    for name, d in parameter_draws(store, state_labels, state_order).items():
        lo, hi = hpd_interval(d, hpd_level)
        rows.append((name, float(np.median(d)), lo, hi))
    frame = pd.DataFrame(rows, columns=["parameter", "median", "hpd_lower", "hpd_upper"])
    frame = frame.set_index("parameter")
    frame.attrs["two_step"] = bool(store.two_step and store.factors.r > 0)
    frame.attrs["hpd_level"] = hpd_level
    return frame


def smoothed_state_probabilities(store: DrawStore) -> np.ndarray:
    """Share of retained draws in each state per usable period, ``(n, H)``."""
    if store.K == 0:
        raise ValueError("empty draw store")
    H = store.H
    counts = np.stack([(store.states == h).sum(axis=0) for h in range(H)], axis=1)
    return counts / store.K


# --- log posterior kernel ---------------------------------------------------

def log_prior(params: RegimeParams, coeffs: TvtpCoefficients, prior: PriorConfig,
              slope_var=None) -> float:
    """Log prior density of the regression and transition parameters."""
    mu = params.mu if params.switch_mean else params.mu[:1]
    phi = params.phi if params.switch_ar else params.phi[:1]
    s2 = params.sigma2 if params.switch_var else params.sigma2[:1]
    lp = norm.logpdf(mu, prior.m0, math.sqrt(prior.M0)).sum()
    lp += norm.logpdf(phi, prior.r0, math.sqrt(prior.R0)).sum()
    c, d = prior.c0_sig, prior.d0_sig
    lp += (c * math.log(d) - math.lgamma(c) - (c + 1) * np.log(s2) - d / s2).sum()
    H = coeffs.H
    free = np.arange(H) != coeffs.h0
    lp += norm.logpdf(coeffs.gamma[free], prior.g0, math.sqrt(prior.G0)).sum()
    if coeffs.r:
        sv = np.full((H, coeffs.r), prior.beta_var) if slope_var is None else np.asarray(slope_var)
        lp += norm.logpdf(coeffs.beta[free], 0.0, np.sqrt(sv[free])).sum()
    return float(lp)


def log_posterior_kernel(y, p: int, params: RegimeParams, coeffs: TvtpCoefficients,
                         covariates, prior: PriorConfig, slope_var=None, init=None) -> float:
    """Unnormalized log posterior with the states summed out by the filter."""
    filt, _ = _filter(np.asarray(y, float), p, params, coeffs, covariates, init)
    return filt.loglik + log_prior(params, coeffs, prior, slope_var)
