"""Synthetic-data study comparing transition-covariate choices.

Data sets are generated in layers: AR(1) factors, a sparse factor-SV panel
built from them, and a two-state switching AR(1) whose transition
probabilities depend on the true factors. Each data set is then fitted with
an intercept-only transition model, the full panel as covariates, and the
estimated factors as covariates, with and without normal-gamma shrinkage.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd

from .core import PriorConfig, standardize_panel
from .factor_sv import SVParams, export_centered_factor_means, run_factor_sv, simulate_sv_path
from .msar import IdentificationRule, TransitionPath
from .pipeline import DivergenceError, DrawStore, FamsConfig, run_ms_stage
from .tvtp import FactorPath, TvtpCoefficients, transition_matrix


@dataclass(frozen=True)
class SimStudyConfig:
    """Truth, study design and chain lengths. States are zero-based."""

    r: int = 3
    m: int = 200
    T: int = 250
    N: int = 100
    H: int = 2
    factor_ar: float = 0.7
    gamma: tuple = ((1.5, -1.5), (0.0, 0.0))
    beta: tuple = ((-1.2, 1.1, 0.9), (0.0, 0.0, 0.0))
    h0: int = 1
    mu: tuple = (-0.25, 0.25)
    phi: float = 0.55
    sigma2: tuple = (0.1, 0.05)
    sv_mu_mean: float = 0.2
    sv_mu_var: float = 0.2
    sv_phi_bound: float = 0.8
    sv_sigma2_mean: float = 0.2
    sv_sigma2_var: float = 0.2
    loading_zero_prob: float = 0.3
    loading_scale: float = 1.0
    variants: tuple = ("intercept", "panel", "fams")
    omega_grid: tuple = (0.2, 0.6, 1.0)
    subsample: int = 0
    burn: int = 2000
    keep: int = 5000
    factor_burn: int = 2000
    factor_keep: int = 2000
    seed: int = 0
    prior: PriorConfig = field(default_factory=PriorConfig)

    def __post_init__(self):
        counts = ("r", "m", "T", "N", "H", "keep", "factor_keep")
        bad = [k for k in counts if getattr(self, k) < 1]
        if bad:
            raise ValueError(f"counts must be positive: {', '.join(bad)}")
        H, r = self.H, self.r
        if np.shape(self.gamma) != (H, H) or np.shape(self.beta) != (H, r):
            raise ValueError("transition truth does not match H and r")
        if len(self.mu) != H or len(self.sigma2) != H:
            raise ValueError("AR truth does not match H")
        unknown = set(self.variants) - {"intercept", "panel", "fams"}
        if unknown:
            raise ValueError(f"unknown variants: {sorted(unknown)}")
        if "intercept" not in self.variants:
            raise ValueError("the intercept-only baseline is required")

    def truth_coefficients(self) -> TvtpCoefficients:
        return TvtpCoefficients(np.array(self.gamma, float), np.array(self.beta, float), self.h0)

    def cells(self) -> list[tuple[str, float | None]]:
        """Every (variant, omega) combination; ``omega=None`` means no shrinkage."""
        out = [("intercept", None)]
        for v in ("panel", "fams"):
            if v in self.variants:
                out.append((v, None))
                out.extend((v, float(w)) for w in self.omega_grid)
        if self.subsample:
            out.append(("subsample", None))
        return out


# --- data generation -----------------------------------------------------------

def simulate_factors(config: SimStudyConfig, rng: np.random.Generator) -> np.ndarray:
    """``r`` stationary AR(1) paths with unit innovations, each centered, ``(r, T)``."""
    a = config.factor_ar
    f = np.empty((config.r, config.T))
    f[:, 0] = rng.standard_normal(config.r) / np.sqrt(1.0 - a * a)
    for t in range(1, config.T):
        f[:, t] = a * f[:, t - 1] + rng.standard_normal(config.r)
    return f - f.mean(axis=1, keepdims=True)


def simulate_loadings(config: SimStudyConfig, rng: np.random.Generator) -> np.ndarray:
    L = config.loading_scale * rng.standard_normal((config.m, config.r))
    L[rng.random(L.shape) < config.loading_zero_prob] = 0.0
    return np.tril(L)


def _draw_sv_truth(k: int, centered: bool, config: SimStudyConfig, rng) -> SVParams:
    mu = (config.sv_mu_mean + np.sqrt(config.sv_mu_var) * rng.standard_normal(k)
          if centered else np.zeros(k))
    phi = rng.uniform(-config.sv_phi_bound, config.sv_phi_bound, k)
    s2 = np.abs(config.sv_sigma2_mean + np.sqrt(config.sv_sigma2_var) * rng.standard_normal(k))
    return SVParams(mu, phi, np.maximum(s2, 1e-12))


def simulate_panel(factors, config: SimStudyConfig, rng: np.random.Generator,
                   loadings=None, return_parts: bool = False):
    """Panel ``X_t = Lambda F_t + e_t`` with stochastic-volatility noise, ``(m, T)``.

    The factors enter as given; their stochastic volatility only matters for
    estimation. ``loadings`` overrides the sparse lower-triangular draw.
    """
    F = np.asarray(factors, dtype=float)
    T = F.shape[1]
    L = simulate_loadings(config, rng) if loadings is None else np.asarray(loadings, float)
    sv = _draw_sv_truth(config.m, True, config, rng)
    g = simulate_sv_path(sv, T, rng)
    X = L @ F + np.exp(g / 2.0) * rng.standard_normal((config.m, T))
    if return_parts:
        return X, L, g
    return X


def simulate_ms_ar(factors, config: SimStudyConfig, rng: np.random.Generator):
    """Switching AR(1) driven by factor-dependent transitions.

    ``S_0`` is uniform; for ``t >= 1`` the state moves with
    ``Xi_t = transition_matrix(truth, F_t)``. ``y`` uses a presample value of 0.

    Returns
    -------
    y : (T,) array
    states : (T,) int array, zero-based
    path : TransitionPath with the ``T - 1`` matrices driving ``S_0 -> S_1 ...``
    """
    F = np.asarray(factors, dtype=float)
    T = F.shape[1]
    H = config.H
    coeffs = config.truth_coefficients()
    mu = np.asarray(config.mu, float)
    s = np.sqrt(np.asarray(config.sigma2, float))
    states = np.empty(T, dtype=np.int64)
    y = np.empty(T)
    mats = np.empty((T - 1, H, H))
    states[0] = rng.integers(H)
    prev = 0.0
    u = rng.random(T)
    e = rng.standard_normal(T)
    for t in range(T):
        if t > 0:
            xi = transition_matrix(coeffs, F[:, t])
            mats[t - 1] = xi
            cdf = np.cumsum(xi[:, states[t - 1]])
            states[t] = min(int(np.searchsorted(cdf, u[t] * cdf[-1], side="right")), H - 1)
        y[t] = mu[states[t]] + config.phi * prev + s[states[t]] * e[t]
        prev = y[t]
    return y, states, TransitionPath(np.clip(mats, 1e-300, None))


# --- metrics -------------------------------------------------------------------

def rmse_metric(y, fitted_draws) -> float:
    """Median over draws of the in-sample root mean squared error."""
    y = np.asarray(y, dtype=float)
    F = np.atleast_2d(np.asarray(fitted_draws, dtype=float))
    if F.shape[1] != y.shape[0]:
        raise ValueError("fitted draws and data differ in length")
    return float(np.median(np.sqrt(((F - y) ** 2).mean(axis=1))))


def mcr_metric(true_states, state_draws) -> float:
    """Median over draws of the share of misclassified periods."""
    s = np.asarray(true_states)
    D = np.atleast_2d(np.asarray(state_draws))
    if D.shape[1] != s.shape[0]:
        raise ValueError("state draws and true states differ in length")
    return float(np.median((D != s).mean(axis=1)))


def fitted_values(store: DrawStore, y) -> np.ndarray:
    """Per-draw conditional means ``mu_{S_t} + sum_j phi_{j,S_t} y_{t-j}``, ``(K, n)``."""
    y = np.asarray(y, dtype=float)
    p = store.phi.shape[2]
    n = y.shape[0] - p
    S = store.states.astype(np.int64)
    k = np.arange(store.K)[:, None]
    out = store.mu[k, S].copy()
    for j in range(1, p + 1):
        out += store.phi[k, S, j - 1] * y[p - j:p - j + n][None, :]
    return out


# --- study driver ----------------------------------------------------------------

@dataclass
class StudyReport:
    """Average median metrics per (variant, omega) cell.

    ``table`` holds absolute and baseline-relative values; ``per_dataset``
    the per-data-set medians. Data sets with a failed chain in any cell are
    excluded from the averages (``excluded``).
    """

    table: pd.DataFrame
    per_dataset: pd.DataFrame
    excluded: list

    def to_text(self, sep: str = "\t") -> str:
        lines = [sep.join(["variant", "omega", "rmse", "mcr", "rel_rmse", "rel_mcr"])]
        for _, row in self.table.iterrows():
            om = "off" if pd.isna(row["omega"]) else f"{row['omega']:.17g}"
            lines.append(sep.join([row["variant"], om] + [f"{row[c]:.17g}" for c in
                                                          ("rmse", "mcr", "rel_rmse", "rel_mcr")]))
        lines.append(f"# datasets used: {self.table.attrs.get('n_used', 0)}; "
                     f"excluded: {len(self.excluded)}")
        return "\n".join(lines) + "\n"

    def cell(self, variant: str, omega=None) -> pd.Series:
        t = self.table
        sel = (t["variant"] == variant) & (t["omega"].isna() if omega is None
                                          else np.isclose(t["omega"], omega))
        return t[sel].iloc[0]


def generate_dataset(config: SimStudyConfig, rng: np.random.Generator) -> dict:
    F = simulate_factors(config, rng)
    X = simulate_panel(F, config, rng)
    y, S, path = simulate_ms_ar(F, config, rng)
    return dict(factors=F, panel=X, y=y, states=S, path=path)


def _cell_config(config: SimStudyConfig, omega) -> FamsConfig:
    prior = config.prior if omega is None else replace(config.prior, omega_psi=omega)
    return FamsConfig(H=config.H, p=1, switch_mean=True, switch_var=True, h0=config.h0,
                      burn=config.burn, keep=config.keep, shrinkage=omega is not None,
                      prior=prior, rule=IdentificationRule("mu", descending=False))


def run_dataset(index: int, config: SimStudyConfig) -> list[dict]:
    """Generate data set ``index`` and fit every cell; one record per cell."""
    cells = config.cells()
    ss = np.random.SeedSequence(config.seed).spawn(config.N)[index]
    streams = ss.spawn(len(cells) + 3)
    data = generate_dataset(config, np.random.default_rng(streams[0]))
    y, S = data["y"], data["states"]
    std = standardize_panel(data["panel"])
    need_factors = any(v == "fams" for v, _ in cells)
    fams_path = None
    if need_factors:
        fd = run_factor_sv(std.series, config.r, config.prior, config.factor_burn,
                           config.factor_keep, np.random.default_rng(streams[1]))
        fams_path = export_centered_factor_means(fd.factors)
    panel_path = FactorPath.from_raw(std.series)
    sub_path = None
    if config.subsample:
        pick = np.sort(np.random.default_rng(streams[2]).choice(config.m, config.subsample,
                                                                replace=False))
        sub_path = FactorPath.from_raw(std.series[pick])
    records = []
    for c, (variant, omega) in enumerate(cells):
        fac = {"intercept": FactorPath.empty(config.T), "panel": panel_path,
               "fams": fams_path, "subsample": sub_path}[variant]
        rec = dict(dataset=index, variant=variant, omega=np.nan if omega is None else omega)
        try:
            store = run_ms_stage(y, fac, _cell_config(config, omega),
                                 np.random.default_rng(streams[c + 3]))
            rec["rmse"] = rmse_metric(y[1:], fitted_values(store, y))
            rec["mcr"] = mcr_metric(S[1:], store.states)
            rec["failed"] = False
        except (DivergenceError, np.linalg.LinAlgError) as exc:
            rec.update(rmse=np.nan, mcr=np.nan, failed=True, error=str(exc))
        records.append(rec)
    return records


def run_study(config: SimStudyConfig, workers: int = 1, progress=None) -> StudyReport:
    """Run every data set and aggregate relative to the intercept-only baseline.

    Data set ``n`` draws all randomness from child ``n`` of
    ``SeedSequence(config.seed).spawn(N)``, so results do not depend on
    ``workers`` or on execution order.
    """
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_dataset, range(config.N), [config] * config.N))
    else:
        results = []
        for n in range(config.N):
            results.append(run_dataset(n, config))
            if progress is not None:
                progress(n, results[-1])
    per = pd.DataFrame([r for rs in results for r in rs])
    failed = sorted(set(per.loc[per["failed"], "dataset"]))
    ok = per[~per["dataset"].isin(failed)]
    rows = []
    for variant, omega in config.cells():
        sel = ok[(ok["variant"] == variant)
                 & (ok["omega"].isna() if omega is None else np.isclose(ok["omega"], omega))]
        rows.append(dict(variant=variant, omega=np.nan if omega is None else omega,
                         rmse=sel["rmse"].mean() if len(sel) else np.nan,
                         mcr=sel["mcr"].mean() if len(sel) else np.nan))
    table = pd.DataFrame(rows)
    base = table.iloc[0]
    table["rel_rmse"] = table["rmse"] / base["rmse"]
    table["rel_mcr"] = table["mcr"] / base["mcr"]
    table.loc[0, ["rel_rmse", "rel_mcr"]] = 1.0
    table.attrs["n_used"] = config.N - len(failed)
    return StudyReport(table=table, per_dataset=per, excluded=failed)
