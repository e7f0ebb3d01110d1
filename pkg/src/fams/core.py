"""Shared domain types, lag designs and prior configuration.

State labels are zero-based throughout the package (``0, ..., H - 1``);
exported files carry one-based column names (``state_1`` ...).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when array shapes are inconsistent with the model."""


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimePanel:
    """Standardized covariate panel plus the modeled target series.

    Attributes
    ----------
    series : ndarray, shape (m, T)
        Covariates, each row with zero mean and unit sample standard deviation.
    names : list of str
        One identifier per row of ``series``.
    time_index : list
        ``T`` period labels.
    target : ndarray, shape (T,)
        The modeled series ``y_t`` (never standardized).
    means, sds : ndarray, shape (m,)
        Location and scale removed from the raw covariates (``ddof=1``).
    """

    series: np.ndarray
    names: list
    time_index: list
    target: np.ndarray
    means: np.ndarray = field(default=None)
    sds: np.ndarray = field(default=None)

    def __post_init__(self):
        series = _frozen(self.series)
        if series.ndim != 2:
            raise DimensionError("series must be a 2-d (m, T) array")
        m, T = series.shape
        if m < 1 or T < 2:
            raise DimensionError(f"panel needs m >= 1 and T >= 2, got {series.shape}")
        if not np.all(np.isfinite(series)):
            raise ValueError("panel contains missing or non-finite values")
        target = _frozen(self.target)
        if target.shape != (T,):
            raise DimensionError(f"target length {target.shape} does not match T={T}")
        if len(self.names) != m:
            raise DimensionError("one name per series required")
        if len(self.time_index) != T:
            raise DimensionError("one time label per period required")
        object.__setattr__(self, "series", series)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "names", list(self.names))
        object.__setattr__(self, "time_index", list(self.time_index))
        means = np.zeros(m) if self.means is None else self.means
        sds = np.ones(m) if self.sds is None else self.sds
        object.__setattr__(self, "means", _frozen(means))
        object.__setattr__(self, "sds", _frozen(sds))

    @property
    def m(self) -> int:
        return self.series.shape[0]

    @property
    def T(self) -> int:
        return self.series.shape[1]

    def raw_series(self) -> np.ndarray:
        """Undo the standardization."""
        return self.series * self.sds[:, None] + self.means[:, None]


@dataclass(frozen=True)
class RegimeParams:
    """State-dependent AR(p) parameters.

    ``mu[h]``, ``phi[h, j]`` (coefficient on lag ``j + 1``) and ``sigma2[h]``.
    Blocks whose switch flag is off must be identical across states.
    """

    mu: np.ndarray
    phi: np.ndarray
    sigma2: np.ndarray
    switch_mean: bool = True
    switch_ar: bool = False
    switch_var: bool = False

    def __post_init__(self):
        mu = _frozen(np.atleast_1d(self.mu))
        H = mu.shape[0]
        phi = _frozen(np.asarray(self.phi, dtype=float).reshape(H, -1))
        sigma2 = _frozen(np.atleast_1d(self.sigma2))
        if sigma2.shape != (H,):
            raise DimensionError("sigma2 must have one entry per state")
        if np.any(sigma2 <= 0):
            raise ValueError("sigma2 must be strictly positive")
        for flag, block, name in (
            (self.switch_mean, mu, "mu"),
            (self.switch_ar, phi, "phi"),
            (self.switch_var, sigma2, "sigma2"),
        ):
            if not flag and H > 1 and not np.all(block == block[0]):
                raise ValueError(f"{name} is not switching but differs across states")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "sigma2", sigma2)

    @property
    def H(self) -> int:
        return self.mu.shape[0]

    @property
    def p(self) -> int:
        return self.phi.shape[1]

    def permute(self, order) -> "RegimeParams":
        """Relabel states so that new state ``i`` is old state ``order[i]``."""
        order = np.asarray(order)
        return replace(self, mu=self.mu[order], phi=self.phi[order], sigma2=self.sigma2[order])


def check_states(states, H: int) -> np.ndarray:
    """Validate a state sequence (zero-based labels) and return it as int array."""
    s = np.asarray(states)
    if s.ndim != 1:
        raise DimensionError("state sequence must be 1-d")
    if s.size and (s.min() < 0 or s.max() >= H):
        raise ValueError(f"state labels must lie in 0..{H - 1}")
    return s.astype(np.int64)


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of every prior in the model.

    Variances, not standard deviations, are used for normal priors.
    ``beta_var`` is the fixed slope variance used when shrinkage is disabled.
    ``mu_g_var`` is the prior variance of the idiosyncratic log-variance level.
    """

    m0: float = 0.0
    M0: float = 10.0
    r0: float = 0.0
    R0: float = 4.0
    c0_sig: float = 1.0
    d0_sig: float = 1.0
    g0: float = 0.0
    G0: float = 4.0
    beta_var: float = 4.0
    omega_psi: float = 0.6
    c_psi0: float = 0.01
    c_psi1: float = 0.01
    omega_tau: float = 0.1
    c_tau0: float = 1.0
    c_tau1: float = 1.0
    b0: float = 10.0
    b1: float = 3.0
    B_sigma: float = 1.0
    mu_g_mean: float = 0.0
    mu_g_var: float = 100.0

    def __post_init__(self):
        positive = (
            "M0", "R0", "c0_sig", "d0_sig", "G0", "beta_var", "omega_psi", "c_psi0",
            "c_psi1", "omega_tau", "c_tau0", "c_tau1", "b0", "b1", "B_sigma", "mu_g_var",
        )
        bad = [k for k in positive if not getattr(self, k) > 0]
        if bad:
            raise ValueError(f"prior hyperparameters must be strictly positive: {', '.join(bad)}")


def build_lag_design(y, p: int):
    """Regression form of an AR(p) with intercept.

    Row ``t`` of the design is ``(1, y[t+p-1], ..., y[t])`` and the matching
    response is ``y[t+p]``; the first ``p`` observations are conditioned on.

    Returns
    -------
    design : ndarray, shape (T - p, p + 1)
    response : ndarray, shape (T - p,)
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise DimensionError("y must be 1-d")
    if p < 0:
        raise ValueError("p must be nonnegative")
    T = y.shape[0]
    if T <= p:
        raise DimensionError(f"need more than p={p} observations, got T={T}")
    n = T - p
    design = np.empty((n, p + 1))
    design[:, 0] = 1.0
    for j in range(1, p + 1):
        design[:, j] = y[p - j:T - j]
    return design, y[p:].copy()


def standardize_panel(raw, names: Sequence[str] | None = None, time_index=None,
                      target=None) -> TimePanel:
    """Center and scale every row of ``raw`` to mean 0 and sample sd 1.

    Uses the ``T - 1`` denominator. Zero-variance rows are rejected by name.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw[None, :]
    m, T = raw.shape
    names = [f"x{i + 1}" for i in range(m)] if names is None else list(names)
    if len(names) != m:
        raise DimensionError("one name per series required")
    if T < 2:
        raise DimensionError("need at least two periods to standardize")
    means = raw.mean(axis=1)
    centered = raw - means[:, None]
    sds = np.sqrt((centered ** 2).sum(axis=1) / (T - 1))
    flat = [names[i] for i in np.flatnonzero(~(sds > 0))]
    if flat:
        raise ValueError(f"series with zero variance cannot be standardized: {', '.join(flat)}")
    z = centered / sds[:, None]
    # second pass trims rounding so re-standardizing is a no-op to ~1e-15
    z -= z.mean(axis=1, keepdims=True)
    time_index = list(range(T)) if time_index is None else list(time_index)
    target = np.zeros(T) if target is None else target
    return TimePanel(series=z, names=names, time_index=time_index, target=target,
                     means=means, sds=sds)
