"""Normal-gamma global-local shrinkage and GIG sampling.

Each coefficient carries the prior::

    coef | local, global  ~ N(0, 2 * local / global)
    local                 ~ Gamma(omega, rate=omega)
    global                ~ Gamma(c0, rate=c1)

The global update is carried out in the equivalent variance parameterization
``v = 2 * local / global`` (``v | global ~ Gamma(omega, rate=omega*global/2)``),
which gives the conjugate ``Gamma(omega*r + c0, c1 + omega/2 * sum(v))`` draw.

GIG densities follow ``x**(p-1) * exp(-(a*x + b/x) / 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

_TINY = 1e-300


class GIGParameterError(ValueError):
    pass


@dataclass(frozen=True)
class NormalGammaState:
    """Local and global scales of one shrinkage group family.

    ``local`` has shape ``(G, r)``: one row per group sharing a global scale
    (MNL destination state, or loadings row). ``global_`` has shape ``(G,)``.
    """

    local: np.ndarray
    global_: np.ndarray
    omega: float
    c0: float
    c1: float

    def __post_init__(self):
        local = np.array(self.local, dtype=float, ndmin=2)
        glob = np.array(self.global_, dtype=float, ndmin=1)
        if glob.shape[0] != local.shape[0]:
            raise ValueError("one global scale per row of local scales")
        if np.any(local <= 0) or np.any(glob <= 0):
            raise ValueError("shrinkage scales must be strictly positive")
        if not (self.omega > 0 and self.c0 > 0 and self.c1 > 0):
            raise ValueError("omega, c0 and c1 must be positive")
        object.__setattr__(self, "local", local)
        object.__setattr__(self, "global_", glob)

    @classmethod
    def initial(cls, groups: int, r: int, omega: float, c0: float, c1: float):
        return cls(np.ones((groups, r)), np.ones(groups), omega, c0, c1)

    def prior_variances(self) -> np.ndarray:
        """Coefficient prior variances ``2 * local / global``, shape ``(G, r)``."""
        return 2.0 * self.local / self.global_[:, None]

    def permute(self, order) -> "NormalGammaState":
        order = np.asarray(order)
        return replace(self, local=self.local[order], global_=self.global_[order])


# --- GIG sampling (Hoermann & Leydold style rejection, vectorized) ---------

def _mode(lam, omega):
    return np.where(
        lam >= 1.0,
        (np.sqrt((lam - 1.0) ** 2 + omega ** 2) + (lam - 1.0)) / omega,
        omega / (np.sqrt((1.0 - lam) ** 2 + omega ** 2) + (1.0 - lam)),
    )


def _rou_noshift(lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _mode(lam, omega)
    nc = t * np.log(xm) - s * (xm + 1.0 / xm)
    ym = ((lam + 1.0) + np.sqrt((lam + 1.0) ** 2 + omega ** 2)) / omega
    um = np.exp(0.5 * (lam + 1.0) * np.log(ym) - s * (ym + 1.0 / ym) - nc)
    out = np.empty_like(lam)
    todo = np.arange(lam.size)
    while todo.size:
        u = um[todo] * rng.random(todo.size)
        v = rng.random(todo.size)
        x = u / v
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = np.log(v) <= t[todo] * np.log(x) - s[todo] * (x + 1.0 / x) - nc[todo]
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


def _rou_shift(lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _mode(lam, omega)
    nc = t * np.log(xm) - s * (xm + 1.0 / xm)
    a = -(2.0 * (lam + 1.0) / omega + xm)
    b = 2.0 * (lam - 1.0) * xm / omega - 1.0
    c = xm
    p = b - a * a / 3.0
    q = 2.0 * a ** 3 / 27.0 - a * b / 3.0 + c
    fi = np.arccos(np.clip(-q / (2.0 * np.sqrt(-(p ** 3) / 27.0)), -1.0, 1.0))
    fak = 2.0 * np.sqrt(-p / 3.0)
    y1 = fak * np.cos(fi / 3.0) - a / 3.0
    y2 = fak * np.cos(fi / 3.0 + 4.0 / 3.0 * np.pi) - a / 3.0
    uplus = (y1 - xm) * np.exp(t * np.log(y1) - s * (y1 + 1.0 / y1) - nc)
    uminus = (y2 - xm) * np.exp(t * np.log(y2) - s * (y2 + 1.0 / y2) - nc)
    out = np.empty_like(lam)
    todo = np.arange(lam.size)
    while todo.size:
        u = uminus[todo] + rng.random(todo.size) * (uplus[todo] - uminus[todo])
        v = rng.random(todo.size)
        x = u / v + xm[todo]
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (x > 0) & (
                np.log(v) <= t[todo] * np.log(x) - s[todo] * (x + 1.0 / x) - nc[todo]
            )
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


def _log_concave_hat(lam, omega, rng):
    # 0 <= lam < 1 and small omega: piecewise constant / power / exponential hat
    xm = _mode(lam, omega)
    x0 = omega / (1.0 - lam)
    k0 = np.exp((lam - 1.0) * np.log(xm) - 0.5 * omega * (xm + 1.0 / xm))
    A0 = k0 * x0
    far = x0 >= 2.0 / omega
    zero = lam == 0.0
    safe_lam = np.where(zero, 1.0, lam)
    k1 = np.where(far, 0.0, np.exp(-omega))
    A1_pos = k1 / safe_lam * ((2.0 / omega) ** lam - x0 ** lam)
    A1_zero = k1 * np.log(2.0 / omega ** 2)
    A1 = np.where(far, 0.0, np.where(zero, A1_zero, A1_pos))
    k2 = np.where(far, x0 ** (lam - 1.0), (2.0 / omega) ** (lam - 1.0))
    A2 = np.where(far, k2 * 2.0 * np.exp(-omega * x0 / 2.0) / omega,
                  k2 * 2.0 * np.exp(-1.0) / omega)
    Atot = A0 + A1 + A2
    edge = np.maximum(x0, 2.0 / omega)
    out = np.empty_like(lam)
    todo = np.arange(lam.size)
    while todo.size:
        L, W = lam[todo], omega[todo]
        v = Atot[todo] * rng.random(todo.size)
        x = np.empty(todo.size)
        hx = np.empty(todo.size)
        r0 = v <= A0[todo]
        x[r0] = x0[todo][r0] * v[r0] / A0[todo][r0]
        hx[r0] = k0[todo][r0]
        v1 = v - A0[todo]
        r1 = ~r0 & (v1 <= A1[todo])
        if r1.any():
            z = zero[todo] & r1
            nz = ~zero[todo] & r1
            x[z] = W[z] * np.exp(np.exp(W[z]) * v1[z])
            hx[z] = k1[todo][z] / x[z]
            x[nz] = (x0[todo][nz] ** L[nz] + L[nz] / k1[todo][nz] * v1[nz]) ** (1.0 / L[nz])
            hx[nz] = k1[todo][nz] * x[nz] ** (L[nz] - 1.0)
        r2 = ~r0 & ~r1
        if r2.any():
            v2 = v1[r2] - A1[todo][r2]
            W2 = W[r2]
            inner = np.exp(-W2 / 2.0 * edge[todo][r2]) - W2 / (2.0 * k2[todo][r2]) * v2
            x[r2] = -2.0 / W2 * np.log(np.maximum(inner, _TINY))
            hx[r2] = k2[todo][r2] * np.exp(-W2 / 2.0 * x[r2])
        u = rng.random(todo.size) * hx
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (x > 0) & (np.log(u) <= (L - 1.0) * np.log(x) - W / 2.0 * (x + 1.0 / x))
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


def _gig_standard(lam, omega, rng):
    """Draw from x**(lam-1) exp(-omega/2 (x + 1/x)) with lam >= 0, omega > 0."""
    out = np.empty_like(lam)
    shift = (lam > 2.0) | (omega > 3.0)
    noshift = ~shift & ((lam >= 1.0 - 2.25 * omega ** 2) | (omega > 0.2))
    hat = ~shift & ~noshift
    for mask, fn in ((shift, _rou_shift), (noshift, _rou_noshift), (hat, _log_concave_hat)):
        if mask.any():
            out[mask] = fn(lam[mask], omega[mask], rng)
    return out


def draw_gig(p, a, b, rng: np.random.Generator, size=None):
    """Draw from GIG(p, a, b) with density ``x**(p-1) exp(-(a x + b / x) / 2)``.

    Parameters broadcast against each other (and ``size``). Admissible triples
    are ``a > 0, b > 0``; ``a > 0, b = 0, p > 0`` (gamma); ``a = 0, b > 0, p < 0``
    (inverse gamma).
    """
    p, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (p, a, b)))
    if size is not None:
        p, a, b = (np.broadcast_to(v, size) for v in (p, a, b))
    shape = p.shape
    p, a, b = (np.array(v, dtype=float).ravel() for v in (p, a, b))
    ok = ((a > 0) & (b > 0)) | ((a > 0) & (b == 0) & (p > 0)) | ((a == 0) & (b > 0) & (p < 0))
    if not np.all(ok & np.isfinite(p) & np.isfinite(a) & np.isfinite(b)):
        bad = np.flatnonzero(~ok)[0] if not np.all(ok) else 0
        raise GIGParameterError(
            f"GIG(p={p[bad]}, a={a[bad]}, b={b[bad]}) is not normalizable"
        )
    out = np.empty(p.size)
    omega = np.sqrt(a * b)
    # gamma / inverse-gamma limits, exact at b == 0 or a == 0 and accurate when
    # omega underflows with |p| > 1 (the 1/x or x term carries negligible mass)
    gam = (b == 0) | ((omega < 1e-8) & (p > 1.0))
    inv = (a == 0) | ((omega < 1e-8) & (p < -1.0))
    if gam.any():
        out[gam] = rng.gamma(p[gam], 2.0 / a[gam])
    if inv.any():
        out[inv] = 1.0 / rng.gamma(-p[inv], 2.0 / b[inv])
    rest = ~gam & ~inv
    if rest.any():
        pr, ar, br, wr = p[rest], a[rest], b[rest], omega[rest]
        y = _gig_standard(np.abs(pr), wr, rng)
        y = np.where(pr < 0, 1.0 / y, y)
        out[rest] = np.sqrt(br / ar) * y
    return out.reshape(shape) if shape else float(out[0])


def update_local_scales(coeffs, state: NormalGammaState, rng: np.random.Generator) -> np.ndarray:
    """Draw every local scale from its full conditional.

    ``local | coef, global ~ GIG(omega - 1/2, 2 omega, coef**2 * global / 2)``.
    ``coeffs`` has the shape of ``state.local``.
    """
    coeffs = np.asarray(coeffs, dtype=float).reshape(state.local.shape)
    b = np.maximum(coeffs ** 2 * state.global_[:, None] / 2.0, _TINY)
    return draw_gig(state.omega - 0.5, 2.0 * state.omega, b, rng)


def update_global_scale(variances, omega: float, c0: float, c1: float,
                        rng: np.random.Generator) -> float:
    """Draw one global scale given the group's prior variances.

    ``global ~ Gamma(omega * r + c0, rate = c1 + omega / 2 * sum(variances))``.
    """
    v = np.asarray(variances, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("need at least one local scale")
    shape = omega * v.size + c0
    rate = c1 + 0.5 * omega * v.sum()
    return max(rng.gamma(shape, 1.0 / rate), _TINY)


def global_shape(r: int, omega: float, c0: float) -> float:
    return omega * r + c0


def update_normal_gamma(coeffs, state: NormalGammaState, rng: np.random.Generator,
                        mask=None) -> NormalGammaState:
    """One full sweep: local scales, then each group's global scale.

    ``mask`` (same shape as ``state.local``) marks entries that are real
    coefficients; masked-out entries are auxiliary and drawn from the prior,
    and do not enter the global update.
    """
    coeffs = np.asarray(coeffs, dtype=float).reshape(state.local.shape)
    mask = np.ones(state.local.shape, bool) if mask is None else np.asarray(mask, bool)
    local = update_local_scales(coeffs, state, rng)
    if (~mask).any():
        local = np.where(mask, local, rng.gamma(state.omega, 1.0 / state.omega, local.shape))
    glob = state.global_.copy()
    for g in range(local.shape[0]):
        row = mask[g]
        if not row.any():
            glob[g] = max(rng.gamma(state.c0, 1.0 / state.c1), _TINY)
            continue
        v = 2.0 * local[g, row] / glob[g]
        new = update_global_scale(v, state.omega, state.c0, state.c1, rng)
        # keep the variances fixed across the global move
        local[g, row] = v * new / 2.0
        glob[g] = new
    local = np.clip(local, _TINY, None)
    return replace(state, local=local, global_=glob)
