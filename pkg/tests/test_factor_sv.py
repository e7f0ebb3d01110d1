import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.stats import chi2, norm

from fams.core import PriorConfig
from fams.factor_sv import (
    LOGCHI2_MEANS,
    LOGCHI2_VARIANCES,
    LOGCHI2_WEIGHTS,
    FactorState,
    SVParams,
    draw_factors,
    draw_loadings,
    draw_logvariance_path,
    draw_sv_params,
    explained_variance_share,
    export_centered_factor_means,
    factor_count_criterion,
    factor_sv_sweep,
    initial_factor_state,
    loading_mask,
    run_factor_sv,
    simulate_sv_path,
    top_loadings_report,
)
from fams.shrinkage import NormalGammaState
from oracles import batch_means_se


def make_state(L, T, idio_logvar=0.0, fac_logvar=0.0, Z=None):
    L = np.asarray(L, dtype=float)
    m, r = L.shape
    return FactorState(
        loadings=L,
        factors=np.zeros((r, T)) if Z is None else np.asarray(Z, dtype=float),
        idio_logvar=np.full((m, T), idio_logvar),
        fac_logvar=np.full((r, T), fac_logvar),
        idio_sv=SVParams(np.zeros(m), np.full(m, 0.5), np.full(m, 0.1)),
        fac_sv=SVParams(np.zeros(r), np.full(r, 0.5), np.full(r, 0.1)),
        ng=NormalGammaState.initial(m, r, 0.1, 1.0, 1.0),
    )


def test_logchi2_table_cdf():
    assert abs(LOGCHI2_WEIGHTS.sum() - 1) < 1e-4
    grid = np.linspace(-20, 4, 24_001)
    mix = (LOGCHI2_WEIGHTS * norm.cdf((grid[:, None] - LOGCHI2_MEANS)
                                      / np.sqrt(LOGCHI2_VARIANCES))).sum(1)
    exact = chi2.cdf(np.exp(grid), 1)
    assert np.max(np.abs(mix - exact)) < 0.005


def test_factor_draw_scalar_conjugate(rng):
    st = make_state([[1.0]], 200_000)
    x = np.full((1, 200_000), 2.0)
    z = draw_factors(x, st, rng)[0]
    assert abs(z.mean() - 1.0) < 0.02
    assert abs(z.var() - 0.5) < 0.01


def test_factor_draw_without_loadings_is_prior(rng):
    st = make_state(np.zeros((3, 2)), 100_000, fac_logvar=np.log(2.0))
    z = draw_factors(rng.standard_normal((3, 100_000)), st, rng)
    assert_allclose(z.var(axis=1), 2.0, rtol=0.03)


def test_factor_draw_degenerate_prior(rng):
    st = make_state([[1.0], [0.5]], 50, fac_logvar=np.log(1e-14))
    z = draw_factors(rng.standard_normal((2, 50)) * 10, st, rng)
    assert np.max(np.abs(z)) < 1e-5


def test_loadings_noiseless_conjugate_limit(rng):
    m, r, T = 6, 2, 300
    L = np.tril(rng.normal(0, 1, (m, r)))
    Z = rng.standard_normal((r, T))
    st = make_state(np.zeros((m, r)), T, idio_logvar=np.log(1e-12), Z=Z)
    drawn = draw_loadings(L @ Z, st, rng, prior_var=1e8)
    assert np.max(np.abs(drawn - L)) < 1e-6


def test_loadings_without_factors_follow_prior(rng):
    m, r, T, n = 200, 2, 10, 400
    st = make_state(np.zeros((m, r)), T)
    st.ng = NormalGammaState(np.ones((m, r)), np.full(m, 4.0), 0.1, 1.0, 1.0)
    X = rng.standard_normal((m, T))
    draws = np.array([draw_loadings(X, st, rng)[:, 0] for _ in range(n)])
    assert abs(draws.var() / (2 * 1.0 / 4.0) - 1) < 0.03


def test_upper_triangle_stays_zero_over_many_sweeps(rng):
    m, r, T = 4, 3, 12
    X = rng.standard_normal((m, T))
    prior = PriorConfig()
    st = initial_factor_state(X, r, prior)
    mask = loading_mask(m, r)
    for _ in range(10_000):
        st = factor_sv_sweep(X, st, prior, rng)
        assert np.all(st.loadings[~mask] == 0.0)


def test_logvariance_constant_volatility(rng):
    T, true_var = 2000, 2.5
    e = rng.normal(0, np.sqrt(true_var), T)
    prior = PriorConfig()
    params = SVParams([0.0], [0.0], [0.1])
    path = np.zeros(T)
    means = []
    for it in range(1500):
        path = draw_logvariance_path(e, params, rng, current=path)
        params = draw_sv_params(path, prior, True, params, rng)
        if it >= 300:
            means.append(path.mean())
    assert abs(np.mean(means) - np.log(true_var)) < 0.1


def test_logvariance_collapses_to_mean(rng):
    params = SVParams([0.7], [0.5], [1e-10])
    path = draw_logvariance_path(rng.standard_normal(300) * 5, params, rng)
    assert np.max(np.abs(path - 0.7)) < 1e-3


def test_logvariance_zero_residuals_are_finite(rng):
    e = np.zeros(50)
    path = draw_logvariance_path(e, SVParams([0.0], [0.9], [0.1]), rng)
    assert np.all(np.isfinite(path))


def test_sv_params_recover_long_path(rng):
    truth = SVParams([0.2], [0.6], [0.1])
    h = simulate_sv_path(truth, 5000, rng)
    cur = SVParams([0.0], [0.5], [0.5])
    draws = []
    for it in range(4000):
        cur = draw_sv_params(h, PriorConfig(), True, cur, rng)
        if it >= 500:
            draws.append([cur.mu[0], cur.phi[0], cur.sigma2[0]])
    d = np.array(draws)
    assert np.all(np.abs(d.mean(0) - [0.2, 0.6, 0.1]) < 3 * d.std(0))


def test_factor_process_mean_is_fixed_at_zero(rng):
    h = simulate_sv_path(SVParams([0.0], [0.6], [0.1]), 200, rng) + 3.0
    out = draw_sv_params(h, PriorConfig(), False, SVParams([0.0], [0.5], [0.1]), rng)
    assert out.mu[0] == 0.0


def test_sv_params_prior_recovery(rng):
    # alternate path | params and params | path; params then follow the prior
    prior = PriorConfig(mu_g_var=1.0, B_sigma=0.5, b0=5.0, b1=2.0)
    cur = SVParams([0.0], [0.4], [0.5])
    draws = []
    for it in range(60_000):
        h = simulate_sv_path(cur, 5, rng)
        cur = draw_sv_params(h, prior, True, cur, rng)
        if it >= 1000:
            draws.append([cur.mu[0], cur.phi[0], cur.sigma2[0]])
    d = np.array(draws)
    expect_mean = [0.0, 2 * 5 / 7 - 1, 0.5]
    # (phi+1)/2 ~ Beta(5, 2): var(phi) = 4 * 5*2 / (49 * 8)
    expect_var = [1.0, 4 * 10 / (49 * 8), 2 * 0.5 ** 2]
    for j in range(3):
        se = batch_means_se(d[:, j])
        assert abs(d[:, j].mean() - expect_mean[j]) < max(0.03 * abs(expect_mean[j]), 3 * se)
        se_v = batch_means_se((d[:, j] - d[:, j].mean()) ** 2)
        assert abs(d[:, j].var() - expect_var[j]) < max(0.03 * expect_var[j], 3 * se_v)


def test_explained_share_examples():
    st = make_state([[1.0], [0.5]], 4)
    overall, per_series, per_time, shares = explained_variance_share(st)
    assert_allclose(per_series, [0.5, 0.2])
    assert_allclose(per_time, 0.35)
    assert_allclose(overall, 0.35)
    assert_allclose(explained_variance_share(make_state(np.zeros((3, 2)), 5))[0], 0.0)
    tiny = make_state([[1.0], [0.5]], 4, idio_logvar=np.log(1e-14))
    assert_allclose(explained_variance_share(tiny)[1], 1.0, atol=1e-12)


def test_top_loadings_report(rng):
    L = np.zeros((4, 2))
    L[2, 0] = 3.0
    names = ["a", "b", "c", "d"]
    rep = top_loadings_report(L, names, 1)
    assert rep[0] == ["c"]
    assert top_loadings_report(L, names, 4)[1] == names
    L = rng.standard_normal((30, 3))
    names = [f"s{i}" for i in range(30)]
    rep = top_loadings_report(L, names, 10)
    for j in range(3):
        oracle = sorted(range(30), key=lambda i: (-abs(L[i, j]), i))[:10]
        assert rep[j] == [names[i] for i in oracle]
    with pytest.raises(ValueError):
        top_loadings_report(L, names, 31)


@pytest.mark.parametrize("r0", [1, 2, 3])
def test_factor_count_recovers_true_number(r0):
    rng = np.random.default_rng(r0)
    m, T = 20, 200
    L = rng.standard_normal((m, r0))
    Z = np.linalg.qr(rng.standard_normal((T, r0)))[0].T * np.sqrt(T)
    X = L @ Z + 0.05 * rng.standard_normal((m, T))
    bic = factor_count_criterion(X, [1, 2, 3, 4, 5])
    assert min(bic, key=bic.get) == r0


def test_factor_count_white_noise_and_determinism(rng):
    X = rng.standard_normal((15, 150))
    bic = factor_count_criterion(X, [1, 2, 3, 4, 5, 2])
    vals = [bic[r] for r in (2, 3, 4, 5)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    again = factor_count_criterion(X, [2])
    assert again[2] == bic[2]


def test_export_centered_means(rng):
    z = rng.standard_normal((2, 30)) + 5.0
    single = export_centered_factor_means(z[None])
    assert_allclose(single.values, z - z.mean(1, keepdims=True))
    assert_allclose(single.means, z.mean(1))
    zero = export_centered_factor_means(np.stack([z, -z]))
    assert_allclose(zero.values, 0.0, atol=1e-14)
    path = np.sin(np.linspace(0, 6, 40))[None]
    draws = path[None] + 0.3 * rng.standard_normal((1000, 1, 40))
    out = export_centered_factor_means(draws)
    manual = np.zeros(40)
    for k in range(1000):
        manual += draws[k, 0]
    manual /= 1000
    assert_allclose(out.values[0], manual - manual.mean(), atol=1e-12)
    assert np.max(np.abs(out.values[0] - (path[0] - path[0].mean()))) < 4 * 0.3 / np.sqrt(1000) * 1.5
    with pytest.raises(ValueError):
        export_centered_factor_means(np.zeros((0, 1, 5)))


def test_sampler_recovers_factor_space_and_invariants(rng):
    m, r, T = 30, 2, 200
    L = np.tril(rng.normal(0, 1, (m, r)))
    L[[0, 1], [0, 1]] = np.abs(L[[0, 1], [0, 1]]) + 0.5
    Z = rng.standard_normal((r, T))
    X = L @ Z + 0.5 * rng.standard_normal((m, T))
    seen = []

    def check(it, st):
        assert np.all(st.loadings[~loading_mask(m, r)] == 0)
        assert np.all(np.diag(st.loadings[:r, :r]) >= 0)
        for t in (0, T // 2, T - 1):
            S = st.covariance(t)
            assert_allclose(S, S.T)
            assert np.linalg.eigvalsh(S).min() > 0
        shares = explained_variance_share(st)[3]
        assert np.all((shares >= 0) & (shares <= 1))
        seen.append(it)

    draws = run_factor_sv(X, r, PriorConfig(), 300, 200, rng, callback=check)
    assert len(seen) == 500
    fm = draws.factors.mean(0)
    # the estimated factors span the true factor space
    coef = np.linalg.lstsq(fm.T, Z.T, rcond=None)[0]
    resid = Z.T - fm.T @ coef
    assert np.all(1 - resid.var(0) / Z.T.var(0) > 0.9)
    assert draws.loadings.shape == (200, m, r)


def test_run_rejects_bad_factor_count(rng):
    with pytest.raises(ValueError):
        run_factor_sv(rng.standard_normal((3, 20)), 4, PriorConfig(), 1, 1, rng)
