import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy.integrate import quad
from scipy.stats import logistic, norm

from fams.core import DimensionError, PriorConfig
from fams.tvtp import (
    LOGISTIC_VARIANCES,
    LOGISTIC_WEIGHTS,
    FactorPath,
    TvtpCoefficients,
    build_transition_path,
    draw_mnl_coefficients,
    logistic_mixture_table,
    mnl_log_likelihood,
    sample_utility_differences,
    transition_matrix,
    transition_path_array,
)


def study_coefficients():
    # destination 0 vs baseline destination 1
    return TvtpCoefficients([[1.5, -1.5], [0.0, 0.0]], [[-1.2, 1.1, 0.9], [0, 0, 0]], h0=1)


def simulate_chain(coeffs, Z, rng, s0=0):
    n = Z.shape[0]
    xi = transition_path_array(coeffs, Z)
    s = np.empty(n, dtype=int)
    s[0] = s0
    for t in range(1, n):
        s[t] = rng.choice(coeffs.H, p=xi[t, :, s[t - 1]])
    return s


def test_zero_coefficients_give_uniform():
    assert_allclose(transition_matrix(TvtpCoefficients.zeros(3, 2, 0), [0.3, -1.0]), 1 / 3)


def test_study_coefficients_at_origin():
    xi = transition_matrix(study_coefficients(), np.zeros(3))
    e = np.exp(1.5)
    assert_allclose(xi[:, 0], [e / (1 + e), 1 / (1 + e)], rtol=1e-14)
    assert_allclose(xi[:, 0], [0.8176, 0.1824], atol=5e-5)


def test_study_coefficients_first_factor_unit():
    xi = transition_matrix(study_coefficients(), [1.0, 0.0, 0.0])
    assert_allclose(xi[0, 0], 1 / (1 + np.exp(-0.3)), rtol=1e-14)
    assert abs(xi[0, 0] - 0.5744) < 5e-5


def test_extreme_utilities_do_not_overflow():
    c = TvtpCoefficients([[800.0, -800.0], [0.0, 0.0]], [[0.0], [0.0]], h0=1)
    xi = transition_matrix(c, [0.0])
    assert np.all(np.isfinite(xi))
    assert_allclose(xi[:, 0], [1.0, 0.0])


def test_delay_shifts_covariates(rng):
    T, p = 30, 2
    f = FactorPath.from_raw(rng.standard_normal((3, T)))
    c0 = study_coefficients()
    c1 = TvtpCoefficients(c0.gamma, c0.beta, c0.h0, d=1)
    path0 = build_transition_path(c0, f, T, p).matrices
    path1 = build_transition_path(c1, f, T, p).matrices
    for i in range(T - p):
        t = p + i
        assert_allclose(path0[i], transition_matrix(c0, f.values[:, t]))
        assert_allclose(path1[i], transition_matrix(c0, f.values[:, t - 1]))


def test_delay_needs_history(rng):
    f = FactorPath.from_raw(rng.standard_normal((3, 20)))
    c = TvtpCoefficients(study_coefficients().gamma, study_coefficients().beta, 1, d=3)
    with pytest.raises(DimensionError):
        build_transition_path(c, f, 20, 1)


def test_constant_factors_give_constant_path():
    f = FactorPath.from_raw(np.full((3, 25), 4.0))
    path = build_transition_path(study_coefficients(), f, 25, 1).matrices
    assert np.max(np.abs(path - path[0])) < 1e-12


def test_coefficient_validation():
    with pytest.raises(ValueError):
        TvtpCoefficients([[1.0, 0.0], [0.5, 0.0]], [[0.0], [0.0]], h0=1)
    with pytest.raises(ValueError):
        TvtpCoefficients.zeros(2, 1, 0, d=-1)
    with pytest.raises(ValueError):
        FactorPath([[1.0, 2.0]], [0.0])


def random_coefficients(rng, H, r, h0):
    g = rng.normal(0, 2, (H, H))
    b = rng.normal(0, 1, (H, r))
    g[h0] = 0
    b[h0] = 0
    return TvtpCoefficients(g, b, h0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000), H=st.integers(2, 4), r=st.integers(0, 3))
def test_column_stochastic_and_invariances(seed, H, r):
    rng = np.random.default_rng(seed)
    c = random_coefficients(rng, H, r, int(rng.integers(H)))
    z = rng.normal(0, 2, r)
    xi = transition_matrix(c, z)
    assert_allclose(xi.sum(axis=0), 1.0, atol=1e-10)

    # adding a per-source constant to every destination changes nothing
    shift = rng.normal(0, 3, H)
    g2 = c.gamma + shift[None, :]
    eta2 = g2 + (c.beta @ z)[:, None]
    xi2 = np.exp(eta2 - eta2.max(0)) / np.exp(eta2 - eta2.max(0)).sum(0)
    assert_allclose(xi2, xi, atol=1e-10)

    # rebasing to another baseline is the same shift
    other = (c.h0 + 1) % H
    assert_allclose(transition_matrix(c.rebase(other), z), xi, atol=1e-10)

    # moving the factor location into the intercepts
    if r:
        shift_z = rng.normal(0, 2, r)
        g3 = c.gamma - (c.beta @ shift_z)[:, None]
        c3 = TvtpCoefficients(g3 - g3[c.h0], c.beta, c.h0)
        assert_allclose(transition_matrix(c3, z + shift_z), xi, atol=1e-10)


def test_mixture_table_matches_logistic():
    table = logistic_mixture_table()
    w = np.array([t[0] for t in table])
    v = np.array([t[1] for t in table])
    assert len(table) >= 6
    assert abs(w.sum() - 1) < 1e-12
    assert abs((w * v).sum() / (np.pi ** 2 / 3) - 1) < 0.01
    grid = np.linspace(-10, 10, 20_001)
    cdf = (w[None] * norm.cdf(grid[:, None] / np.sqrt(v)[None])).sum(1)
    assert np.max(np.abs(cdf - logistic.cdf(grid))) < 0.005


def test_mixture_density_integrates_to_one():
    dens = lambda x: np.sum(LOGISTIC_WEIGHTS * norm.pdf(x, 0, np.sqrt(LOGISTIC_VARIANCES)))
    assert abs(quad(dens, -np.inf, np.inf)[0] - 1) < 1e-10


def test_utility_differences_are_truncated_consistently(rng):
    eta = rng.normal(0, 3, 50_000)
    d = rng.random(50_000) < 0.5
    w = sample_utility_differences(eta, d, rng)
    assert np.all((w > 0) == d)


def test_utility_differences_have_logistic_law(rng):
    # with outcomes drawn from the model, w is marginally eta + logistic
    eta = np.full(200_000, 0.7)
    d = rng.random(eta.size) < 1 / (1 + np.exp(-eta))
    w = sample_utility_differences(eta, d, rng)
    eps = w - eta
    assert abs(eps.mean()) < 0.02
    assert abs(eps.var() / (np.pi ** 2 / 3) - 1) < 0.02


def run_sampler(states, Z, coeffs, prior, rng, iters, burn):
    draws = []
    c = coeffs
    for it in range(iters):
        c = draw_mnl_coefficients(states, Z, c, prior, rng)
        assert np.all(c.gamma[c.h0] == 0) and np.all(c.beta[c.h0] == 0)
        if it >= burn:
            draws.append(np.r_[c.gamma[0], c.beta[0]])
    return np.array(draws)


def test_binary_logit_recovers_truth(rng):
    n = 2000
    Z = rng.standard_normal((n, 1))
    Z -= Z.mean()
    truth = TvtpCoefficients([[1.0, 1.0], [0.0, 0.0]], [[0.8], [0.0]], h0=1)
    s = simulate_chain(truth, Z, rng)
    d = run_sampler(s, Z, TvtpCoefficients.zeros(2, 1, 1), PriorConfig(), rng, 2500, 500)
    m, sd = d.mean(0), d.std(0)
    assert np.all(np.abs(m - [1.0, 1.0, 0.8]) < 3 * sd)


def test_intercept_only_matches_empirical_log_odds(rng):
    n = 3000
    truth = TvtpCoefficients([[1.2, -0.7], [0.0, 0.0]], np.zeros((2, 0)), h0=1)
    Z = np.zeros((n, 0))
    s = simulate_chain(truth, Z, rng)
    d = run_sampler(s, Z, TvtpCoefficients.zeros(2, 0, 1), PriorConfig(G0=100.0), rng, 3000, 500)
    src, dst = s[:-1], s[1:]
    for k in range(2):
        frac = np.mean(dst[src == k] == 0)
        emp = np.log(frac / (1 - frac))
        se = d[:, k].std() / np.sqrt(len(d) / 10)  # crude autocorrelation allowance
        assert abs(d[:, k].mean() - emp) < 0.1 * abs(emp) + 4 * se


def test_unvisited_source_draws_intercept_from_prior(rng):
    # state 2 never occurs: its source intercepts are pure prior draws
    n = 400
    s = rng.integers(0, 2, n)
    Z = rng.standard_normal((n, 1))
    prior = PriorConfig(g0=0.0, G0=4.0)
    c = TvtpCoefficients.zeros(3, 1, 2)
    vals = []
    for _ in range(3000):
        c = draw_mnl_coefficients(s, Z, c, prior, rng)
        vals.append(c.gamma[0, 2])
    vals = np.array(vals)
    assert abs(vals.mean()) < 0.15
    assert abs(vals.var() / 4.0 - 1) < 0.1


def test_log_likelihood_matches_direct_sum(rng):
    c = random_coefficients(rng, 3, 2, 0)
    Z = rng.standard_normal((40, 2))
    s = rng.integers(0, 3, 40)
    xi = transition_path_array(c, Z)
    direct = sum(np.log(xi[t, s[t], s[t - 1]]) for t in range(1, 40))
    assert_allclose(mnl_log_likelihood(s, Z, c), direct, rtol=1e-12)


def test_permute_moves_baseline():
    c = study_coefficients()
    p = c.permute([1, 0])
    assert p.h0 == 0
    assert_array_equal(p.beta[1], [-1.2, 1.1, 0.9])
    z = np.array([0.4, -0.2, 1.0])
    assert_allclose(transition_matrix(p, z), transition_matrix(c, z)[::-1, ::-1])
