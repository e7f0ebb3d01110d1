import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from fams.core import (
    DimensionError,
    PriorConfig,
    RegimeParams,
    TimePanel,
    build_lag_design,
    check_states,
    standardize_panel,
)


def test_lag_design_small():
    X, y = build_lag_design([1, 2, 3, 4], 1)
    assert_array_equal(X, [[1, 1], [1, 2], [1, 3]])
    assert_array_equal(y, [2, 3, 4])


def test_lag_design_constant_series():
    X, y = build_lag_design([5, 5, 5], 2)
    assert_array_equal(X, [[1, 5, 5]])
    assert_array_equal(y, [5])


def test_lag_design_matches_index_assembly(rng):
    y = np.zeros(250)
    for t in range(1, 250):
        y[t] = -0.25 + 0.55 * y[t - 1] + 0.3 * rng.standard_normal()
    for p in (1, 4):
        X, resp = build_lag_design(y, p)
        assert X.shape == (250 - p, p + 1)
        for row in range(250 - p):
            t = row + p
            assert resp[row] == y[t]
            assert X[row, 0] == 1.0
            for j in range(1, p + 1):
                assert X[row, j] == y[t - j]


def test_lag_design_too_short():
    with pytest.raises(DimensionError):
        build_lag_design([1.0, 2.0], 2)


def test_ols_recovers_noiseless_ar():
    phi = np.array([0.5, -0.3, 0.1])
    y = np.zeros(60)
    y[:3] = [1.0, -0.5, 0.25]
    for t in range(3, 60):
        y[t] = 0.7 + phi @ y[t - 3:t][::-1]
    X, resp = build_lag_design(y, 3)
    coef = np.linalg.lstsq(X, resp, rcond=None)[0]
    assert_allclose(coef, np.r_[0.7, phi], atol=1e-8)


def test_standardize_sample_sd():
    # T-1 denominator: sd of (2,4,6) is 2
    panel = standardize_panel([[2.0, 4.0, 6.0]])
    assert_allclose(panel.series[0], [-1.0, 0.0, 1.0], atol=1e-15)
    assert_allclose(panel.means, [4.0])
    assert_allclose(panel.sds, [2.0])
    assert_allclose(panel.raw_series(), [[2.0, 4.0, 6.0]])


def test_standardize_idempotent(rng):
    raw = rng.normal(3.0, 2.0, size=(5, 40))
    once = standardize_panel(raw)
    twice = standardize_panel(once.series)
    assert_allclose(twice.series, once.series, atol=1e-12)
    assert_allclose(once.series.mean(axis=1), 0.0, atol=1e-8)
    assert_allclose(once.series.std(axis=1, ddof=1), 1.0, atol=1e-8)


def test_standardize_rejects_constant_series():
    with pytest.raises(ValueError, match="flat"):
        standardize_panel([[1.0, 2.0, 3.0], [4.0, 4.0, 4.0]], names=["ok", "flat"])


def test_time_panel_validation():
    with pytest.raises(ValueError):
        TimePanel([[1.0, np.nan]], ["a"], [0, 1], [0.0, 0.0])
    with pytest.raises(DimensionError):
        TimePanel([[1.0, 2.0]], ["a"], [0, 1], [0.0])
    p = TimePanel([[1.0, 2.0]], ["a"], [0, 1], [0.0, 1.0])
    with pytest.raises(ValueError):
        p.series[0, 0] = 3.0


def test_regime_params_invariants():
    with pytest.raises(ValueError):
        RegimeParams([0.0, 1.0], [[0.5], [0.5]], [1.0, -1.0], switch_var=True)
    with pytest.raises(ValueError, match="phi"):
        RegimeParams([0.0, 1.0], [[0.5], [0.4]], [1.0, 1.0])
    rp = RegimeParams([0.0, 1.0], [[0.5], [0.5]], [1.0, 1.0])
    assert rp.H == 2 and rp.p == 1
    assert_array_equal(rp.permute([1, 0]).mu, [1.0, 0.0])


def test_check_states():
    assert_array_equal(check_states([0, 1, 1], 2), [0, 1, 1])
    with pytest.raises(ValueError):
        check_states([0, 2], 2)


def test_prior_defaults_and_validation():
    p = PriorConfig()
    assert (p.m0, p.r0, p.M0, p.R0) == (0.0, 0.0, 10.0, 4.0)
    assert (p.c0_sig, p.d0_sig, p.g0, p.G0) == (1.0, 1.0, 0.0, 4.0)
    assert (p.c_psi0, p.c_psi1) == (0.01, 0.01)
    with pytest.raises(ValueError, match="M0"):
        PriorConfig(M0=0.0)
