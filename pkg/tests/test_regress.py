import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from glate import regress
from glate.errors import (
    DimensionMismatch,
    RankDeficient,
    SingularRestriction,
    ValidationError,
    WeakDenominator,
    ZeroFirstStage,
)


def _iv_data(n=2000, m=4, seed=0, hetero=False):
    rng = np.random.default_rng(seed)
    g = rng.integers(0, m + 1, n)
    Z = (g[:, None] == np.arange(1, m + 1)[None, :]).astype(float)
    v = rng.normal(size=n)
    d = (0.2 + 0.15 * g + 0.5 * v > 0.5).astype(float)
    scale = 1.0 + 2.0 * d if hetero else 1.0
    y = 1.0 + 2.0 * d + scale * (0.6 * v + rng.normal(size=n))
    return y, d, Z


def test_ols_matches_lstsq_and_hc1_formula():
    rng = np.random.default_rng(1)
    X = np.column_stack([np.ones(300), rng.normal(size=(300, 3))])
    y = X @ [1.0, -2.0, 0.5, 0.0] + rng.normal(size=300) * (1 + np.abs(X[:, 1]))
    fit = regress.ols(y, X)
    ref = np.linalg.lstsq(X, y, rcond=None)[0]
    np.testing.assert_allclose(fit.coefficients, ref, rtol=1e-12, atol=1e-12)
    e = y - X @ ref
    bread = np.linalg.inv(X.T @ X)
    hc1 = bread @ (X.T * e**2) @ X @ bread * 300 / (300 - 4)
    np.testing.assert_allclose(fit.cov, hc1, rtol=1e-10)
    homo = regress.ols(y, X, se_kind="homoskedastic")
    np.testing.assert_allclose(homo.cov, e @ e / 296 * bread, rtol=1e-10)


def test_f_test_equals_ssr_form():
    rng = np.random.default_rng(2)
    n, k = 400, 6
    X = rng.normal(size=(n, k))
    y = X @ rng.normal(size=k) + rng.normal(size=n)
    R = rng.normal(size=(3, k))
    r = rng.normal(size=3)
    fit = regress.ols(y, X, se_kind="homoskedastic")
    test = regress.f_test_restrictions(fit, X, R, r)
    # restricted LS: beta = b0 + N theta with R b0 = r and R N = 0
    b0 = np.linalg.lstsq(R, r, rcond=None)[0]
    N = scipy.linalg.null_space(R)
    theta = np.linalg.lstsq(X @ N, y - X @ b0, rcond=None)[0]
    ssr_r = np.sum((y - X @ (b0 + N @ theta)) ** 2)
    ssr_u = fit.ssr
    f_ref = ((ssr_r - ssr_u) / 3) / (ssr_u / (n - k))
    assert test.f_stat == pytest.approx(f_ref, rel=1e-8)
    assert (test.df1, test.df2) == (3, n - k)


def test_fwl_equivalence():
    rng = np.random.default_rng(3)
    n = 500
    X2 = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
    X1 = rng.normal(size=(n, 2)) + X2[:, 1:2]
    y = X1 @ [1.5, -0.7] + X2 @ [0.3, 1.0, 2.0] + rng.normal(size=n)
    full = regress.ols(y, np.hstack([X1, X2]))
    y_t, X1_t = regress.partial_out([y, X1], X2)
    part = regress.ols(y_t, X1_t)
    np.testing.assert_allclose(part.coefficients, full.coefficients[:2], atol=1e-8)


def test_wald_equals_just_identified_tsls():
    y, d, Z = _iv_data(m=1, seed=4)
    beta, share = regress.wald(y, d, Z[:, 0])
    res = regress.tsls(y, d, Z[:, 0])
    assert abs(res.beta - beta) < 1e-9
    assert res.sargan_stat is None and res.sargan_p is None
    assert share == pytest.approx(d[Z[:, 0] == 1].mean() - d[Z[:, 0] == 0].mean())


def test_tsls_matches_textbook_formula():
    y, d, Z = _iv_data(seed=5)
    n = y.size
    ZW = np.column_stack([Z, np.ones(n)])
    X = np.column_stack([d, np.ones(n)])
    P = ZW @ np.linalg.solve(ZW.T @ ZW, ZW.T)
    b = np.linalg.solve(X.T @ P @ X, X.T @ P @ y)
    res = regress.tsls(y, d, Z, se_kind="homoskedastic")
    assert res.beta == pytest.approx(b[0], rel=1e-10)
    u = y - X @ b
    cov = (u @ u / (n - 2)) * np.linalg.inv(X.T @ P @ X)
    assert res.se == pytest.approx(np.sqrt(cov[0, 0]), rel=1e-8)
    # Sargan: n R^2 of the 2SLS residuals on the instruments
    fitted = P @ u
    assert res.sargan_stat == pytest.approx(n * (fitted @ fitted) / (u @ u), rel=1e-8)


def test_hansen_j_matches_explicit_two_step_gmm():
    y, d, Z = _iv_data(seed=6, hetero=True)
    n = y.size
    ZW = np.column_stack([Z, np.ones(n)])
    X = np.column_stack([d, np.ones(n)])
    P = ZW @ np.linalg.solve(ZW.T @ ZW, ZW.T)
    b1 = np.linalg.solve(X.T @ P @ X, X.T @ P @ y)
    u1 = y - X @ b1
    S = (ZW * u1[:, None] ** 2).T @ ZW / n
    Si = np.linalg.inv(S)
    A = ZW.T @ X / n
    b2 = np.linalg.solve(A.T @ Si @ A, A.T @ Si @ (ZW.T @ y / n))
    g = ZW.T @ (y - X @ b2) / n
    J = n * g @ Si @ g
    res = regress.tsls(y, d, Z)
    assert res.hansen_stat == pytest.approx(J, rel=1e-7)
    assert res.overid_p == res.hansen_p
    assert regress.tsls(y, d, Z, se_kind="homoskedastic").overid_p == res.sargan_p


@pytest.mark.parametrize("col,c", [(0, 7.5), (2, -0.01), (3, 1e4)])
def test_overid_statistics_invariant_to_instrument_scale(col, c):
    y, d, Z = _iv_data(seed=7)
    base = regress.tsls(y, d, Z)
    Zs = Z.copy()
    Zs[:, col] *= c
    scaled = regress.tsls(y, d, Zs)
    assert abs(scaled.sargan_stat - base.sargan_stat) < 1e-8
    assert abs(scaled.hansen_stat - base.hansen_stat) < 1e-6
    assert abs(scaled.beta - base.beta) < 1e-9


def test_first_stage_f_equals_ssr_form():
    y, d, Z = _iv_data(seed=8)
    n, m = Z.shape
    res = regress.tsls(y, d, Z)
    ssr_u = np.sum((d - np.column_stack([Z, np.ones(n)]) @ np.linalg.lstsq(np.column_stack([Z, np.ones(n)]), d, rcond=None)[0]) ** 2)
    ssr_r = np.sum((d - d.mean()) ** 2)
    f_ref = ((ssr_r - ssr_u) / m) / (ssr_u / (n - m - 1))
    assert res.first_stage_f == pytest.approx(f_ref, rel=1e-8)


def test_sargan_under_null_is_roughly_uniform():
    ps = [regress.tsls(*_iv_data(n=800, seed=s)).hansen_p for s in range(200)]
    assert 0.4 < np.mean(ps) < 0.6


def test_errors():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 2))
    with pytest.raises(RankDeficient):
        regress.ols(rng.normal(size=20), np.column_stack([X, X[:, 0] * 2]))
    with pytest.raises(DimensionMismatch):
        regress.ols(np.ones(19), X)
    with pytest.raises(ValidationError):
        regress.ols(np.ones(20), X, se_kind="hc7")
    fit = regress.ols(rng.normal(size=20), X)
    with pytest.raises(SingularRestriction):
        regress.f_test_restrictions(fit, X, [[1.0, 0.0], [2.0, 0.0]])
    z = np.repeat([0.0, 1.0], 10)
    d = np.tile([0.0, 1.0], 10)
    with pytest.raises(WeakDenominator):
        regress.tsls(rng.normal(size=20), d, z)
    with pytest.raises(ZeroFirstStage):
        regress.wald(rng.normal(size=20), d, z)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(8, 60), k=st.integers(1, 4))
def test_residuals_orthogonal_to_design(seed, n, k):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, k))
    y = rng.normal(size=n) * 10
    fit = regress.ols(y, X)
    assert np.max(np.abs(X.T @ fit.residuals)) < 1e-8 * max(1.0, np.abs(y).sum())
