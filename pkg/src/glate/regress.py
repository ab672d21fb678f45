"""Dense linear-model primitives: OLS, residualization, F tests, 2SLS, Wald.

Design matrices are plain 2-D float arrays. Rank is checked with a pivoted QR:
a column counts as dependent when its pivot is below ``RANK_TOL`` times the
largest pivot, which catches the exact collinearity dummy designs produce.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from glate.distributions import chi2_sf, f_sf
from glate.errors import (
    DimensionMismatch,
    RankDeficient,
    SingularRestriction,
    ValidationError,
    WeakDenominator,
    ZeroFirstStage,
)

RANK_TOL = 1e-10
WEAK_TOL = 1e-12

SE_KINDS = {"homoskedastic": "homoskedastic", "hc1": "hc1", "robust": "hc1", "hc-robust": "hc1"}


def _se_kind(se_kind: str) -> str:
    try:
        return SE_KINDS[se_kind]
    except KeyError:
        raise ValidationError(f"unknown se_kind {se_kind!r}; expected one of {sorted(SE_KINDS)}") from None


@dataclass(frozen=True)
class FitResult:
    coefficients: np.ndarray
    residuals: np.ndarray
    sigma2: float
    cov: np.ndarray
    se_kind: str
    xtx_inv: np.ndarray

    @property
    def n(self) -> int:
        return self.residuals.shape[0]

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    @property
    def ssr(self) -> float:
        return float(self.residuals @ self.residuals)


@dataclass(frozen=True)
class RestrictionTest:
    R: np.ndarray
    r: np.ndarray
    f_stat: float
    df1: int
    df2: int
    p_value: float


@dataclass(frozen=True)
class TslsResult:
    beta: float
    se: float
    first_stage_f: float
    sargan_stat: float | None
    sargan_p: float | None
    n: int
    n_instruments: int
    first_stage_p: float = float("nan")
    hansen_stat: float | None = None
    hansen_p: float | None = None
    se_kind: str = "hc1"

    @property
    def overid_p(self) -> float | None:
        """Hansen J p-value with robust errors, classical Sargan p otherwise."""
        return self.sargan_p if self.se_kind == "homoskedastic" else self.hansen_p

    @property
    def ci95(self) -> tuple[float, float]:
        return (self.beta - 1.96 * self.se, self.beta + 1.96 * self.se)


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionMismatch(f"design matrix must be 2-D, got shape {X.shape}")
    return X


def _as_vector(y, n: int | None = None, name: str = "y") -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    if y.ndim != 1:
        raise DimensionMismatch(f"{name} must be a vector, got shape {y.shape}")
    if n is not None and y.shape[0] != n:
        raise DimensionMismatch(f"{name} has {y.shape[0]} rows, expected {n}")
    return y


def column_rank(X: np.ndarray) -> int:
    """Numerical column rank from a pivoted QR decomposition."""
    X = _as_matrix(X)
    if X.shape[1] == 0:
        return 0
    R = scipy.linalg.qr(X, mode="r", pivoting=True, check_finite=False)[0]
    pivots = np.abs(np.diag(R))
    if pivots.size == 0 or pivots[0] == 0.0:
        return 0
    return int(np.sum(pivots >= RANK_TOL * pivots[0]))


def check_full_rank(X: np.ndarray, what: str = "design matrix") -> None:
    X = _as_matrix(X)
    n, k = X.shape
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{what} contains non-finite entries")
    if n < k:
        raise RankDeficient(f"{what} has {n} rows but {k} columns")
    rank = column_rank(X)
    if rank < k:
        raise RankDeficient(f"{what} has rank {rank} < {k} columns")


def _solve_ls(X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares coefficients and (X'X)^-1 via thin QR; X assumed full rank."""
    Q, R = np.linalg.qr(X)
    coef = scipy.linalg.solve_triangular(R, Q.T @ Y, check_finite=False)
    R_inv = scipy.linalg.solve_triangular(R, np.eye(R.shape[0]), check_finite=False)
    return coef, R_inv @ R_inv.T


def _sandwich(X: np.ndarray, resid: np.ndarray, xtx_inv: np.ndarray, n_params: int) -> np.ndarray:
    n = X.shape[0]
    Xu = X * resid[:, None]
    meat = Xu.T @ Xu
    cov = xtx_inv @ meat @ xtx_inv
    if n > n_params:
        cov *= n / (n - n_params)
    return (cov + cov.T) / 2.0


def ols(y, X, se_kind: str = "hc1") -> FitResult:
    """Ordinary least squares of ``y`` on the columns of ``X``.

    ``se_kind`` selects the coefficient covariance: ``"homoskedastic"`` for
    s^2 (X'X)^-1, ``"hc1"`` (alias ``"robust"``) for the HC1 sandwich.
    """
    X = _as_matrix(X)
    n, k = X.shape
    y = _as_vector(y, n)
    kind = _se_kind(se_kind)
    check_full_rank(X)
    coef, xtx_inv = _solve_ls(X, y)
    resid = y - X @ coef
    dof = n - k
    sigma2 = float(resid @ resid) / dof if dof > 0 else float("nan")
    if kind == "homoskedastic":
        cov = sigma2 * xtx_inv
    else:
        cov = _sandwich(X, resid, xtx_inv, k)
    return FitResult(coef, resid, sigma2, cov, kind, xtx_inv)


def partial_out(targets: Sequence[np.ndarray], controls) -> list[np.ndarray]:
    """Residualize each target on ``controls`` (Frisch-Waugh-Lovell).

    Targets may be vectors or matrices; each is returned with the same shape.
    """
    C = _as_matrix(controls)
    check_full_rank(C, "controls")
    Q, _ = np.linalg.qr(C)
    out = []
    for t in targets:
        t = np.asarray(t, dtype=float)
        if t.shape[0] != C.shape[0]:
            raise DimensionMismatch(f"target has {t.shape[0]} rows, controls have {C.shape[0]}")
        out.append(t - Q @ (Q.T @ t))
    return out


def f_test_restrictions(fit: FitResult, X, R, r=None) -> RestrictionTest:
    """F test of H0: R beta = r using the unrestricted fit's s^2.

    F = (R b - r)' [R (X'X)^-1 R']^-1 (R b - r) / q / s^2, referred to
    F(q, N - cols(X)).
    """
    X = _as_matrix(X)
    n, k = X.shape
    R = np.atleast_2d(np.asarray(R, dtype=float))
    q = R.shape[0]
    if R.shape[1] != k:
        raise DimensionMismatch(f"R has {R.shape[1]} columns, X has {k}")
    if q < 1 or not np.all(np.isfinite(R)):
        raise ValidationError("R must have at least one finite row")
    r = np.zeros(q) if r is None else _as_vector(r, q, "r")
    if fit.coefficients.shape[0] != k or fit.n != n:
        raise DimensionMismatch("fit does not match X")

    middle = R @ fit.xtx_inv @ R.T
    diff = R @ fit.coefficients - r
    try:
        cho = scipy.linalg.cho_factor(middle, check_finite=False)
        quad = float(diff @ scipy.linalg.cho_solve(cho, diff, check_finite=False))
    except np.linalg.LinAlgError:
        raise SingularRestriction("R (X'X)^-1 R' is not invertible") from None
    if np.linalg.cond(middle) > 1.0 / RANK_TOL:
        raise SingularRestriction("R (X'X)^-1 R' is numerically singular")

    df2 = n - k
    s2 = fit.ssr / df2 if df2 > 0 else float("nan")
    num = max(quad, 0.0) / q
    if s2 > 0.0:
        f_stat = num / s2
    elif num == 0.0:
        f_stat = 0.0
    else:
        f_stat = float("inf")
    p_value = f_sf(f_stat, q, df2) if df2 > 0 else float("nan")
    return RestrictionTest(R, r, float(f_stat), q, df2, float(p_value))


def tsls(y, d, Z, exog=None, *, intercept: bool = True, se_kind: str = "hc1") -> TslsResult:
    """Two-stage least squares with one endogenous regressor ``d``.

    ``Z`` holds the excluded instruments; ``exog`` (plus an intercept unless
    disabled) the included exogenous regressors. Reports the first-stage F of
    the excluded instruments and, when overidentified, two overidentification
    statistics against chi-square(n_instruments - 1): the classical Sargan
    N R^2 and the heteroskedasticity-robust Hansen J from two-step GMM.
    """
    Z = _as_matrix(Z)
    n, m = Z.shape
    y = _as_vector(y, n)
    d = _as_vector(d, n, "d")
    kind = _se_kind(se_kind)
    blocks = [] if exog is None else [_as_matrix(exog)]
    if intercept:
        blocks.append(np.ones((n, 1)))
    W = np.hstack(blocks) if blocks else np.empty((n, 0))
    if W.shape[0] != n:
        raise DimensionMismatch("exog rows do not match Z")
    ZW = np.hstack([Z, W])
    if n <= ZW.shape[1]:
        raise RankDeficient(f"need more than {ZW.shape[1]} observations, got {n}")
    check_full_rank(ZW, "instrument matrix")

    Q, _ = np.linalg.qr(ZW)
    d_hat = Q @ (Q.T @ d)
    # first-stage variation in d explained by Z beyond W
    if W.shape[1]:
        Qw, _ = np.linalg.qr(W)
        d_hat_w = Qw @ (Qw.T @ d)
    else:
        d_hat_w = np.zeros(n)
    excluded_var = float(np.sum((d_hat - d_hat_w) ** 2)) / n
    if excluded_var < WEAK_TOL:
        raise WeakDenominator("first stage has no variation from the excluded instruments")

    X = np.column_stack([d, W])
    X_hat = np.column_stack([d_hat, W])
    check_full_rank(X_hat, "second-stage regressors")
    coef, xhx_inv = _solve_ls(X_hat, y)
    # X_hat'X = X_hat'X_hat, so the projected LS solution is the 2SLS solution
    resid = y - X @ coef
    k = X.shape[1]
    if kind == "homoskedastic":
        s2 = float(resid @ resid) / (n - k)
        cov = s2 * xhx_inv
    else:
        cov = _sandwich(X_hat, resid, xhx_inv, k)
    beta = float(coef[0])
    se = float(np.sqrt(cov[0, 0]))

    fs_fit = ols(d, ZW, se_kind="homoskedastic")
    R = np.hstack([np.eye(m), np.zeros((m, W.shape[1]))])
    fs = f_test_restrictions(fs_fit, ZW, R)

    sargan_stat = sargan_p = None
    if m >= 2:
        u_hat = Q @ (Q.T @ resid)
        uu = float(resid @ resid)
        r2 = float(u_hat @ u_hat) / uu if uu > 0 else 0.0
        sargan_stat = n * r2
        sargan_p = chi2_sf(sargan_stat, m - 1)
        hansen_stat = _hansen_j(y, X, Q, resid)
        hansen_p = chi2_sf(hansen_stat, m - 1) if np.isfinite(hansen_stat) else float("nan")
    else:
        hansen_stat = hansen_p = None

    return TslsResult(
        beta=beta,
        se=se,
        first_stage_f=fs.f_stat,
        sargan_stat=sargan_stat,
        sargan_p=sargan_p,
        n=n,
        n_instruments=m,
        first_stage_p=fs.p_value,
        hansen_stat=hansen_stat,
        hansen_p=hansen_p,
        se_kind=kind,
    )


def _hansen_j(y: np.ndarray, X: np.ndarray, Q: np.ndarray, resid: np.ndarray) -> float:
    # J is invariant to nonsingular instrument transforms, so work with the
    # orthonormal basis Q of the instrument space
    n = y.shape[0]
    Qu = Q * resid[:, None]
    S = Qu.T @ Qu / n
    try:
        cho = scipy.linalg.cho_factor(S, check_finite=False)
    except np.linalg.LinAlgError:
        return float("nan")
    A = Q.T @ X / n
    c = Q.T @ y / n
    SiA = scipy.linalg.cho_solve(cho, A, check_finite=False)
    coef = np.linalg.solve(A.T @ SiA, SiA.T @ c)
    g = Q.T @ (y - X @ coef) / n
    return float(n * g @ scipy.linalg.cho_solve(cho, g, check_finite=False))


def wald(y, d, z) -> tuple[float, float]:
    """Wald ratio for a binary instrument; returns (beta, complier_share)."""
    z = np.asarray(z)
    y = _as_vector(y, z.shape[0])
    d = _as_vector(d, z.shape[0], "d")
    on = z == 1
    off = z == 0
    if not on.any() or not off.any() or not np.all(on | off):
        raise ValidationError("instrument must be binary and take both values")
    share = float(d[on].mean() - d[off].mean())
    if share == 0.0:
        raise ZeroFirstStage("first-stage difference is exactly zero")
    return float(y[on].mean() - y[off].mean()) / share, share
