"""Numeric kernels: truncated SVD, OLS with inference, Student-t tails,
Pearson matrices and degree-distribution curve fits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_triangular
from scipy.special import betainc

from .errors import CollinearDesign, FitInfeasible, InsufficientSamples, NumericsError

COLLINEAR_CORRELATION = 0.9999


def _orient(U: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # make the largest-magnitude entry of each left vector positive
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, V * signs


def truncated_svd(
    matrix,
    k: int,
    *,
    dense_threshold: int = 256,
    oversample: int = 10,
    power_iterations: int = 2,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-``k`` singular triplets ``(U, s, V)`` with ``A ≈ U diag(s) Vᵀ``.

    Small problems (``min(shape) <= dense_threshold``) use a dense LAPACK
    SVD; larger ones a randomized range finder with power iterations.
    Singular values come back in descending order and each pair of
    singular vectors has a fixed sign convention.
    """
    m, n = matrix.shape
    if not 1 <= k <= min(m, n):
        raise ValueError(f"k must lie in [1, {min(m, n)}], got {k}")
    try:
        if min(m, n) <= dense_threshold:
            dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=np.float64)
            U, s, Vt = np.linalg.svd(dense, full_matrices=False)
            U, s, V = U[:, :k], s[:k], Vt[:k].T
        else:
            A = sp.csr_matrix(matrix, dtype=np.float64) if sp.issparse(matrix) else np.asarray(matrix, dtype=np.float64)
            rng = np.random.default_rng(seed)
            width = min(k + oversample, min(m, n))
            Q, _ = np.linalg.qr(A @ rng.standard_normal((n, width)))
            for _ in range(power_iterations):
                Z, _ = np.linalg.qr(A.T @ Q)
                Q, _ = np.linalg.qr(A @ Z)
            B = np.asarray((A.T @ Q).T)
            Ub, s, Vt = np.linalg.svd(B, full_matrices=False)
            U, s, V = (Q @ Ub)[:, :k], s[:k], Vt[:k].T
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"SVD did not converge: {exc}") from exc
    if not np.all(np.isfinite(s)):
        raise NumericsError("SVD produced non-finite singular values")
    U, V = _orient(U, V)
    return U, s, V


def student_t_two_sided_p(t, dof):
    """Two-sided tail probability ``P(|T| >= |t|)`` of Student's t.

    Uses ``P = I_x(dof/2, 1/2)`` with ``x = dof / (dof + t^2)``.
    """
    t = np.asarray(t, dtype=np.float64)
    dof = np.asarray(dof, dtype=np.float64)
    if np.any(dof < 1):
        raise ValueError("dof must be >= 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(np.isinf(t), 0.0, dof / (dof + t * t))
    p = betainc(dof / 2.0, 0.5, x)
    return float(p) if p.ndim == 0 else p


@dataclass(frozen=True)
class OlsFit:
    """Least-squares fit with intercept.

    ``std_errors``, ``t_statistics`` and ``p_values`` have ``C + 1`` entries:
    the intercept first, then one per design column.
    """

    intercept: float
    coefficients: np.ndarray
    residuals: np.ndarray
    r_squared: float
    adj_r_squared: float
    std_errors: np.ndarray
    t_statistics: np.ndarray
    p_values: np.ndarray
    dof: int
    names: tuple[str, ...]

    @property
    def coefficient_p_values(self) -> np.ndarray:
        return self.p_values[1:]

    def to_json(self) -> dict:
        return {
            "intercept": self.intercept,
            "coefficients": dict(zip(self.names, self.coefficients.tolist())),
            "std_errors": dict(zip(("intercept",) + self.names, self.std_errors.tolist())),
            "t_statistics": dict(zip(("intercept",) + self.names, self.t_statistics.tolist())),
            "p_values": dict(zip(("intercept",) + self.names, self.p_values.tolist())),
            "r_squared": self.r_squared,
            "adj_r_squared": self.adj_r_squared,
            "dof": self.dof,
            "residuals": self.residuals.tolist(),
        }


def _collinear_names(X: np.ndarray, names: Sequence[str]) -> list[str]:
    flagged: list[str] = []
    sd = X.std(axis=0)
    for c in np.flatnonzero(sd == 0):
        flagged += ["intercept", names[c]]
    r = pearson_matrix(X.T)
    C = X.shape[1]
    for a in range(C):
        for b in range(a + 1, C):
            if np.isfinite(r[a, b]) and abs(r[a, b]) > COLLINEAR_CORRELATION:
                flagged += [names[a], names[b]]
    return list(dict.fromkeys(flagged))


def ols_fit(design, target, names: Optional[Sequence[str]] = None) -> OlsFit:
    """Ordinary least squares of ``target`` on ``design`` plus an intercept, via QR."""
    X = np.asarray(design, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(target, dtype=np.float64).ravel()
    M, C = X.shape
    if y.size != M:
        raise ValueError("design and target lengths differ")
    names = tuple(names) if names is not None else tuple(f"x{c}" for c in range(C))
    if len(names) != C:
        raise ValueError("names must match the number of design columns")
    if M <= C + 1:
        raise InsufficientSamples(f"need more than {C + 1} rows for {C} predictors, got {M}")

    Xi = np.column_stack([np.ones(M), X])
    norms = np.linalg.norm(Xi, axis=0)
    if np.any(norms == 0):
        raise CollinearDesign(_collinear_names(X, names))
    sv = np.linalg.svd(Xi / norms, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise CollinearDesign(_collinear_names(X, names))

    Q, R = np.linalg.qr(Xi)
    theta = solve_triangular(R, Q.T @ y)
    resid = y - Xi @ theta
    sse = float(resid @ resid)
    sst = float(((y - y.mean()) ** 2).sum())
    dof = M - C - 1
    r2 = 1.0 - sse / sst if sst > 0 else float("nan")
    adj = 1.0 - (1.0 - r2) * (M - 1) / dof
    Rinv = solve_triangular(R, np.eye(C + 1))
    cov_unscaled = Rinv @ Rinv.T
    sigma2 = sse / dof
    se = np.sqrt(sigma2 * np.diag(cov_unscaled))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, theta / np.where(se > 0, se, 1.0), np.sign(theta) * np.inf)
    t = np.where((se == 0) & (theta == 0), 0.0, t)
    p = np.asarray(student_t_two_sided_p(t, dof), dtype=np.float64).reshape(-1)
    return OlsFit(
        intercept=float(theta[0]),
        coefficients=theta[1:],
        residuals=resid,
        r_squared=r2,
        adj_r_squared=adj,
        std_errors=se,
        t_statistics=t,
        p_values=p,
        dof=dof,
        names=names,
    )


def pearson_matrix(columns) -> np.ndarray:
    """Pairwise Pearson correlations; entries touching a constant column are NaN."""
    X = np.asarray(columns, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("columns must be a 2-d array-like (one row per variable)")
    if X.shape[1] < 2:
        raise ValueError("need at least two observations")
    Z = X - X.mean(axis=1, keepdims=True)
    norm = np.sqrt((Z * Z).sum(axis=1))
    const = norm == 0
    safe = np.where(const, 1.0, norm)
    r = (Z @ Z.T) / np.outer(safe, safe)
    r = np.clip(r, -1.0, 1.0)
    np.fill_diagonal(r, 1.0)
    r[const, :] = np.nan
    r[:, const] = np.nan
    return r


@dataclass(frozen=True)
class DegreeDistributionFit:
    """Empirical degree pmf with power-law and exponential curve fits.

    Both fits are least squares on ``log10 p``: against ``log10 d`` for the
    power law ``p ∝ d^-exponent`` and against ``d`` for the exponential
    ``p ∝ exp(-rate d)``. Residuals are sums of squared ``log10`` errors.
    """

    degrees: np.ndarray
    probabilities: np.ndarray
    power_law_exponent: float
    power_law_log10_scale: float
    power_law_residual: float
    exponential_rate: float
    exponential_log10_scale: float
    exponential_residual: float

    def power_law(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=np.float64)
        return 10.0 ** (self.power_law_log10_scale - self.power_law_exponent * np.log10(d))

    def exponential(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=np.float64)
        return 10.0 ** (self.exponential_log10_scale - self.exponential_rate * d / np.log(10.0))

    @property
    def preferred(self) -> str:
        return "power_law" if self.power_law_residual < self.exponential_residual else "exponential"


def fit_degree_distribution(degrees) -> DegreeDistributionFit:
    d = np.asarray(degrees, dtype=np.int64).ravel()
    d = d[d >= 1]
    values, counts = np.unique(d, return_counts=True)
    if values.size < 10:
        raise FitInfeasible(f"need at least 10 distinct positive degrees, got {values.size}")
    pmf = counts / counts.sum()
    logp = np.log10(pmf)
    pl = ols_fit(np.log10(values.astype(np.float64)), logp, names=("log10_degree",))
    ex = ols_fit(values.astype(np.float64), logp, names=("degree",))
    return DegreeDistributionFit(
        degrees=values,
        probabilities=pmf,
        power_law_exponent=-float(pl.coefficients[0]),
        power_law_log10_scale=pl.intercept,
        power_law_residual=float(pl.residuals @ pl.residuals),
        exponential_rate=-float(ex.coefficients[0]) * float(np.log(10.0)),
        exponential_log10_scale=ex.intercept,
        exponential_residual=float(ex.residuals @ ex.residuals),
    )
