"""Moment-matched F reference distributions for heteroskedastic Wald statistics.

For a contrast ``L`` and per-condition covariance blocks ``sigma2_k * M_k``,
the statistic ``rho * T = (L g)' (L S L')^{-1} (L g)`` has, under the null,
mean ``mu1`` and variance ``mu2`` (second-order expansion in the estimated
variances).  Matching ``c * T`` to ``F(rho, df)`` gives ``df`` and ``c``.

Everything here broadcasts over leading axes so a whole batch of genes can be
processed at once; a single gene is just a batch with no leading axes.
Arrays of per-condition matrices carry the condition axis just before the two
matrix axes, i.e. ``(..., K, rho, rho)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import optimize, special

from .errors import InvalidConditionCount, MomentMismatch, SingularOmega
from .moments import SigmaMoments

KINDS = ("DR", "DM", "DA", "DP")
OMEGA_COND_MAX = 1e12
CHISQ_LIMIT_EPS = 1e-8
OBJECTIVE_FAIL = 1e-6
OBJECTIVE_TARGET = 1e-10

CLOSED_FORM = "closed_form"
OPTIMIZER = "optimizer"
CHISQ_LIMIT = "chisq_limit"
FAILED = "failed"
_SOLVED_BY = (CLOSED_FORM, OPTIMIZER, CHISQ_LIMIT, FAILED)


@dataclass(frozen=True, eq=False)
class ContrastSpec:
    """Difference contrast between condition 1 and each other condition."""

    L: NDArray[np.float64]
    kind: str
    K: int

    @property
    def rho(self) -> int:
        return int(self.L.shape[0])

    @property
    def width(self) -> int:
        """Columns per condition (3 for coefficient contrasts, 1 for transforms)."""
        return self.L.shape[1] // self.K

    def block(self, k: int) -> NDArray[np.float64]:
        w = self.width
        return self.L[:, k * w:(k + 1) * w]


def build_contrast(kind: str, K: int) -> ContrastSpec:
    """Contrast matrix for test ``kind`` over ``K`` conditions.

    ``DR`` compares cosine then sine coefficients (``2(K-1) x 3K``), ``DM``
    the mesors (``(K-1) x 3K``), ``DA``/``DP`` a scalar transform per
    condition (``(K-1) x K``).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown contrast kind {kind!r}")
    if int(K) != K or K < 2:
        raise InvalidConditionCount(f"need at least 2 conditions, got {K}")
    K = int(K)
    if kind in ("DA", "DP"):
        L = np.zeros((K - 1, K))
        L[:, 0] = 1.0
        L[np.arange(K - 1), np.arange(1, K)] = -1.0
        return ContrastSpec(L, kind, K)
    coefs = (1, 2) if kind == "DR" else (0,)
    rows = []
    for c in coefs:
        for j in range(1, K):
            row = np.zeros(3 * K)
            row[c] = 1.0
            row[3 * j + c] = -1.0
            rows.append(row)
    return ContrastSpec(np.array(rows), kind, K)


def block_projections(contrast: ContrastSpec, blocks: ArrayLike) -> NDArray[np.float64]:
    """``P_k = L Diag(0, .., block_k, .., 0) L'`` for every condition.

    ``blocks`` is ``(..., K, 3, 3)`` of ``(X_k'X_k)^{-1}`` for coefficient
    contrasts, or ``(..., K)`` of scalars ``D_k' (X_k'X_k)^{-1} D_k`` for
    transform contrasts.  Returns ``(..., K, rho, rho)``.
    """
    blocks = np.asarray(blocks, dtype=float)
    Lk = np.stack([contrast.block(k) for k in range(contrast.K)])  # (K, rho, w)
    if contrast.width == 1:
        outer = np.einsum("kr,ks->krs", Lk[..., 0], Lk[..., 0])
        return blocks[..., None, None] * outer
    return np.einsum("kra,...kab,ksb->...krs", Lk, blocks, Lk)


@dataclass(frozen=True, eq=False)
class QuadFormContext:
    """Inputs shared by the sensitivity matrices and moment formulas.

    ``omega`` is ``sum_k sigma2_k P_k``, the (plug-in) covariance of the
    contrasted estimate.
    """

    proj: NDArray[np.float64]
    sigma2: NDArray[np.float64]
    resid_df: NDArray[np.float64]
    omega: NDArray[np.float64]


def make_context(contrast: ContrastSpec, blocks: ArrayLike, sigma2: ArrayLike,
                 resid_df: ArrayLike) -> QuadFormContext:
    proj = block_projections(contrast, blocks)
    s2 = np.asarray(sigma2, dtype=float)
    omega = np.einsum("...k,...krs->...rs", s2, proj)
    return QuadFormContext(proj, s2, np.asarray(resid_df, dtype=float), omega)


def _omega_ok(omega: NDArray[np.float64]) -> NDArray[np.bool_]:
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(omega)
    return np.isfinite(cond) & (cond <= OMEGA_COND_MAX)


def sensitivity_matrices(ctx: QuadFormContext):
    """Batch version of :func:`build_sensitivity_matrices`.

    Returns ``(B, ok)``; entries whose ``omega`` is ill-conditioned are NaN
    and ``ok`` is False there.
    """
    ok = _omega_ok(ctx.omega)
    safe = np.where(ok[..., None, None], ctx.omega, np.eye(ctx.omega.shape[-1]))
    omega_inv = np.linalg.inv(safe)
    B = ctx.proj @ omega_inv[..., None, :, :]
    B = np.where(ok[..., None, None, None], B, np.nan)
    return B, ok


def build_sensitivity_matrices(contrast: ContrastSpec, ctx: QuadFormContext) -> NDArray[np.float64]:
    """``B_k = P_k omega^{-1}`` (``G_k`` for transform contrasts).

    By construction ``sum_k sigma2_k B_k = I``.

    Raises
    ------
    SingularOmega
        If the condition number of ``omega`` exceeds 1e12.
    """
    if ctx.proj.shape[-3] != contrast.K or ctx.proj.shape[-1] != contrast.rho:
        raise ValueError("context does not match the contrast dimensions")
    B, ok = sensitivity_matrices(ctx)
    if not np.all(ok):
        raise SingularOmega("contrast covariance is singular or ill-conditioned")
    return B


def _tr(a):
    return np.trace(a, axis1=-2, axis2=-1)


def _tr_prod(a, b):
    """``trace(a @ b)`` without forming the product."""
    return np.einsum("...ij,...ji->...", a, b)


def compute_mu1_mu2(B: ArrayLike, moments: SigmaMoments):
    """First moment and variance of ``rho * T`` under the null.

    Parameters
    ----------
    B : array, shape (..., K, rho, rho)
        Sensitivity matrices.
    moments : SigmaMoments
        Per-condition variance and third/fourth central moments of the
        residual variances, shape ``(..., K)``.
    """
    B = np.asarray(B, dtype=float)
    rho = B.shape[-1]
    K = B.shape[-3]
    var2 = np.asarray(moments.var2, dtype=float)
    cm3 = np.asarray(moments.cm3, dtype=float)
    cm4 = np.asarray(moments.cm4, dtype=float)

    BB = B @ B
    tr_b = _tr(B)
    tr_bb = _tr(BB)
    tr_bbb = _tr_prod(BB, B)
    tr_bbbb = _tr_prod(BB, BB)

    mu1 = rho + np.sum(var2 * tr_bb, axis=-1)

    own = (var2 * (tr_b**2 + 6.0 * tr_bb)
           - cm3 * (2.0 * tr_b * tr_bb + 4.0 * tr_bbb)
           + cm4 * (tr_bb**2 + 2.0 * tr_bbbb)
           - var2**2 * tr_bb**2)
    mu2 = 2.0 * rho + np.sum(own, axis=-1)
    for k in range(K):
        for s in range(k + 1, K):
            Bk, Bs = B[..., k, :, :], B[..., s, :, :]
            sym = Bk @ Bs + Bs @ Bk
            cross = (_tr(sym) ** 2
                     + 4.0 * _tr_prod(BB[..., k, :, :], BB[..., s, :, :])
                     + 2.0 * _tr_prod(sym, sym))
            mu2 = mu2 + var2[..., k] * var2[..., s] * cross
    return mu1, mu2


@dataclass(frozen=True)
class FApprox:
    """Matched reference distribution for ``c * T``.

    Under ``chisq_limit`` the reference is ``chi2_rho / rho`` with
    ``c = rho / mu1`` and ``df = inf``.
    """

    rho: int
    df: float
    c: float
    mu1: float
    mu2: float
    solved_by: str


def _closed_form(rho, mu1, mu2):
    # numpy scalars so an exact R == 1 yields inf instead of raising
    mu1 = np.asarray(mu1, dtype=float)[()]
    mu2 = np.asarray(mu2, dtype=float)[()]
    ratio = rho * mu2 / (2.0 * mu1**2)
    denom = ratio - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        df = (rho - 2.0 + 2.0 * rho * mu2 / mu1**2) / denom
        c = rho * df / (mu1 * (df - 2.0))
    return df, c, denom


def fallback_residuals(c: float, df: float, rho: float, mu1: float, mu2: float):
    """The two terms of the fallback least-squares objective.

    The second term matches ``c^2 mu2 / rho^2`` against
    ``2 df^2 / (rho (df-2)^2 (df-4))``, exactly as the fallback objective is
    stated; it is always solvable on ``df > 4``.
    """
    r1 = c * mu1 / rho - df / (df - 2.0)
    r2 = c * c * mu2 / rho**2 - 2.0 * df**2 / (rho * (df - 2.0) ** 2 * (df - 4.0))
    return r1, r2


def _fallback(rho: float, mu1: float, mu2: float):
    """Grid search then local least-squares refinement; deterministic."""
    cs = np.logspace(-3.0, 3.0, 241)
    dfs = 4.0 + np.logspace(-3.0, math.log10(1e4 - 4.0), 241)
    cg, dg = np.meshgrid(cs, dfs, indexing="ij")
    r1, r2 = fallback_residuals(cg, dg, rho, mu1, mu2)
    obj = r1**2 + r2**2
    i, j = np.unravel_index(np.nanargmin(obj), obj.shape)

    def resid(p):
        c, df = math.exp(p[0]), 4.0 + math.exp(p[1])
        return np.array(fallback_residuals(c, df, rho, mu1, mu2))

    x0 = np.array([math.log(cs[i]), math.log(dfs[j] - 4.0)])
    sol = optimize.least_squares(resid, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    c, df = math.exp(sol.x[0]), 4.0 + math.exp(sol.x[1])
    r1, r2 = fallback_residuals(c, df, rho, mu1, mu2)
    return c, df, r1**2 + r2**2


def solve_df_c(rho: int, mu1: float, mu2: float) -> FApprox:
    """Solve the two moment equations for ``(df, c)``.

    Uses the closed form when it gives ``df > 2`` and ``c > 0``; falls back
    to minimising the two-term objective over ``c > 0, df > 4`` otherwise.
    When the closed-form denominator is within 1e-8 of zero the variance
    estimation adds nothing and the chi-square limit is returned.

    Raises
    ------
    MomentMismatch
        If the fallback objective cannot be driven below 1e-6.
    """
    if rho < 1 or not (mu1 > 0) or not (mu2 > 0):
        raise MomentMismatch(f"invalid moments rho={rho}, mu1={mu1}, mu2={mu2}")
    rho, mu1, mu2 = int(rho), float(mu1), float(mu2)
    df, c, denom = _closed_form(rho, mu1, mu2)
    if abs(denom) < CHISQ_LIMIT_EPS:
        return FApprox(rho, math.inf, rho / mu1, mu1, mu2, CHISQ_LIMIT)
    if np.isfinite(df) and df > 2.0 and c > 0.0:
        return FApprox(rho, float(df), float(c), mu1, mu2, CLOSED_FORM)
    c, df, obj = _fallback(rho, mu1, mu2)
    if not obj < OBJECTIVE_FAIL:
        raise MomentMismatch(f"fallback objective stuck at {obj:.3g}")
    return FApprox(rho, df, c, mu1, mu2, OPTIMIZER)


def solve_df_c_many(rho: int, mu1: ArrayLike, mu2: ArrayLike):
    """Vectorised :func:`solve_df_c`.

    Returns ``df, c, solved_by`` arrays; ``solved_by`` holds the strings of
    :class:`FApprox` plus ``"failed"`` where moments were invalid or the
    fallback did not converge (``df``/``c`` NaN there).
    """
    mu1 = np.asarray(mu1, dtype=float)
    mu2 = np.asarray(mu2, dtype=float)
    df, c, denom = _closed_form(rho, mu1, mu2)
    code = np.full(mu1.shape, 3, dtype=np.int8)
    valid = np.isfinite(mu1) & np.isfinite(mu2) & (mu1 > 0) & (mu2 > 0)
    limit = valid & (np.abs(denom) < CHISQ_LIMIT_EPS)
    closed = valid & ~limit & np.isfinite(df) & (df > 2.0) & (c > 0.0)
    code[closed] = 0
    code[limit] = 2
    df = np.where(limit, np.inf, df)
    c = np.where(limit, rho / np.where(valid, mu1, 1.0), c)
    for idx in zip(*np.nonzero(valid & ~limit & ~closed)):
        try:
            fa = solve_df_c(rho, mu1[idx], mu2[idx])
        except MomentMismatch:
            continue
        df[idx], c[idx] = fa.df, fa.c
        code[idx] = _SOLVED_BY.index(fa.solved_by)
    failed = code == 3
    df = np.where(failed, np.nan, df)
    c = np.where(failed, np.nan, c)
    return df, c, np.array(_SOLVED_BY, dtype=object)[code]


def f_pvalue_many(stat: ArrayLike, rho: int, df: ArrayLike, c: ArrayLike,
                  solved_by: ArrayLike) -> NDArray[np.float64]:
    """Upper-tail probability of the matched reference at ``c * stat``."""
    stat = np.asarray(stat, dtype=float)
    df = np.asarray(df, dtype=float)
    c = np.asarray(c, dtype=float)
    solved_by = np.asarray(solved_by, dtype=object)
    x = c * stat
    limit = solved_by == CHISQ_LIMIT
    with np.errstate(invalid="ignore"):
        p_f = special.fdtrc(rho, np.where(limit, 1.0, df), np.maximum(x, 0.0))
        p_chi = special.chdtrc(rho, rho * np.maximum(x, 0.0))
    p = np.where(limit, p_chi, p_f)
    p = np.where(np.isfinite(x), p, np.nan)
    p = np.where(stat == 0.0, 1.0, p)
    return np.clip(p, 0.0, 1.0)


def f_pvalue(stat: float, approx: FApprox) -> float:
    """``P(F(rho, df) > c * stat)``, or ``P(chi2_rho > rho * c * stat)`` in the limit."""
    if stat < 0:
        raise ValueError("statistic must be non-negative")
    return float(f_pvalue_many(stat, approx.rho, approx.df, approx.c, approx.solved_by))


def quadratic_statistic(diff: ArrayLike, omega: ArrayLike) -> NDArray[np.float64]:
    """``diff' omega^{-1} diff / rho`` over leading axes."""
    diff = np.asarray(diff, dtype=float)
    omega = np.asarray(omega, dtype=float)
    rho = diff.shape[-1]
    sol = np.linalg.solve(omega, diff[..., None])[..., 0]
    return np.einsum("...r,...r->...", diff, sol) / rho
