"""Multiple-testing adjustment of per-gene p-values.

NaN entries mark genes that were not tested (gated out or flagged); they are
left out of the family size and come back as NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray


def _as_pvalues(p: ArrayLike) -> NDArray[np.float64]:
    p = np.asarray(p, dtype=float)
    finite = p[~np.isnan(p)]
    if np.any((finite < 0) | (finite > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    return p


def bh_adjust(p: ArrayLike) -> NDArray[np.float64]:
    """Benjamini-Hochberg step-up adjusted p-values, in input order.

    ``q_(i) = min_{j >= i} p_(j) m / j``, capped at 1, where ``m`` counts the
    non-NaN entries.

    Examples
    --------
    >>> bh_adjust([0.01, 0.02, 0.03, 0.9]).round(6).tolist()
    [0.04, 0.04, 0.04, 0.9]
    """
    p = _as_pvalues(p)
    out = np.full(p.shape, np.nan)
    flat = p.ravel()
    keep = np.flatnonzero(~np.isnan(flat))
    m = keep.size
    if m == 0:
        return out
    vals = flat[keep]
    order = np.argsort(vals, kind="stable")
    # p * (m / j) rather than p * m / j: the factor is >= 1, so q >= p survives rounding
    scaled = vals[order] * (m / np.arange(1, m + 1))
    adj = np.minimum.accumulate(scaled[::-1])[::-1]
    res = np.empty(m)
    res[order] = np.minimum(adj, 1.0)
    out.ravel()[keep] = res
    return out


@dataclass(frozen=True)
class QValueResult:
    q: NDArray[np.float64]
    pi0: float
    pi0_clamped: bool


def storey_qvalue(p: ArrayLike, lam: float = 0.5) -> QValueResult:
    """Storey q-values with a single-lambda null proportion estimate.

    ``pi0 = #{p > lam} / ((1 - lam) m)``, clamped to 1 (flagged) when the
    estimate exceeds it; ``q = pi0 * BH``.  No spline smoothing over lambda.
    """
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must be in (0, 1)")
    p = _as_pvalues(p)
    vals = p[~np.isnan(p)]
    if vals.size == 0:
        return QValueResult(np.full(p.shape, np.nan), 1.0, False)
    pi0 = np.count_nonzero(vals > lam) / ((1.0 - lam) * vals.size)
    clamped = pi0 > 1.0
    pi0 = min(pi0, 1.0)
    # pi0 == 0 would zero every q-value; keep it strictly positive
    pi0 = max(pi0, 1.0 / vals.size)
    return QValueResult(pi0 * bh_adjust(p), float(pi0), bool(clamped))
