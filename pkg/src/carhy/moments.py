"""Exact low-order moments of chi-square variables and of residual variances.

If ``s2 = sigma2 * chi2_r / r`` then its variance and third/fourth central
moments follow from the chi-square raw moments by scaling.  Raw moments use
the telescoping product ``r (r+2) ... (r+2(s-1))``, which equals
``2^s Gamma(r/2 + s) / Gamma(r/2)`` without overflow for large ``r``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import InvalidOrder, NonpositiveVariance


def chi2_raw_moment(r: ArrayLike, s: int):
    """``E[X^s]`` for ``X ~ chi2_r``, ``s`` in 1..4."""
    if s not in (1, 2, 3, 4):
        raise InvalidOrder(f"order must be 1..4, got {s!r}")
    r = np.asarray(r, dtype=float)
    out = np.ones_like(r)
    for j in range(s):
        out = out * (r + 2.0 * j)
    return out if out.ndim else float(out)


def chi2_central_moments(r: ArrayLike):
    """Third and fourth central moments of ``chi2_r``.

    Built from raw moments; they reduce to ``8r`` and ``12r^2 + 48r``.
    """
    m1 = chi2_raw_moment(r, 1)
    m2 = chi2_raw_moment(r, 2)
    m3 = chi2_raw_moment(r, 3)
    m4 = chi2_raw_moment(r, 4)
    cm3 = m3 - 3.0 * m2 * m1 + 2.0 * m1**3
    cm4 = m4 - 4.0 * m3 * m1 + 6.0 * m2 * m1**2 - 3.0 * m1**4
    return cm3, cm4


@dataclass(frozen=True)
class SigmaMoments:
    """Variance, third and fourth central moments of a residual variance.

    Fields may be scalars or arrays (one entry per gene/condition).
    """

    var2: NDArray[np.float64] | float
    cm3: NDArray[np.float64] | float
    cm4: NDArray[np.float64] | float


def sigma_hat_moments(sigma2: ArrayLike, r: ArrayLike, *, allow_zero: bool = False) -> SigmaMoments:
    """Moments of ``sigma2 * chi2_r / r`` evaluated at a plug-in ``sigma2``.

    ``allow_zero`` admits ``sigma2 == 0`` (all moments zero); the batch
    engine uses it so that a degenerate gene is flagged downstream rather
    than aborting the whole batch.
    """
    s2 = np.asarray(sigma2, dtype=float)
    r = np.asarray(r, dtype=float)
    bad = (s2 < 0) if allow_zero else (s2 <= 0)
    if np.any(bad) or np.any(~np.isfinite(s2)):
        raise NonpositiveVariance("plug-in variance must be positive and finite")
    if np.any(r < 1):
        raise NonpositiveVariance("residual degrees of freedom must be >= 1")
    # closed forms 8r, 12r^2+48r would do; keep the raw-moment route
    cm3_chi, cm4_chi = chi2_central_moments(r)
    var2 = 2.0 * s2**2 / r
    cm3 = s2**3 / r**3 * cm3_chi
    cm4 = s2**4 / r**4 * cm4_chi
    if var2.ndim == 0:
        return SigmaMoments(float(var2), float(cm3), float(cm4))
    return SigmaMoments(var2, cm3, cm4)
