"""First-harmonic (cosinor) regression for one experimental condition.

Each condition is fitted separately by ordinary least squares on the basis
``(1, cos(2*pi*t/24), sin(2*pi*t/24))``.  Rows of the design are ordered
time-major, replicate-minor, which is also the order used by the simulation
generator and by the pipeline when it regroups sample columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DegenerateDesign, DimensionMismatch, InvalidTime

PERIOD = 24.0
# smallest / largest Cholesky pivot of X'X below which the design is rejected
PIVOT_RATIO_TOL = 1e-10


def harmonic_rows(times: ArrayLike, period: float = PERIOD) -> NDArray[np.float64]:
    """Return the ``len(times) x 3`` block ``(1, cos wt, sin wt)``."""
    t = np.asarray(times, dtype=float)
    w = 2.0 * np.pi * t / period
    return np.column_stack([np.ones_like(t), np.cos(w), np.sin(w)])


@dataclass(frozen=True, eq=False)
class ConditionDesign:
    """Design matrix of one condition.

    Attributes
    ----------
    times : tuple of float
        Distinct sampling times in hours, ascending as given.
    replicates : tuple of int
        Replicate count at each time.
    X : ndarray, shape (n, 3)
        Design matrix, one row per (time, replicate).
    xtx_inv : ndarray, shape (3, 3)
        ``(X'X)^{-1}``, obtained from a Cholesky factorisation.
    """

    times: tuple[float, ...]
    replicates: tuple[int, ...]
    X: NDArray[np.float64] = field(repr=False)
    xtx_inv: NDArray[np.float64] = field(repr=False)

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def df_resid(self) -> int:
        return self.n - 3

    @property
    def sample_times(self) -> NDArray[np.float64]:
        return np.repeat(np.asarray(self.times, dtype=float), self.replicates)

    @property
    def hat_coef(self) -> NDArray[np.float64]:
        """``X (X'X)^{-1}``, shape (n, 3); maps a response row to coefficients."""
        return self.X @ self.xtx_inv


def _spd_inverse(xtx: NDArray[np.float64]) -> NDArray[np.float64]:
    try:
        chol = np.linalg.cholesky(xtx)
    except np.linalg.LinAlgError as exc:
        raise DegenerateDesign("X'X is not positive definite (rank(X) < 3)") from exc
    pivots = np.diag(chol) ** 2
    if pivots.min() / pivots.max() < PIVOT_RATIO_TOL:
        raise DegenerateDesign(
            f"design is numerically rank deficient (pivot ratio {pivots.min() / pivots.max():.3g})"
        )
    linv = np.linalg.solve(chol, np.eye(3))
    inv = linv.T @ linv
    return 0.5 * (inv + inv.T)


def build_design(times: ArrayLike, replicates: ArrayLike, period: float = PERIOD) -> ConditionDesign:
    """Build the harmonic design for distinct ``times`` with per-time replicate counts.

    Raises
    ------
    InvalidTime
        If a time lies outside ``[0, period)``.
    DegenerateDesign
        If fewer than three harmonically distinct times make ``rank(X) < 3``.
    """
    t = np.asarray(times, dtype=float).ravel()
    reps = np.asarray(replicates).ravel()
    if t.shape != reps.shape:
        raise DimensionMismatch(f"{t.size} times but {reps.size} replicate counts")
    if t.size == 0:
        raise DegenerateDesign("no sampling times")
    if np.any(~np.isfinite(t)) or np.any(t < 0) or np.any(t >= period):
        raise InvalidTime(f"sampling times must lie in [0, {period:g}): {t.tolist()}")
    if len(np.unique(t)) != t.size:
        raise InvalidTime("sampling times must be distinct")
    if np.any(reps < 1) or np.any(reps != np.round(reps)):
        raise DimensionMismatch("replicate counts must be positive integers")
    reps = reps.astype(int)
    X = harmonic_rows(np.repeat(t, reps), period)
    xtx_inv = _spd_inverse(X.T @ X)
    return ConditionDesign(
        times=tuple(float(v) for v in t),
        replicates=tuple(int(r) for r in reps),
        X=X,
        xtx_inv=xtx_inv,
    )


def design_from_sample_times(sample_times: ArrayLike, period: float = PERIOD):
    """Group per-sample times into a design.

    Returns
    -------
    design : ConditionDesign
    order : ndarray of int
        Permutation taking the input samples to design row order (stable
        within a time point).
    """
    st = np.asarray(sample_times, dtype=float).ravel()
    order = np.argsort(st, kind="stable")
    uniq, counts = np.unique(st[order], return_counts=True)
    return build_design(uniq, counts, period), order


@dataclass(frozen=True, eq=False)
class ConditionFit:
    """OLS fit of one gene under one condition.

    ``gamma_hat`` holds (mesor, cosine coefficient, sine coefficient).
    """

    gamma_hat: NDArray[np.float64]
    sigma2_hat: float
    xtx_inv: NDArray[np.float64] = field(repr=False)
    n: int

    @property
    def df_resid(self) -> int:
        return self.n - 3

    @property
    def cov(self) -> NDArray[np.float64]:
        return self.sigma2_hat * self.xtx_inv

    @property
    def mesor(self) -> float:
        return float(self.gamma_hat[0])

    @property
    def alpha(self) -> float:
        return float(self.gamma_hat[1])

    @property
    def beta(self) -> float:
        return float(self.gamma_hat[2])

    @property
    def amplitude(self) -> float:
        return amplitude_phase(self)[0]

    @property
    def phase(self) -> float:
        return amplitude_phase(self)[1]

    @property
    def peak_time(self) -> float:
        """Peak time in hours, in ``[0, 24)``."""
        return float(phase_to_hours(self.phase))


def fit_many(Y: ArrayLike, design: ConditionDesign):
    """Fit every row of ``Y`` (genes x n samples, design row order).

    Returns
    -------
    gamma : ndarray, shape (G, 3)
    sigma2 : ndarray, shape (G,)
        Residual variance with divisor ``n - 3``.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[None, :]
    if Y.shape[-1] != design.n:
        raise DimensionMismatch(f"expected {design.n} samples, got {Y.shape[-1]}")
    # einsum keeps per-row arithmetic independent of how rows are batched
    gamma = np.einsum("gn,nc->gc", Y, design.hat_coef)
    resid = Y - np.einsum("gc,nc->gn", gamma, design.X)
    sigma2 = np.einsum("gn,gn->g", resid, resid) / (design.n - 3)
    return gamma, sigma2


def fit_condition(y: ArrayLike, design: ConditionDesign) -> ConditionFit:
    """Least-squares fit of one expression vector."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise DimensionMismatch("y must be one-dimensional")
    if design.n <= 3:
        raise DegenerateDesign("need more than 3 samples for a residual variance")
    gamma, sigma2 = fit_many(y, design)
    return ConditionFit(gamma_hat=gamma[0], sigma2_hat=float(sigma2[0]),
                        xtx_inv=design.xtx_inv, n=design.n)


def amplitude_phase(fit_or_coefs) -> tuple[float, float]:
    """Amplitude ``sqrt(a^2 + b^2)`` and phase ``atan2(b, a)`` in radians.

    Accepts a :class:`ConditionFit` or an ``(alpha, beta)`` pair.  A zero
    harmonic reports phase 0.
    """
    if isinstance(fit_or_coefs, ConditionFit):
        a, b = fit_or_coefs.alpha, fit_or_coefs.beta
    else:
        a, b = (float(v) for v in fit_or_coefs)
    if a == 0.0 and b == 0.0:
        return 0.0, 0.0
    return float(np.hypot(a, b)), float(np.arctan2(b, a))


def phase_to_hours(phase, period: float = PERIOD):
    """Map a phase in radians to a peak time in ``[0, period)`` hours."""
    h = np.mod(np.asarray(phase, dtype=float) * period / (2.0 * np.pi), period)
    # mod can return exactly `period` for tiny negative inputs
    return np.where(h >= period, 0.0, h)
