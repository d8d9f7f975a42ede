"""Cyclic coordinate-descent Lasso solver.

Conventions, fixed so that plug-in penalty levels apply verbatim and fits are
bit-for-bit reproducible:

* objective: ``(1/(2n)) * sum((y_i - a - x_i @ b)**2) + lam * ||b||_1``, the
  half-squared-loss form, with the l1 penalty applied to the coefficients of
  the working (standardized) columns;
* standardization divides each column by its sample standard deviation with
  ``1/n`` normalization (never ``1/(n-1)``); the intercept is handled by
  centering ``y`` and the columns before the sweeps and recovering it after;
* sweeps visit coordinates in fixed ascending order, no randomization;
* a tie at the soft-threshold kink resolves to exactly ``0.0``;
* convergence: maximum absolute working-scale coefficient change over a full
  sweep ``<= tol``.

The inner loop is compiled with numba (no ``fastmath``), so results do not
depend on thread count or scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from numpy.typing import NDArray

from .errors import ZeroVarianceColumnError

__all__ = ["LassoProblem", "LassoFit", "soft_threshold", "fit_lasso", "kkt_residual"]


def soft_threshold(z: float, t: float) -> float:
    """``sign(z) * max(|z| - t, 0)``; exact zero at the kink ``|z| == t``."""
    if t < 0.0:
        raise ValueError(f"threshold must be nonnegative, got {t}")
    a = abs(z) - t
    if a <= 0.0:
        return 0.0
    return a if z > 0.0 else -a


@dataclass(frozen=True)
class LassoProblem:
    """One Lasso regression instance.

    ``lam`` is the penalty level of the half-squared-loss objective above;
    ``lam = 0`` yields ordinary least squares (any minimizer; unique when the
    design has full column rank).
    """

    x: NDArray[np.float64]
    y: NDArray[np.float64]
    lam: float
    include_intercept: bool = True
    standardize: bool = True
    tol: float = 1e-7
    max_iter: int = 10_000

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"x must be 2-d, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError(f"y shape {y.shape} incompatible with x shape {x.shape}")
        if x.shape[0] < 1:
            raise ValueError("need at least one observation")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise ValueError("x and y must be finite")
        if not self.lam >= 0.0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not self.tol > 0.0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class LassoFit:
    """Solver output. ``coefs`` are on the original column scale; ``support``
    is exactly the set of nonzero coefficient indices. ``objective_path``
    holds the working-scale objective after each completed sweep."""

    intercept: float
    coefs: NDArray[np.float64]
    support: NDArray[np.intp]
    iterations: int
    converged: bool
    objective: float
    objective_path: NDArray[np.float64] = field(repr=False)


@njit(cache=True)
def _cd_sweeps(w, yw, lam, wsq, tol, max_iter, b, obj_path):  # pragma: no cover
    n, p = w.shape
    ninv = 1.0 / n
    r = yw.copy()
    sweeps = 0
    converged = False
    while sweeps < max_iter:
        max_delta = 0.0
        for j in range(p):
            if wsq[j] <= 0.0:
                b[j] = 0.0
                continue
            bj = b[j]
            zj = 0.0
            for i in range(n):
                zj += w[i, j] * r[i]
            zj = zj * ninv + wsq[j] * bj
            az = abs(zj) - lam
            if az > 0.0:
                bnew = az / wsq[j] if zj > 0.0 else -az / wsq[j]
            else:
                bnew = 0.0
            d = bnew - bj
            if d != 0.0:
                for i in range(n):
                    r[i] -= w[i, j] * d
                b[j] = bnew
                ad = abs(d)
                if ad > max_delta:
                    max_delta = ad
        rss = 0.0
        for i in range(n):
            rss += r[i] * r[i]
        l1 = 0.0
        for j in range(p):
            l1 += abs(b[j])
        obj_path[sweeps] = 0.5 * ninv * rss + lam * l1
        sweeps += 1
        if max_delta <= tol:
            converged = True
            break
    return sweeps, converged


def _working_data(problem: LassoProblem):
    """Return (w, yw, x_mean, y_mean, x_scale) for the standardized problem."""
    x, y = problem.x, problem.y
    p = x.shape[1]
    x_mean = x.mean(axis=0)
    if problem.include_intercept:
        xc = x - x_mean
        y_mean = float(y.mean())
    else:
        xc = x
        y_mean = 0.0
    if problem.standardize:
        x_scale = np.sqrt(np.mean((x - x_mean) ** 2, axis=0))
        bad = np.flatnonzero(x_scale <= 0.0)
        if bad.size:
            raise ZeroVarianceColumnError(int(bad[0]))
        w = xc / x_scale
    else:
        x_scale = np.ones(p)
        w = xc
    yw = y - y_mean
    return w, yw, x_mean, y_mean, x_scale


def fit_lasso(problem: LassoProblem) -> LassoFit:
    """Solve the Lasso problem by cyclic coordinate descent.

    Deterministic given the inputs. Non-convergence after ``max_iter`` sweeps
    is reported via ``converged=False`` on the returned fit, not an exception.
    """
    w, yw, x_mean, y_mean, x_scale = _working_data(problem)
    n, p = w.shape
    wsq = np.mean(w * w, axis=0)
    b = np.zeros(p)
    obj_path = np.empty(problem.max_iter)
    w_f = np.asfortranarray(w)
    sweeps, converged = _cd_sweeps(
        w_f, yw, float(problem.lam), wsq, float(problem.tol), problem.max_iter, b, obj_path
    )
    coefs = b / x_scale if problem.standardize else b.copy()
    if problem.include_intercept:
        intercept = y_mean - float(coefs @ x_mean)
    else:
        intercept = 0.0
    return LassoFit(
        intercept=intercept,
        coefs=coefs,
        support=np.flatnonzero(b),
        iterations=int(sweeps),
        converged=bool(converged),
        objective=float(obj_path[sweeps - 1]),
        objective_path=obj_path[:sweeps].copy(),
    )


def kkt_residual(fit: LassoFit, problem: LassoProblem) -> float:
    """Maximum violation of the subgradient optimality conditions.

    Computed on the working (standardized, centered) scale: for an active
    coordinate ``|g_j - lam * sign(b_j)|``, for an inactive one
    ``max(|g_j| - lam, 0)``, where ``g_j = (1/n) w_j @ r`` and ``r`` is the
    working residual of the fit.
    """
    w, yw, _, _, x_scale = _working_data(problem)
    n = w.shape[0]
    b = fit.coefs * x_scale if problem.standardize else fit.coefs
    r = yw - w @ b
    g = (w.T @ r) / n
    active = b != 0.0
    viol = 0.0
    if active.any():
        viol = float(np.max(np.abs(g[active] - problem.lam * np.sign(b[active]))))
    if (~active).any():
        viol = max(viol, float(np.max(np.maximum(np.abs(g[~active]) - problem.lam, 0.0))))
    return viol
