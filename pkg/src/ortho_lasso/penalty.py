"""Plug-in penalty levels for every Lasso regression in the pipeline.

The baseline level is

    lam(n_obs, p_pen) = (c / sqrt(n_obs)) * Phi^{-1}(1 - alpha/(2 * p_pen)),
    alpha = 0.1 / log(max(p_pen, n_obs)),   c = 1.1,

and per-regression levels scale it by the standard deviation of the relevant
regression noise: ``sigma_nu`` for the treatment regression, ``sigma_e`` with
``sigma_e**2 = beta0**2 * sigma_nu**2 + sigma_eps**2`` for the reduced form,
and the conditional standard deviation of column ``j`` given the others for
the node-wise regressions (closed form under the banded-correlation design).

These levels assume the noise scales are known (a simulation luxury).
:func:`feasible_lambda` provides the documented real-data fallback: fit once
with a conservative level based on the raw target's standard deviation, then
refit exactly once with the residual standard deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, DegenerateInputError
from .lasso import LassoProblem, fit_lasso

__all__ = [
    "PenaltyConfig",
    "FoldPenalties",
    "inv_normal_cdf",
    "bcch_lambda",
    "sigma_cond",
    "fold_penalties",
    "feasible_lambda",
]


def default_alpha_rule(n_obs: int, p_pen: int) -> float:
    return 0.1 / math.log(max(p_pen, n_obs))


@dataclass(frozen=True)
class PenaltyConfig:
    """Multiplier ``c`` and the slack-probability rule ``alpha(n_obs, p_pen)``."""

    c: float = 1.1
    alpha_rule: Callable[[int, int], float] = field(default=default_alpha_rule)

    def __post_init__(self) -> None:
        if not self.c > 0.0:
            raise ConfigError(f"penalty multiplier c must be > 0, got {self.c}")


@dataclass(frozen=True)
class FoldPenalties:
    """Penalty levels shared by every fold: treatment regression, reduced-form
    regression, and one level per node-wise regression."""

    lambda_gamma: float
    lambda_phi: float
    lambda_psi: NDArray[np.float64]

    def __post_init__(self) -> None:
        lam_psi = np.asarray(self.lambda_psi, dtype=np.float64)
        if not (self.lambda_gamma > 0.0 and self.lambda_phi > 0.0):
            raise ConfigError("lambda_gamma and lambda_phi must be strictly positive")
        if lam_psi.ndim != 1 or not (lam_psi > 0.0).all():
            raise ConfigError("lambda_psi must be a vector of strictly positive reals")
        object.__setattr__(self, "lambda_psi", lam_psi)


# Rational approximation to the standard normal quantile (Acklam's method),
# then Newton refinement against the erfc-based CDF, so the tails used by the
# penalty rule are accurate to well below 1e-10 absolute.
_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_P_LOW = 0.02425
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def inv_normal_cdf(q: float) -> float:
    """Standard normal quantile, relative error at machine-precision level.

    Upper-half arguments reflect through ``-inv_normal_cdf(1 - q)``; for
    ``q in [0.5, 1)`` the subtraction ``1 - q`` is exact, and on the lower
    half both the erfc-based CDF and ``q`` itself carry full relative
    precision, so the Newton polish is not limited by cancellation against
    values near one.
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie strictly inside (0, 1), got {q}")
    if q > 0.5:
        return -inv_normal_cdf(1.0 - q)
    if q < _P_LOW:
        u = math.sqrt(-2.0 * math.log(q))
        x = (((((_C[0] * u + _C[1]) * u + _C[2]) * u + _C[3]) * u + _C[4]) * u + _C[5]) / (
            (((_D[0] * u + _D[1]) * u + _D[2]) * u + _D[3]) * u + 1.0
        )
    else:
        u = q - 0.5
        t = u * u
        x = (
            (((((_A[0] * t + _A[1]) * t + _A[2]) * t + _A[3]) * t + _A[4]) * t + _A[5])
            * u
            / (((((_B[0] * t + _B[1]) * t + _B[2]) * t + _B[3]) * t + _B[4]) * t + 1.0)
        )
    # Two Newton steps on Phi(x) - q = 0; the density is bounded away from 0
    # on the range the rational approximation can land in.
    for _ in range(2):
        pdf = math.exp(-0.5 * x * x) * _INV_SQRT_2PI
        if pdf <= 0.0:
            break
        x -= (_normal_cdf(x) - q) / pdf
    return x


def bcch_lambda(n_obs: int, p_pen: int, cfg: PenaltyConfig | None = None) -> float:
    """Baseline penalty level ``(c / sqrt(n_obs)) * Phi^{-1}(1 - alpha/(2 p_pen))``."""
    if n_obs < 2:
        raise ConfigError(f"n_obs must be >= 2, got {n_obs}")
    if p_pen < 1:
        raise ConfigError(f"p_pen must be >= 1, got {p_pen}")
    cfg = cfg or PenaltyConfig()
    alpha = cfg.alpha_rule(n_obs, p_pen)
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha rule produced {alpha}, outside (0, 1)")
    return (cfg.c / math.sqrt(n_obs)) * inv_normal_cdf(1.0 - alpha / (2.0 * p_pen))


def sigma_cond(j: int, p: int, rho: float) -> float:
    """Conditional standard deviation of column ``j`` given all others under
    the banded-correlation design: ``sqrt(1 - rho**2)`` at the boundary
    (``j`` in {1, p}), ``sqrt((1 - rho**2) / (1 + rho**2))`` in the interior.
    ``j`` is 1-based.
    """
    if not 1 <= j <= p:
        raise ValueError(f"j must lie in [1, {p}], got {j}")
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    r2 = rho * rho
    if 1 < j < p:
        return math.sqrt((1.0 - r2) / (1.0 + r2))
    return math.sqrt(1.0 - r2)


def fold_penalties(
    n_train: int,
    p: int,
    rho: float,
    beta0: float = 1.0,
    sigma_nu: float = 1.0,
    sigma_eps: float = 1.0,
    cfg: PenaltyConfig | None = None,
) -> FoldPenalties:
    """Fold-invariant penalty levels for a training-sample size ``n_train``.

    ``lambda_gamma = lam(n_train, p) * sigma_nu``,
    ``lambda_phi = lam(n_train, p) * sigma_e``, and
    ``lambda_psi[j] = lam(n_train, p - 1) * sigma_cond(j+1, p, rho)``.
    """
    if n_train < 2:
        raise ValueError(f"n_train must be >= 2, got {n_train}")
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    base = bcch_lambda(n_train, p, cfg)
    base_node = bcch_lambda(n_train, p - 1, cfg)
    sigma_e = math.hypot(beta0 * sigma_nu, sigma_eps)
    lam_psi = base_node * np.array([sigma_cond(j, p, rho) for j in range(1, p + 1)])
    return FoldPenalties(
        lambda_gamma=base * sigma_nu,
        lambda_phi=base * sigma_e,
        lambda_psi=lam_psi,
    )


def feasible_lambda(
    x: NDArray[np.float64],
    y: NDArray[np.float64],
    cfg: PenaltyConfig | None = None,
    include_intercept: bool = True,
    standardize: bool = True,
    tol: float = 1e-7,
    max_iter: int = 10_000,
) -> float:
    """Two-step penalty level when the noise scale is unknown (real data).

    Step one fits with the conservative level ``lam(n, p) * sd(y)`` (sample
    standard deviation of the raw target, ``1/n`` normalization); step two
    rescales by the residual root mean square of that pilot fit. Exactly one
    refinement iteration, so the procedure is deterministic. The residual
    scale is floored at ``1e-6 * sd(y)`` to keep the level strictly positive.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = x.shape
    base = bcch_lambda(n, p, cfg)
    sd0 = float(np.sqrt(np.mean((y - y.mean()) ** 2)))
    if sd0 <= 0.0:
        raise DegenerateInputError("target has zero variance; cannot scale the penalty")
    pilot = fit_lasso(
        LassoProblem(
            x,
            y,
            base * sd0,
            include_intercept=include_intercept,
            standardize=standardize,
            tol=tol,
            max_iter=max_iter,
        )
    )
    resid = y - pilot.intercept - x @ pilot.coefs
    sd1 = max(float(np.sqrt(np.mean(resid**2))), 1e-6 * sd0)
    return base * sd1
