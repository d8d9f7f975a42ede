"""Exact population moments for the Gaussian partially linear design.

The data-generating process is

    X ~ N(0, Sigma),   D = X @ gamma0 + nu,   Y = beta0 * D + X @ theta0 + eps,

with ``nu`` and ``eps`` mean-zero Gaussian, independent of each other and of
``X``. Because every moment entering the double/triple scores is a polynomial
in jointly Gaussian variables, the scores evaluate in closed form at
arbitrary nuisance values; the finite-difference certification harness
differentiates these exact evaluators, so its output is free of sampling
noise.

Closed forms (with ``a = phi0 - phi``, ``b = gamma0 - gamma``):

    score_double  = (a - beta*b) @ Sigma @ b + (beta0 - beta) * sigma_nu**2
    score_adjust  = (a - beta*b) @ Sigma @ Theta @ Sigma @ b
    score_triple  = score_double - score_adjust

and for the single-index system with squared loss ``m(z, y) = (y - z)**2``
(so ``m' = -2(y - z)``, ``m'' = 2``), with ``w = (beta0-beta)*gamma0 +
theta0 - theta`` and ``b = gamma0 - mu``:

    E[m'(D - X@mu)]      = -2 * (w @ Sigma @ b + (beta0-beta) * sigma_nu**2)
    E[m' X]              = -2 * Sigma @ w
    E[m'' (D - X@mu) X]  =  2 * Sigma @ b
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError
from .numkit import solve_spd

__all__ = [
    "GaussianLinearDesign",
    "GaussianSquaredLossMoments",
    "EmpiricalSingleIndexMoments",
    "triple_score_function",
    "double_score_function",
]


@dataclass(frozen=True)
class GaussianLinearDesign:
    """Population description of the partially linear Gaussian model."""

    sigma: NDArray[np.float64]
    gamma0: NDArray[np.float64]
    theta0: NDArray[np.float64]
    beta0: float = 1.0
    sigma_nu: float = 1.0
    sigma_eps: float = 1.0

    def __post_init__(self) -> None:
        sigma = np.asarray(self.sigma, dtype=np.float64)
        gamma0 = np.asarray(self.gamma0, dtype=np.float64)
        theta0 = np.asarray(self.theta0, dtype=np.float64)
        p = sigma.shape[0]
        if sigma.shape != (p, p) or gamma0.shape != (p,) or theta0.shape != (p,):
            raise ValueError("sigma, gamma0, theta0 have inconsistent shapes")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "gamma0", gamma0)
        object.__setattr__(self, "theta0", theta0)

    @property
    def p(self) -> int:
        return self.sigma.shape[0]

    @property
    def phi0(self) -> NDArray[np.float64]:
        """Reduced-form coefficient: ``theta0 + beta0 * gamma0``."""
        return self.theta0 + self.beta0 * self.gamma0

    @property
    def sigma_e2(self) -> float:
        """Variance of the reduced-form error ``eps + beta0 * nu``."""
        return self.beta0**2 * self.sigma_nu**2 + self.sigma_eps**2

    def theta0_matrix(self) -> NDArray[np.float64]:
        """Numeric inverse of ``sigma`` (the population inverse Gram)."""
        return solve_spd(self.sigma, np.eye(self.p))

    # -- double / triple scores ------------------------------------------

    def score_double(
        self,
        beta: float,
        gamma: NDArray[np.float64],
        phi: NDArray[np.float64],
    ) -> float:
        a = self.phi0 - np.asarray(phi, dtype=np.float64)
        b = self.gamma0 - np.asarray(gamma, dtype=np.float64)
        return float((a - beta * b) @ self.sigma @ b) + (
            self.beta0 - beta
        ) * self.sigma_nu**2

    def score_adjustment(
        self,
        beta: float,
        gamma: NDArray[np.float64],
        phi: NDArray[np.float64],
        theta_mat: NDArray[np.float64],
    ) -> float:
        a = self.phi0 - np.asarray(phi, dtype=np.float64)
        b = self.gamma0 - np.asarray(gamma, dtype=np.float64)
        left = self.sigma @ (a - beta * b)
        right = self.sigma @ b
        return float(left @ np.asarray(theta_mat, dtype=np.float64) @ right)

    def score_triple(
        self,
        beta: float,
        gamma: NDArray[np.float64],
        phi: NDArray[np.float64],
        theta_mat: NDArray[np.float64],
    ) -> float:
        return self.score_double(beta, gamma, phi) - self.score_adjustment(
            beta, gamma, phi, theta_mat
        )

    # -- single-index squared-loss moments --------------------------------

    def squared_loss_moments(
        self,
        beta: float,
        theta: NDArray[np.float64],
        mu: NDArray[np.float64],
    ) -> tuple[float, NDArray[np.float64], NDArray[np.float64]]:
        """(E[m'(D - X@mu)], E[m' X], E[m''(D - X@mu) X]) for the squared loss."""
        w = (self.beta0 - beta) * self.gamma0 + self.theta0 - np.asarray(theta)
        b = self.gamma0 - np.asarray(mu)
        f_scalar = -2.0 * (
            float(w @ self.sigma @ b) + (self.beta0 - beta) * self.sigma_nu**2
        )
        u1 = -2.0 * (self.sigma @ w)
        u2 = 2.0 * (self.sigma @ b)
        return f_scalar, u1, u2


class GaussianSquaredLossMoments:
    """Exact-moment backend for the single-index system under the squared loss.

    Only the squared loss has these closed forms; any other loss must go
    through :class:`EmpiricalSingleIndexMoments`.
    """

    def __init__(self, design: GaussianLinearDesign) -> None:
        self.design = design
        self.p = design.p

    def expectations(self, loss, beta, theta, mu):
        if loss is not None and getattr(loss, "name", "squared") != "squared":
            raise ConfigError(
                "exact Gaussian moments are implemented for the squared loss only"
            )
        return self.design.squared_loss_moments(beta, theta, mu)

    def g_h_matrices(self, loss, beta, theta, mu):
        """Exact ``G = E[m'' X X^T] = 2 Sigma`` and ``H = E[m''' (D - X@mu) X X^T] = 0``."""
        if loss is not None and getattr(loss, "name", "squared") != "squared":
            raise ConfigError(
                "exact Gaussian moments are implemented for the squared loss only"
            )
        return 2.0 * self.design.sigma, np.zeros((self.p, self.p))


class EmpiricalSingleIndexMoments:
    """Moment backend averaging over a fixed sample ``(x, d, y)``.

    With a large fixed sample this acts as the 'population' for smooth losses
    whose exact moments have no closed form.
    """

    def __init__(
        self,
        x: NDArray[np.float64],
        d: NDArray[np.float64],
        y: NDArray[np.float64],
    ) -> None:
        self.x = np.asarray(x, dtype=np.float64)
        self.d = np.asarray(d, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.n, self.p = self.x.shape

    def expectations(self, loss, beta, theta, mu):
        z = self.d * beta + self.x @ np.asarray(theta)
        resid = self.d - self.x @ np.asarray(mu)
        m1 = loss.m1(z, self.y)
        m2 = loss.m2(z, self.y)
        f_scalar = float(np.mean(m1 * resid))
        u1 = (self.x.T @ m1) / self.n
        u2 = (self.x.T @ (m2 * resid)) / self.n
        return f_scalar, u1, u2

    def g_h_matrices(self, loss, beta, theta, mu):
        z = self.d * beta + self.x @ np.asarray(theta)
        resid = self.d - self.x @ np.asarray(mu)
        m2 = loss.m2(z, self.y)
        m3 = loss.m3(z, self.y)
        g = (self.x.T @ (m2[:, None] * self.x)) / self.n
        h = (self.x.T @ ((m3 * resid)[:, None] * self.x)) / self.n
        return g, h


def _split_triple_eta(eta: NDArray[np.float64], p: int):
    gamma = eta[:p]
    phi = eta[p : 2 * p]
    theta_mat = eta[2 * p :].reshape(p, p)
    return gamma, phi, theta_mat


def triple_score_function(
    design: GaussianLinearDesign,
) -> tuple[Callable[[float, NDArray[np.float64]], float], NDArray[np.float64]]:
    """Triple score as a function of the stacked nuisance vector
    ``eta = (gamma, phi, vec Theta)`` (row-major vec), plus the truth ``eta0``.
    """
    p = design.p
    theta0 = design.theta0_matrix()
    eta0 = np.concatenate([design.gamma0, design.phi0, theta0.ravel()])

    def score(beta: float, eta: NDArray[np.float64]) -> float:
        gamma, phi, theta_mat = _split_triple_eta(np.asarray(eta, dtype=np.float64), p)
        return design.score_triple(beta, gamma, phi, theta_mat)

    return score, eta0


def double_score_function(
    design: GaussianLinearDesign,
) -> tuple[Callable[[float, NDArray[np.float64]], float], NDArray[np.float64]]:
    """Double score over ``eta = (gamma, phi)`` plus the truth ``eta0``."""
    p = design.p
    eta0 = np.concatenate([design.gamma0, design.phi0])

    def score(beta: float, eta: NDArray[np.float64]) -> float:
        eta = np.asarray(eta, dtype=np.float64)
        return design.score_double(beta, eta[:p], eta[p:])

    return score, eta0
