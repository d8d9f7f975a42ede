"""Dense linear-algebra and Gaussian sampling helpers.

Small wrappers around numpy/scipy primitives with the conventions used across
the package pinned down:

* matrices are C-contiguous float64 ``numpy.ndarray``s;
* empirical second moments always normalize by ``1/n`` (never ``1/(n-1)``);
* failures surface as :class:`~ortho_lasso.errors.NonPositiveDefiniteError`
  instead of the underlying LAPACK exception.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray
from scipy import linalg as sla

from .errors import NonPositiveDefiniteError

__all__ = [
    "toeplitz_sigma",
    "cholesky",
    "sample_mvn",
    "empirical_gram",
    "solve_spd",
]

_SYM_TOL = 1e-12


def toeplitz_sigma(p: int, rho: float) -> NDArray[np.float64]:
    """Correlation matrix with entries ``rho ** |j - k|``, shape ``(p, p)``.

    Requires ``p >= 1`` and ``|rho| < 1`` (the matrix is positive definite on
    that range).
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if not abs(rho) < 1.0:
        raise ValueError(f"|rho| must be < 1, got {rho}")
    col = np.power(float(rho), np.arange(p, dtype=np.float64)) if rho != 0.0 else None
    if col is None:
        return np.eye(p)
    return sla.toeplitz(col)


def _check_symmetric(a: NDArray[np.float64]) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > _SYM_TOL * scale:
        raise ValueError("matrix is not symmetric")


def cholesky(a: NDArray[np.float64]) -> NDArray[np.float64]:
    """Lower-triangular Cholesky factor ``L`` with ``L @ L.T == a``.

    Raises :class:`NonPositiveDefiniteError` when ``a`` is not (numerically)
    symmetric positive definite.
    """
    a = np.asarray(a, dtype=np.float64)
    _check_symmetric(a)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NonPositiveDefiniteError(f"Cholesky factorization failed: {exc}") from exc


def sample_mvn(
    chol: NDArray[np.float64], n: int, rng: np.random.Generator
) -> NDArray[np.float64]:
    """Draw ``n`` rows from N(0, L L^T) given the lower factor ``L``.

    Returns an ``(n, p)`` array; ``n = 0`` yields an empty ``(0, p)`` array.
    Draws ``n * p`` standard normals row-major, so the result is a pure
    function of the generator state.
    """
    chol = np.asarray(chol, dtype=np.float64)
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    p = chol.shape[0]
    z = rng.standard_normal((n, p))
    return z @ chol.T


def empirical_gram(x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Empirical second-moment matrix ``x.T @ x / n`` (requires ``n >= 1``)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"expected a nonempty 2-d array, got shape {x.shape}")
    n = x.shape[0]
    return (x.T @ x) / n


def solve_spd(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    """Solve ``a @ x = b`` for symmetric positive definite ``a``.

    Uses a Cholesky factor-and-solve; raises
    :class:`NonPositiveDefiniteError` when factorization fails.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_symmetric(a)
    try:
        c_and_lower = sla.cho_factor(a, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise NonPositiveDefiniteError(f"SPD solve failed: {exc}") from exc
    return sla.cho_solve(c_and_lower, b, check_finite=False)
