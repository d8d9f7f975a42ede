"""Tests for the dense linear-algebra helpers."""

import numpy as np
import pytest

from ortho_lasso.errors import NonPositiveDefiniteError
from ortho_lasso.numkit import (
    cholesky,
    empirical_gram,
    sample_mvn,
    solve_spd,
    toeplitz_sigma,
)
from ortho_lasso.penalty import sigma_cond


def tridiagonal_inverse(p: int, rho: float) -> np.ndarray:
    """Closed-form inverse of the geometric-decay correlation matrix:
    tridiagonal with diagonal (1, 1+rho^2, ..., 1+rho^2, 1) / (1-rho^2) and
    off-diagonal -rho / (1-rho^2)."""
    diag = np.full(p, (1.0 + rho**2) / (1.0 - rho**2))
    diag[0] = diag[-1] = 1.0 / (1.0 - rho**2)
    off = np.full(p - 1, -rho / (1.0 - rho**2))
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


class TestToeplitzSigma:
    def test_rho_zero_is_identity(self):
        assert np.array_equal(toeplitz_sigma(3, 0.0), np.eye(3))

    def test_entry_decays_geometrically(self):
        sig = toeplitz_sigma(3, 0.5)
        assert sig[0, 2] == 0.25
        assert sig[2, 0] == 0.25
        assert np.all(np.diag(sig) == 1.0)

    @pytest.mark.parametrize("rho", [0.2, 0.4, 0.6, 0.8])
    def test_inverse_is_tridiagonal(self, rho):
        p = 50
        inv = np.linalg.inv(toeplitz_sigma(p, rho))
        assert np.max(np.abs(inv - tridiagonal_inverse(p, rho))) <= 1e-10

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            toeplitz_sigma(0, 0.5)
        with pytest.raises(ValueError):
            toeplitz_sigma(3, 1.0)


class TestCholesky:
    def test_reconstructs_spd_matrix(self):
        rng = np.random.default_rng(0)
        b = rng.standard_normal((8, 8))
        a = b.T @ b + np.eye(8)
        chol = cholesky(a)
        rel = np.linalg.norm(chol @ chol.T - a) / np.linalg.norm(a)
        assert rel <= 1e-10
        assert np.max(np.abs(np.triu(chol, 1))) == 0.0  # lower triangular

    def test_rejects_indefinite(self):
        a = np.diag([1.0, -1.0])
        with pytest.raises(NonPositiveDefiniteError):
            cholesky(a)

    def test_rejects_asymmetric(self):
        a = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ValueError):
            cholesky(a)


class TestSampleMvn:
    def test_law_of_large_numbers(self):
        p, rho, n = 5, 0.6, 200_000
        sig = toeplitz_sigma(p, rho)
        x = sample_mvn(cholesky(sig), n, np.random.default_rng(3))
        assert np.max(np.abs(empirical_gram(x) - sig)) <= 0.02

    def test_shapes_and_empty(self):
        chol = cholesky(toeplitz_sigma(4, 0.3))
        assert sample_mvn(chol, 7, np.random.default_rng(1)).shape == (7, 4)
        assert sample_mvn(chol, 0, np.random.default_rng(1)).shape == (0, 4)

    def test_deterministic_given_generator(self):
        chol = cholesky(toeplitz_sigma(4, 0.3))
        a = sample_mvn(chol, 11, np.random.default_rng(9))
        b = sample_mvn(chol, 11, np.random.default_rng(9))
        assert np.array_equal(a, b)


class TestEmpiricalGram:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((13, 4))
        gram = empirical_gram(x)
        brute = np.zeros((4, 4))
        for i in range(13):
            for j in range(4):
                for k in range(4):
                    brute[j, k] += x[i, j] * x[i, k]
        brute /= 13
        assert np.max(np.abs(gram - brute)) <= 1e-12


class TestSolveSpd:
    def test_residual_small(self):
        rng = np.random.default_rng(4)
        b = rng.standard_normal((10, 10))
        a = b.T @ b + 0.5 * np.eye(10)
        rhs = rng.standard_normal(10)
        x = solve_spd(a, rhs)
        assert np.max(np.abs(a @ x - rhs)) <= 1e-10

    def test_matrix_rhs(self):
        a = toeplitz_sigma(6, 0.5)
        inv = solve_spd(a, np.eye(6))
        assert np.max(np.abs(a @ inv - np.eye(6))) <= 1e-10

    def test_rejects_singular(self):
        with pytest.raises(NonPositiveDefiniteError):
            solve_spd(np.ones((3, 3)), np.ones(3))


class TestConditionalVariances:
    @pytest.mark.parametrize("rho", [0.2, 0.4, 0.6, 0.8])
    def test_inverse_diagonal_matches_conditional_formula(self, rho):
        """1 / (Sigma^{-1})_jj is the conditional variance of column j given
        the rest: (1 - rho^2) at the ends, (1 - rho^2)/(1 + rho^2) inside."""
        p = 50
        inv = solve_spd(toeplitz_sigma(p, rho), np.eye(p))
        for j in range(p):
            interior = 0 < j < p - 1
            expected = (1.0 - rho**2) / (1.0 + rho**2 if interior else 1.0)
            assert abs(1.0 / inv[j, j] - expected) <= 1e-10
            # the conditional sd helper is the square root of the same thing
            assert abs(sigma_cond(j + 1, p, rho) ** 2 - expected) <= 1e-10
