"""Tests for the row-wise inverse-Gram estimator.

Oracles used here:
  * exactly orthogonal designs, where every node-wise regression has a
    closed-form answer (zero coefficients, row = e_j / sigma2);
  * the population inverse of the banded-correlation matrix, which the
    estimated rows must approach at moderate sample size;
  * the inner-product noise identity (Theta_hat @ Gram)_{jj} == 1, which
    holds exactly for any penalized fit by construction.
"""

import numpy as np
import pytest

from ortho_lasso.errors import DegenerateResidualError
from ortho_lasso.nodewise import (
    NodewiseCache,
    SparsifiedTheta,
    apply_theta,
    gram_alignment,
    nodewise_row,
    nodewise_rows,
)
from ortho_lasso.numkit import empirical_gram, toeplitz_sigma
from ortho_lasso.penalty import bcch_lambda, sigma_cond


def orthogonal_design(n: int, scales, seed: int = 0) -> np.ndarray:
    """Columns exactly orthogonal with X_j'X_j / n == scales[j]**2."""
    scales = np.asarray(scales, dtype=np.float64)
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, scales.size)))
    return q * (np.sqrt(n) * scales)


class TestNodewiseRow:
    def test_orthogonal_columns_closed_form(self):
        n, scales = 32, (1.0, 2.0, 0.5, 3.0, 1.5)
        x = orthogonal_design(n, scales, seed=0)
        for j in range(len(scales)):
            res = nodewise_row(x, j, lambda_j=0.1)
            xj = x[:, j]
            sigma2_expected = float(xj @ xj) / n
            assert np.all(res.psi_hat == 0.0), f"row {j}: psi not exactly zero"
            assert res.sigma2_hat == sigma2_expected
            expected_row = np.zeros(len(scales))
            expected_row[j] = 1.0 / sigma2_expected
            assert np.array_equal(res.row, expected_row)
            assert abs(res.sigma2_hat - scales[j] ** 2) < 1e-10
            print(f"orthogonal row {j}: sigma2={res.sigma2_hat:.6f}")

    def test_l1_norm_matches_row(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((200, 4))
        res = nodewise_row(x, 1, lambda_j=0.05)
        assert abs(res.l1_norm - np.sum(np.abs(res.row))) <= 1e-15
        assert (
            abs(res.l1_norm - (1.0 + np.sum(np.abs(res.psi_hat))) / res.sigma2_hat)
            <= 1e-12
        )

    def test_perfect_collinearity_degenerates(self):
        rng = np.random.default_rng(11)
        col = rng.standard_normal(50)
        x = np.column_stack([col, col])
        with pytest.raises(DegenerateResidualError):
            nodewise_row(x, 0, lambda_j=1e-12)

    def test_accuracy_against_population_inverse(self):
        n, p, rho, j = 4000, 6, 0.5, 2
        sigma = toeplitz_sigma(p, rho)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((n, p)) @ np.linalg.cholesky(sigma).T
        lam = bcch_lambda(n, p - 1) * sigma_cond(j + 1, p, rho)
        res = nodewise_row(x, j, lam)
        target = np.linalg.inv(sigma)[j]
        err = float(np.max(np.abs(res.row - target)))
        print(f"nodewise row accuracy: max err {err:.4f} (lambda {lam:.4f})")
        assert err <= 0.1

    def test_validation(self):
        x = np.random.default_rng(0).standard_normal((20, 3))
        with pytest.raises(ValueError):
            nodewise_row(x, 0, lambda_j=0.0)
        with pytest.raises(ValueError):
            nodewise_row(x, 0, lambda_j=-0.5)
        with pytest.raises(ValueError):
            nodewise_row(x, 3, lambda_j=0.1)
        with pytest.raises(ValueError):
            nodewise_row(x, -1, lambda_j=0.1)
        with pytest.raises(ValueError):
            nodewise_row(x[:, :1], 0, lambda_j=0.1)


class TestNodewiseRows:
    def test_restriction_matches_full(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((150, 6))
        lambdas = np.full(6, 0.08)
        full = nodewise_rows(x, range(6), lambdas)
        sub = nodewise_rows(x, [4, 1], lambdas)
        assert sub.active_rows.tolist() == [1, 4]
        for j in (1, 4):
            assert np.array_equal(sub.rows[j], full.rows[j])

    def test_empty_selection(self):
        x = np.random.default_rng(5).standard_normal((50, 3))
        theta = nodewise_rows(x, [], np.full(3, 0.1))
        assert theta.active_rows.size == 0
        assert np.array_equal(theta.dense(), np.zeros((3, 3)))

    def test_error_is_prefixed_with_row(self):
        col = np.random.default_rng(1).standard_normal(40)
        x = np.column_stack([col, col])
        with pytest.raises(DegenerateResidualError, match=r"^node-wise row 0:"):
            nodewise_rows(x, [0], np.full(2, 1e-12))

    def test_validation(self):
        x = np.random.default_rng(0).standard_normal((30, 4))
        with pytest.raises(ValueError):
            nodewise_rows(x, [0], np.full(3, 0.1))  # wrong lambda length
        with pytest.raises(ValueError):
            nodewise_rows(x, [4], np.full(4, 0.1))  # index out of range


class TestSparsifiedTheta:
    def test_rows_keys_must_match(self):
        with pytest.raises(ValueError):
            SparsifiedTheta(p=3, active_rows=np.array([0, 1]), rows={0: np.zeros(3)})

    def test_apply_matches_dense(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((120, 5))
        theta = nodewise_rows(x, [0, 2, 4], np.full(5, 0.1))
        v = rng.standard_normal(5)
        diff = np.max(np.abs(apply_theta(theta, v) - theta.dense() @ v))
        assert diff <= 1e-12
        assert apply_theta(theta, v)[1] == 0.0  # inactive rows act as zero
        with pytest.raises(ValueError):
            apply_theta(theta, np.ones(4))

    def test_empty_operator_is_zero(self):
        theta = SparsifiedTheta.empty(4)
        assert np.array_equal(apply_theta(theta, np.ones(4)), np.zeros(4))


class TestGramAlignment:
    def test_exact_inverse_aligns(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((300, 4))
        gram = empirical_gram(x)
        inv = np.linalg.inv(gram)
        theta = SparsifiedTheta(
            p=4, active_rows=np.arange(4), rows={j: inv[j] for j in range(4)}
        )
        assert gram_alignment(theta, gram) <= 1e-10

    def test_zero_rows_give_unit_misalignment(self):
        theta = SparsifiedTheta(
            p=3, active_rows=np.arange(3), rows={j: np.zeros(3) for j in range(3)}
        )
        assert gram_alignment(theta, np.eye(3)) == 1.0

    def test_estimated_rows_align_and_diagonal_is_exact(self):
        n, p, rho = 4000, 6, 0.5
        sigma = toeplitz_sigma(p, rho)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((n, p)) @ np.linalg.cholesky(sigma).T
        lambdas = np.array(
            [bcch_lambda(n, p - 1) * sigma_cond(j + 1, p, rho) for j in range(p)]
        )
        theta = nodewise_rows(x, range(p), lambdas)
        gram = empirical_gram(x)
        align = gram_alignment(theta, gram)
        print(f"estimated gram alignment: {align:.4f}")
        assert align <= 0.5
        # The inner-product noise estimate makes each diagonal entry of
        # Theta_hat @ Gram equal to one exactly, whatever the penalty did.
        diag = np.diag(theta.dense() @ gram)
        assert np.max(np.abs(diag - 1.0)) <= 1e-10

    def test_requires_all_rows(self):
        x = np.random.default_rng(4).standard_normal((60, 3))
        theta = nodewise_rows(x, [0, 1], np.full(3, 0.1))
        with pytest.raises(ValueError):
            gram_alignment(theta, empirical_gram(x))


class TestNodewiseCache:
    def test_rows_computed_once(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((100, 5))
        calls: list[int] = []

        def lam(j: int) -> float:
            calls.append(j)
            return 0.1

        cache = NodewiseCache(x, lam)
        first = cache.row(1)
        second = cache.row(1)
        assert first is second
        assert cache.rows_computed == 1
        assert calls == [1]

    def test_theta_for_matches_direct_call(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((100, 5))
        cache = NodewiseCache(x, lambda j: 0.1)
        cache.row(1)
        theta = cache.theta_for([3, 1])
        assert cache.rows_computed == 2  # row 1 reused, row 3 computed
        direct = nodewise_rows(x, [1, 3], np.full(5, 0.1))
        for j in (1, 3):
            assert np.array_equal(theta.rows[j], direct.rows[j])

    def test_cache_error_is_prefixed(self):
        col = np.random.default_rng(1).standard_normal(40)
        x = np.column_stack([col, col])
        cache = NodewiseCache(x, lambda j: 1e-12)
        with pytest.raises(DegenerateResidualError, match=r"^node-wise row 0:"):
            cache.row(0)
