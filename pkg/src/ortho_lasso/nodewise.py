"""Row-wise node-wise Lasso estimation of the inverse Gram matrix.

Row ``j`` regresses column ``j`` on the remaining columns (raw columns, no
intercept, no standardization), scales the embedded coefficient vector
``(..., 1, ..., -psi_hat)`` by the inner-product noise estimate

    sigma2_hat_j = (1/n) * X_j @ (X_j - X_{-j} @ psi_hat_j),

and a row-sparsified operator keeps only the rows whose indices were
requested; all other rows act as zero. ``sigma2_hat`` deliberately uses the
inner-product form, not the residual sum of squares — the two differ for a
penalized fit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateResidualError, NumericalError
from .lasso import LassoProblem, fit_lasso

__all__ = [
    "NodewiseRow",
    "SparsifiedTheta",
    "nodewise_row",
    "nodewise_rows",
    "apply_theta",
    "gram_alignment",
    "NodewiseCache",
]

SIGMA2_FLOOR_REL = 1e-10


@dataclass(frozen=True)
class NodewiseRow:
    """One estimated row of the inverse Gram: ``row[j] = 1 / sigma2_hat`` and
    ``row[l] = -psi_hat[pos(l)] / sigma2_hat`` for ``l != j``."""

    j: int
    psi_hat: NDArray[np.float64]
    sigma2_hat: float
    row: NDArray[np.float64]

    @property
    def l1_norm(self) -> float:
        """Diagnostic: l1 norm of the scaled row (logged, never enforced)."""
        return float(np.sum(np.abs(self.row)))


@dataclass(frozen=True)
class SparsifiedTheta:
    """Row-sparsified inverse-Gram operator of dimension ``p``.

    Rows with indices outside ``active_rows`` are implicitly zero.
    """

    p: int
    active_rows: NDArray[np.intp]
    rows: Mapping[int, NDArray[np.float64]] = field(repr=False)

    def __post_init__(self) -> None:
        active = np.asarray(self.active_rows, dtype=np.intp)
        object.__setattr__(self, "active_rows", np.sort(active))
        if set(self.rows.keys()) != set(active.tolist()):
            raise ValueError("rows keys must match active_rows exactly")

    @classmethod
    def empty(cls, p: int) -> "SparsifiedTheta":
        return cls(p=p, active_rows=np.empty(0, dtype=np.intp), rows={})

    def dense(self) -> NDArray[np.float64]:
        out = np.zeros((self.p, self.p))
        for j in self.active_rows:
            out[j] = self.rows[int(j)]
        return out


def nodewise_row(
    x_train: NDArray[np.float64],
    j: int,
    lambda_j: float,
    tol: float = 1e-7,
    max_iter: int = 10_000,
) -> NodewiseRow:
    """Estimate row ``j`` (0-based) from the training rows ``x_train``."""
    x_train = np.asarray(x_train, dtype=np.float64)
    n, p = x_train.shape
    if p < 2:
        raise ValueError(f"need at least 2 columns, got {p}")
    if not 0 <= j < p:
        raise ValueError(f"row index {j} outside [0, {p})")
    if not lambda_j > 0.0:
        raise ValueError(f"lambda_j must be > 0, got {lambda_j}")
    mask = np.arange(p) != j
    xj = x_train[:, j]
    x_rest = x_train[:, mask]
    fit = fit_lasso(
        LassoProblem(
            x_rest,
            xj,
            lambda_j,
            include_intercept=False,
            standardize=False,
            tol=tol,
            max_iter=max_iter,
        )
    )
    sigma2 = float(xj @ (xj - x_rest @ fit.coefs)) / n
    var_j = float(np.mean((xj - xj.mean()) ** 2))
    if sigma2 <= SIGMA2_FLOOR_REL * var_j:
        raise DegenerateResidualError(
            f"node-wise noise estimate for row {j} collapsed "
            f"(sigma2_hat={sigma2:.3e}, column variance={var_j:.3e})"
        )
    row = np.empty(p)
    row[mask] = -fit.coefs / sigma2
    row[j] = 1.0 / sigma2
    return NodewiseRow(j=j, psi_hat=fit.coefs, sigma2_hat=sigma2, row=row)


def nodewise_rows(
    x_train: NDArray[np.float64],
    indices: Iterable[int],
    lambdas: NDArray[np.float64],
    tol: float = 1e-7,
    max_iter: int = 10_000,
) -> SparsifiedTheta:
    """Estimate exactly the requested rows; identical to estimating all rows
    and then zeroing the rest (rows are independent by construction)."""
    x_train = np.asarray(x_train, dtype=np.float64)
    p = x_train.shape[1]
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if lambdas.shape != (p,):
        raise ValueError(f"lambdas must have shape ({p},), got {lambdas.shape}")
    idx = sorted({int(j) for j in indices})
    if idx and not (0 <= idx[0] and idx[-1] < p):
        raise ValueError(f"row indices {idx} outside [0, {p})")
    rows: dict[int, NDArray[np.float64]] = {}
    for j in idx:
        try:
            rows[j] = nodewise_row(x_train, j, float(lambdas[j]), tol, max_iter).row
        except NumericalError as exc:
            raise type(exc)(f"node-wise row {j}: {exc}") from exc
    return SparsifiedTheta(p=p, active_rows=np.array(idx, dtype=np.intp), rows=rows)


def apply_theta(theta: SparsifiedTheta, v: NDArray[np.float64]) -> NDArray[np.float64]:
    """Matrix-vector product of the row-sparsified operator with ``v``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (theta.p,):
        raise ValueError(f"v must have shape ({theta.p},), got {v.shape}")
    out = np.zeros(theta.p)
    for j in theta.active_rows:
        out[j] = float(theta.rows[int(j)] @ v)
    return out


def gram_alignment(theta_full: SparsifiedTheta, gram: NDArray[np.float64]) -> float:
    """Max-norm of ``Theta @ gram - I`` for an all-rows estimator (diagnostic
    of how well the estimated inverse tracks the empirical Gram)."""
    if theta_full.active_rows.size != theta_full.p:
        raise ValueError("gram_alignment requires all p rows to be estimated")
    gram = np.asarray(gram, dtype=np.float64)
    dense = theta_full.dense()
    return float(np.max(np.abs(dense @ gram - np.eye(theta_full.p))))


class NodewiseCache:
    """Per-training-fold lazy row cache.

    Rows are computed on first request and reused across support sets, which
    is the dominant cost saver: the selected support is tiny relative to p.
    """

    def __init__(
        self,
        x_train: NDArray[np.float64],
        lambda_for: Callable[[int], float],
        tol: float = 1e-7,
        max_iter: int = 10_000,
    ) -> None:
        self._x = np.asarray(x_train, dtype=np.float64)
        self._lambda_for = lambda_for
        self._tol = tol
        self._max_iter = max_iter
        self._rows: dict[int, NodewiseRow] = {}
        self.rows_computed = 0  # instrumentation for tests

    @property
    def p(self) -> int:
        return self._x.shape[1]

    def row(self, j: int) -> NodewiseRow:
        cached = self._rows.get(j)
        if cached is None:
            try:
                cached = nodewise_row(
                    self._x, j, float(self._lambda_for(j)), self._tol, self._max_iter
                )
            except NumericalError as exc:
                raise type(exc)(f"node-wise row {j}: {exc}") from exc
            self._rows[j] = cached
            self.rows_computed += 1
        return cached

    def theta_for(self, indices: Iterable[int]) -> SparsifiedTheta:
        idx = sorted({int(j) for j in indices})
        rows = {j: self.row(j).row for j in idx}
        return SparsifiedTheta(
            p=self.p, active_rows=np.array(idx, dtype=np.intp), rows=rows
        )
