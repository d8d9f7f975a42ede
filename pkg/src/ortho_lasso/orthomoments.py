"""Recursive construction of higher-order orthogonal moment functions.

Given a scalar moment function ``F(beta, eta)`` and auxiliary equations
``U(beta, eta) = 0`` (eta of dimension q) solved by ``(beta0, eta0)``, the
order-k lift augments the nuisance with two derivative blocks,

    A0 = (Jacobian of U at the truth)^T          (q x q),
    B0 = mode-apply A0^{-1} to every mode of the order-k tensor
         of eta-derivatives of F at the truth,

and replaces F by

    F_tilde(beta, eta~) = F(beta, eta) - (1/k!) * B[ U(beta, eta)^{outer k} ],

with ``eta~ = (eta, vec A, vec B)``. All eta~-derivatives of F_tilde up to
order k vanish at the truth; the stacked system ``U_tilde`` (which pins A and
B to the derivative values) is provided as an evaluator for certification.

Tensors are plain numpy arrays of shape ``(q,) * order``. Derivatives default
to central finite differences built from products of centered difference
operators, which symmetrizes repeated indices for free; a system may instead
supply exact derivatives.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import lu_factor, lu_solve

from .errors import ConfigError, NumericalError
from .numkit import solve_spd

__all__ = [
    "TENSOR_BUDGET",
    "LossDerivatives",
    "squared_loss",
    "MomentSystem",
    "LiftedSystem",
    "outer_power",
    "mode_product",
    "contract",
    "numeric_derivatives",
    "lift",
    "certify_orthogonality",
    "max_directional_derivative",
    "max_gradient_fd",
    "max_mixed_partial",
    "single_index_Ftilde",
    "single_index_system",
]

TENSOR_BUDGET = 10**8
FD_STEP = {1: 1e-4, 2: 1e-4, 3: 5e-3}


def _check_budget(q: int, m: int) -> None:
    if q**m > TENSOR_BUDGET:
        raise ConfigError(
            f"tensor with q={q}, order={m} has {q**m} entries, over the "
            f"{TENSOR_BUDGET} budget"
        )


def outer_power(a: NDArray[np.float64], m: int) -> NDArray[np.float64]:
    """Order-m outer power: entry ``(j1..jm) = a[j1] * ... * a[jm]``."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    a = np.asarray(a, dtype=np.float64)
    _check_budget(a.size, m)
    out = a
    for _ in range(m - 1):
        out = np.multiply.outer(out, a)
    return out


def mode_product(c: NDArray[np.float64], d: NDArray[np.float64]) -> NDArray[np.float64]:
    """Apply the matrix ``c`` along every mode of the tensor ``d``."""
    c = np.asarray(c, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    q = d.shape[0] if d.ndim else 0
    if d.ndim < 1 or any(s != q for s in d.shape):
        raise ValueError(f"tensor must be cubical, got shape {d.shape}")
    if c.shape != (q, q):
        raise ValueError(f"matrix shape {c.shape} incompatible with dim {q}")
    out = d
    for _ in range(d.ndim):
        # Transform mode 0, then rotate it to the back; after ndim rounds all
        # modes are transformed and the axis order is restored.
        out = np.moveaxis(np.tensordot(c, out, axes=(1, 0)), 0, -1)
    return out


def _mode_solve(lu_piv, d: NDArray[np.float64]) -> NDArray[np.float64]:
    """Apply ``A^{-1}`` along every mode via a factored solve (never an
    explicit inverse)."""
    out = np.asarray(d, dtype=np.float64)
    q = out.shape[0]
    for _ in range(out.ndim):
        flat = out.reshape(q, -1)
        out = np.moveaxis(lu_solve(lu_piv, flat).reshape(out.shape), 0, -1)
    return out


def contract(d: NDArray[np.float64], e: NDArray[np.float64]) -> float:
    """Full contraction: sum of elementwise products of same-shape tensors."""
    d = np.asarray(d, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if d.shape != e.shape:
        raise ValueError(f"shape mismatch: {d.shape} vs {e.shape}")
    return float(np.dot(d.ravel(), e.ravel()))


class DerivativeSupplier(Protocol):
    """Optional exact derivatives for a moment system."""

    def u_jacobian(self, beta: float, eta: NDArray[np.float64]) -> NDArray[np.float64]:
        """J[i, j] = d U_i / d eta_j."""
        ...

    def f_derivative(
        self, beta: float, eta: NDArray[np.float64], order: int
    ) -> NDArray[np.float64]:
        """Order-``order`` tensor of eta-derivatives of F."""
        ...


@dataclass(frozen=True)
class MomentSystem:
    """Scalar target equation F plus q auxiliary equations U over eta."""

    dim_eta: int
    f: Callable[[float, NDArray[np.float64]], float]
    u: Callable[[float, NDArray[np.float64]], NDArray[np.float64]]
    derivative_supplier: DerivativeSupplier | None = None


def _stencil_tensor(
    f: Callable[[NDArray[np.float64]], float],
    x0: NDArray[np.float64],
    order: int,
    h: float,
) -> NDArray[np.float64]:
    """Order-``order`` derivative tensor from products of centered differences.

    Entry (i1..im) applies the centered difference operator once per index
    (repeats allowed; displacements add), dividing by ``(2h)^m``. Only sorted
    index tuples are evaluated; the rest are filled by symmetry.
    """
    q = x0.size
    out = np.zeros((q,) * order)
    signs = list(itertools.product((1.0, -1.0), repeat=order))
    scale = (2.0 * h) ** order
    for idx in itertools.combinations_with_replacement(range(q), order):
        acc = 0.0
        for sgn in signs:
            x = x0.copy()
            for pos, j in enumerate(idx):
                x[j] += sgn[pos] * h
            acc += math.prod(sgn) * f(x)
        val = acc / scale
        for perm in set(itertools.permutations(idx)):
            out[perm] = val
    return out


def numeric_derivatives(
    system: MomentSystem,
    beta0: float,
    eta0: NDArray[np.float64],
    order: int,
    h: float | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """(Jacobian of U, order-``order`` derivative tensor of F) at (beta0, eta0).

    Uses the system's exact supplier when present, otherwise central finite
    differences with step ``h`` (default 1e-4 for orders 1-2, 5e-3 for
    order 3; the Jacobian always uses the first-order step).
    """
    if order not in (1, 2, 3):
        raise ValueError(f"order must be in {{1, 2, 3}}, got {order}")
    eta0 = np.asarray(eta0, dtype=np.float64)
    q = eta0.size
    _check_budget(q, order)
    if system.derivative_supplier is not None:
        jac = np.asarray(system.derivative_supplier.u_jacobian(beta0, eta0))
        nabla = np.asarray(system.derivative_supplier.f_derivative(beta0, eta0, order))
        return jac, nabla

    h_jac = FD_STEP[1]
    h_f = h if h is not None else FD_STEP[order]
    jac = np.empty((q, q))
    for j in range(q):
        step = np.zeros(q)
        step[j] = h_jac
        jac[:, j] = (
            np.asarray(system.u(beta0, eta0 + step))
            - np.asarray(system.u(beta0, eta0 - step))
        ) / (2.0 * h_jac)
    nabla = _stencil_tensor(lambda x: system.f(beta0, x), eta0, order, h_f)
    return jac, nabla


@dataclass(frozen=True)
class LiftedSystem:
    """Order-k lift of a base system; ``eta~`` layout is (eta, vec A, vec B)."""

    base: MomentSystem
    k: int
    a0: NDArray[np.float64]
    b0: NDArray[np.float64]
    eta_tilde0: NDArray[np.float64]
    f_tilde: Callable[[float, NDArray[np.float64]], float]
    u_tilde: Callable[[float, NDArray[np.float64]], NDArray[np.float64]]

    @property
    def dim_eta_tilde(self) -> int:
        q = self.base.dim_eta
        return q + q * q + q**self.k


def lift(
    system: MomentSystem,
    beta0: float,
    eta0: NDArray[np.float64],
    k: int,
    h: float | None = None,
) -> LiftedSystem:
    """Build the order-k lifted system around the solution (beta0, eta0)."""
    if k < 1 or k > 3:
        raise ConfigError(f"lift order must be in {{1, 2, 3}}, got {k}")
    eta0 = np.asarray(eta0, dtype=np.float64)
    q = eta0.size
    if q != system.dim_eta:
        raise ValueError(f"eta0 has size {q}, system expects {system.dim_eta}")
    _check_budget(q, k)

    jac, nabla_k = numeric_derivatives(system, beta0, eta0, k, h)
    a0 = jac.T.copy()
    cond = float(np.linalg.cond(a0))
    if not np.isfinite(cond) or cond >= 1e10:
        raise NumericalError(f"A0 is numerically singular (condition {cond:.3e})")
    lu_piv = lu_factor(a0)
    b0 = _mode_solve(lu_piv, nabla_k)
    eta_tilde0 = np.concatenate([eta0, a0.ravel(), b0.ravel()])
    k_fact = math.factorial(k)

    def split(eta_tilde: NDArray[np.float64]):
        eta_tilde = np.asarray(eta_tilde, dtype=np.float64)
        eta = eta_tilde[:q]
        a = eta_tilde[q : q + q * q].reshape(q, q)
        b = eta_tilde[q + q * q :].reshape((q,) * k)
        return eta, a, b

    def f_tilde(beta: float, eta_tilde: NDArray[np.float64]) -> float:
        eta, _, b = split(eta_tilde)
        u_val = np.asarray(system.u(beta, eta), dtype=np.float64)
        return float(system.f(beta, eta)) - contract(b, outer_power(u_val, k)) / k_fact

    def u_tilde(beta: float, eta_tilde: NDArray[np.float64]) -> NDArray[np.float64]:
        eta, a, b = split(eta_tilde)
        u_val = np.asarray(system.u(beta, eta), dtype=np.float64)
        jac_here, nabla_here = numeric_derivatives(system, beta, eta, k, h)
        return np.concatenate(
            [
                u_val,
                (jac_here.T - a).ravel(),
                (mode_product(a, b) - nabla_here).ravel(),
            ]
        )

    return LiftedSystem(
        base=system,
        k=k,
        a0=a0,
        b0=b0,
        eta_tilde0=eta_tilde0,
        f_tilde=f_tilde,
        u_tilde=u_tilde,
    )


# -- finite-difference certification harness ------------------------------


def _central_derivative(
    g: Callable[[float], float], order: int, h: float
) -> float:
    if order == 1:
        return (g(h) - g(-h)) / (2.0 * h)
    if order == 2:
        return (g(h) - 2.0 * g(0.0) + g(-h)) / (h * h)
    if order == 3:
        return (g(2.0 * h) - 2.0 * g(h) + 2.0 * g(-h) - g(-2.0 * h)) / (2.0 * h**3)
    raise ValueError(f"order must be in {{1, 2, 3}}, got {order}")


def max_directional_derivative(
    f: Callable[[NDArray[np.float64]], float],
    x0: NDArray[np.float64],
    order: int,
    directions: int = 20,
    h: float | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max |central-difference order-``order`` derivative| of ``f`` along
    random unit directions from ``x0``."""
    x0 = np.asarray(x0, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(20240 + order)
    step = h if h is not None else FD_STEP[order]
    worst = 0.0
    for _ in range(directions):
        d = rng.standard_normal(x0.size)
        d /= np.linalg.norm(d)
        val = _central_derivative(lambda t: f(x0 + t * d), order, step)
        worst = max(worst, abs(val))
    return worst


def max_gradient_fd(
    f: Callable[[NDArray[np.float64]], float],
    x0: NDArray[np.float64],
    h: float = 1e-5,
) -> float:
    """Max |central-difference partial derivative| over every coordinate."""
    x0 = np.asarray(x0, dtype=np.float64)
    worst = 0.0
    for j in range(x0.size):
        step = np.zeros(x0.size)
        step[j] = h
        worst = max(worst, abs(f(x0 + step) - f(x0 - step)) / (2.0 * h))
    return worst


def max_mixed_partial(
    f: Callable[[NDArray[np.float64]], float],
    x0: NDArray[np.float64],
    idx_a: NDArray[np.intp],
    idx_b: NDArray[np.intp],
    h: float = 1e-4,
) -> float:
    """Max |d^2 f / dx_a dx_b| over the index blocks, by 4-point differences."""
    x0 = np.asarray(x0, dtype=np.float64)
    worst = 0.0
    for a in idx_a:
        for b in idx_b:
            acc = 0.0
            for sa, sb in itertools.product((1.0, -1.0), repeat=2):
                x = x0.copy()
                x[a] += sa * h
                x[b] += sb * h
                acc += sa * sb * f(x)
            worst = max(worst, abs(acc / (4.0 * h * h)))
    return worst


def certify_orthogonality(
    lifted: LiftedSystem,
    beta0: float,
    eta_tilde0: NDArray[np.float64] | None = None,
    max_order: int | None = None,
    directions: int = 20,
    h: float | None = None,
    rng: np.random.Generator | None = None,
) -> dict[int, float]:
    """Per-order max |directional derivative| of F_tilde at the truth.

    Orders run 1..``max_order`` (default: the lift's k). Random directions
    live in the full eta~ space.
    """
    max_order = max_order if max_order is not None else lifted.k
    if max_order > lifted.k:
        raise ValueError(f"max_order {max_order} exceeds lift order {lifted.k}")
    x0 = (
        np.asarray(eta_tilde0, dtype=np.float64)
        if eta_tilde0 is not None
        else lifted.eta_tilde0
    )
    rng = rng if rng is not None else np.random.default_rng(97)
    report: dict[int, float] = {}
    for order in range(1, max_order + 1):
        report[order] = max_directional_derivative(
            lambda x: lifted.f_tilde(beta0, x),
            x0,
            order,
            directions=directions,
            h=h,
            rng=rng,
        )
    return report


# -- single-index specialization ------------------------------------------


@dataclass(frozen=True)
class LossDerivatives:
    """First three derivatives of a loss ``m(z, y)`` in its first argument,
    each vectorized over ``z``."""

    name: str
    m1: Callable[[NDArray[np.float64], NDArray[np.float64]], NDArray[np.float64]]
    m2: Callable[[NDArray[np.float64], NDArray[np.float64]], NDArray[np.float64]]
    m3: Callable[[NDArray[np.float64], NDArray[np.float64]], NDArray[np.float64]]


def squared_loss() -> LossDerivatives:
    """``m(z, y) = (y - z)**2``: m' = -2(y-z), m'' = 2, m''' = 0."""
    return LossDerivatives(
        name="squared",
        m1=lambda z, y: -2.0 * (y - z),
        m2=lambda z, y: np.full_like(np.asarray(z, dtype=np.float64), 2.0),
        m3=lambda z, y: np.zeros_like(np.asarray(z, dtype=np.float64)),
    )


def single_index_Ftilde(
    loss: LossDerivatives,
    moments,
    beta: float,
    theta: NDArray[np.float64],
    mu: NDArray[np.float64],
    g_mat: NDArray[np.float64],
    h_mat: NDArray[np.float64],
) -> float:
    """Second-order orthogonal moment for single-index M-estimation:

        E[m'(D - X@mu)] - E[m'X] @ G^{-1} @ E[m''(D - X@mu)X]
        + (1/2) E[m'X] @ G^{-1} @ H @ G^{-1} @ E[m'X],

    with ``G^{-1} v`` computed by linear solves.
    """
    f_scalar, u1, u2 = moments.expectations(loss, beta, theta, mu)
    g_mat = np.asarray(g_mat, dtype=np.float64)
    h_mat = np.asarray(h_mat, dtype=np.float64)
    ginv_u2 = solve_spd(g_mat, u2)
    ginv_u1 = solve_spd(g_mat, u1)
    return (
        f_scalar
        - float(u1 @ ginv_u2)
        + 0.5 * float(ginv_u1 @ h_mat @ ginv_u1)
    )


def single_index_system(loss: LossDerivatives, moments, p: int) -> MomentSystem:
    """Moment system for the single-index construction over ``eta = (theta, mu)``:

        F = E[m'(D - X@mu)],   U = (E[m' X]; E[m''(D - X@mu) X]).
    """

    def f(beta: float, eta: NDArray[np.float64]) -> float:
        eta = np.asarray(eta, dtype=np.float64)
        return moments.expectations(loss, beta, eta[:p], eta[p:])[0]

    def u(beta: float, eta: NDArray[np.float64]) -> NDArray[np.float64]:
        eta = np.asarray(eta, dtype=np.float64)
        _, u1, u2 = moments.expectations(loss, beta, eta[:p], eta[p:])
        return np.concatenate([u1, u2])

    return MomentSystem(dim_eta=2 * p, f=f, u=u)
