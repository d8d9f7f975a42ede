"""Cross-fitted double and triple Lasso estimation of a scalar treatment effect.

The double estimator is the residual-on-residual fold estimator

    beta_k = mean_k[(Y - a_phi - X @ phi)(D - a_gamma - X @ gamma)]
             / mean_k[(D - a_gamma - X @ gamma)^2],

the triple estimator subtracts an inverse-Gram adjustment from numerator and
denominator,

    beta_k = (A - bY @ Theta @ bD) / (C - bD @ Theta @ bD),

where ``A``/``C`` are the double's numerator/denominator, ``bY``/``bD`` are
holdout cross moments of the controls with the two residuals, and ``Theta``
is the row-sparsified node-wise estimate computed on the training folds.
Fold estimates are averaged with equal weights; standard errors use the
cross-fitted influence-function plug-in

    V_hat = mean[(eps_i * nu_i)^2] / mean[nu_i^2]^2,  se = sqrt(V_hat / n),

with ``nu_i`` the holdout treatment residual and
``eps_i = Y_i - a_phi - X_i @ phi - beta_hat * nu_i`` using the aggregated
``beta_hat``. Both methods share folds and the (gamma, phi) fits when run
together, so their difference isolates the adjustment term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import (
    ConfigError,
    ConvergenceError,
    DegenerateResidualError,
    NumericalError,
)
from .lasso import LassoFit, LassoProblem, fit_lasso
from .nodewise import NodewiseCache, SparsifiedTheta, apply_theta
from .penalty import FoldPenalties, bcch_lambda, feasible_lambda, inv_normal_cdf

__all__ = [
    "Dataset",
    "FoldPlan",
    "FoldNuisance",
    "DmlEstimate",
    "EstimateConfig",
    "EstimateResult",
    "METHODS",
    "make_folds",
    "fit_fold_nuisance",
    "select_extra",
    "fold_beta_double",
    "fold_beta_triple",
    "aggregate",
    "score_se",
    "confidence_interval",
    "estimate",
]

METHODS = ("double", "triple")
DENOMINATOR_FLOOR_REL = 1e-8


@dataclass(frozen=True)
class Dataset:
    """Observations ``(x, d, y)``: controls (n, p), treatment (n,), outcome (n,)."""

    x: NDArray[np.float64]
    d: NDArray[np.float64]
    y: NDArray[np.float64]

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64)
        d = np.asarray(self.d, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"x must be 2-d, got shape {x.shape}")
        n = x.shape[0]
        if d.shape != (n,) or y.shape != (n,):
            raise ValueError(
                f"d {d.shape} and y {y.shape} must both have shape ({n},)"
            )
        if not (np.isfinite(x).all() and np.isfinite(d).all() and np.isfinite(y).all()):
            raise ValueError("dataset must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of each observation to one of ``k_folds`` folds; fold sizes
    differ by at most one."""

    k_folds: int
    assignment: NDArray[np.intp]

    def holdout(self, k: int) -> NDArray[np.intp]:
        return np.flatnonzero(self.assignment == k)

    def train(self, k: int) -> NDArray[np.intp]:
        return np.flatnonzero(self.assignment != k)


def make_folds(n: int, k_folds: int, rng: np.random.Generator) -> FoldPlan:
    """Uniformly random balanced partition, deterministic given ``rng`` state."""
    if k_folds < 2:
        raise ConfigError(f"k_folds must be >= 2, got {k_folds}")
    if n < 2 * k_folds:
        raise ConfigError(f"need n >= 2*k_folds, got n={n}, k_folds={k_folds}")
    perm = rng.permutation(n)
    assignment = np.empty(n, dtype=np.intp)
    base = n // k_folds
    extra = n % k_folds
    start = 0
    for k in range(k_folds):
        size = base + (1 if k < extra else 0)
        assignment[perm[start : start + size]] = k
        start += size
    return FoldPlan(k_folds=k_folds, assignment=assignment)


@dataclass(frozen=True)
class FoldNuisance:
    """Nuisance estimates for one fold, fit strictly on the training folds.

    ``gamma``/``phi`` carry their fitted intercepts so holdout residuals are
    full regression residuals. ``support`` is the union of the treatment
    regression's support and any extra selected indices; ``theta`` holds the
    node-wise rows on ``support`` for the triple method and is the
    empty-support zero operator for the double method.
    """

    gamma: NDArray[np.float64]
    gamma_int: float
    phi: NDArray[np.float64]
    phi_int: float
    support: NDArray[np.intp]
    theta: SparsifiedTheta
    diagnostics: Mapping[str, float] = field(default_factory=dict)


def select_extra(
    s_vector: NDArray[np.float64], existing: Iterable[int], l_extra: int
) -> NDArray[np.intp]:
    """Indices of the ``l_extra`` largest absolute entries of ``s_vector``
    not already in ``existing``; ties resolve to the smaller index. Asking for
    more than remain returns all remaining indices."""
    if l_extra < 0:
        raise ValueError(f"l_extra must be >= 0, got {l_extra}")
    s = np.asarray(s_vector, dtype=np.float64)
    taken = set(int(j) for j in existing)
    order = sorted(range(s.size), key=lambda j: (-abs(s[j]), j))
    picked = [j for j in order if j not in taken][:l_extra]
    return np.array(sorted(picked), dtype=np.intp)


def _check_converged(fit: LassoFit, label: str) -> LassoFit:
    if not fit.converged:
        raise ConvergenceError(f"{label} lasso did not converge within max_iter")
    return fit


def _nodewise_lambda_for(
    x_train: NDArray[np.float64], pens: FoldPenalties | None, tol: float, max_iter: int
):
    """Per-row node-wise penalty: fixed vector when known scales are supplied,
    otherwise the two-step feasible level computed per requested row."""
    if pens is not None:
        lam_psi = pens.lambda_psi

        def fixed(j: int) -> float:
            return float(lam_psi[j])

        return fixed

    p = x_train.shape[1]
    mask_cache: dict[int, float] = {}

    def feasible(j: int) -> float:
        lam = mask_cache.get(j)
        if lam is None:
            mask = np.arange(p) != j
            lam = feasible_lambda(
                x_train[:, mask],
                x_train[:, j],
                include_intercept=False,
                standardize=False,
                tol=tol,
                max_iter=max_iter,
            )
            mask_cache[j] = lam
        return lam

    return feasible


def _fit_gamma_phi(
    data: Dataset,
    plan: FoldPlan,
    k: int,
    pens: FoldPenalties | None,
    tol: float,
    max_iter: int,
) -> FoldNuisance:
    """Shared stage: the two penalized regressions on the training folds."""
    train = plan.train(k)
    x_tr = data.x[train]
    d_tr = data.d[train]
    y_tr = data.y[train]

    try:
        if pens is not None:
            lam_gamma, lam_phi = pens.lambda_gamma, pens.lambda_phi
        else:
            lam_gamma = feasible_lambda(x_tr, d_tr, tol=tol, max_iter=max_iter)
            lam_phi = feasible_lambda(x_tr, y_tr, tol=tol, max_iter=max_iter)
        gamma_fit = _check_converged(
            fit_lasso(LassoProblem(x_tr, d_tr, lam_gamma, tol=tol, max_iter=max_iter)),
            f"fold {k} treatment",
        )
        phi_fit = _check_converged(
            fit_lasso(LassoProblem(x_tr, y_tr, lam_phi, tol=tol, max_iter=max_iter)),
            f"fold {k} reduced-form",
        )
    except NumericalError as exc:
        raise type(exc)(f"fold {k}: {exc}") from exc

    return FoldNuisance(
        gamma=gamma_fit.coefs,
        gamma_int=gamma_fit.intercept,
        phi=phi_fit.coefs,
        phi_int=phi_fit.intercept,
        support=np.array(sorted(gamma_fit.support), dtype=np.intp),
        theta=SparsifiedTheta.empty(data.p),
        diagnostics={
            "gamma_sweeps": float(gamma_fit.iterations),
            "phi_sweeps": float(phi_fit.iterations),
            "support0_size": float(gamma_fit.support.size),
        },
    )


def _extend_theta(
    data: Dataset,
    plan: FoldPlan,
    k: int,
    base: FoldNuisance,
    pens: FoldPenalties | None,
    l_extra: int,
    tol: float,
    max_iter: int,
) -> FoldNuisance:
    """Triple-specific stage: node-wise rows on the selected support."""
    train = plan.train(k)
    x_tr = data.x[train]
    cache = NodewiseCache(
        x_tr, _nodewise_lambda_for(x_tr, pens, tol, max_iter), tol, max_iter
    )
    support = set(int(j) for j in base.support)
    try:
        if l_extra > 0:
            # Ranking vector: all-rows inverse-Gram estimate applied to the
            # training cross moment of controls with the treatment residual.
            resid_tr = data.d[train] - base.gamma_int - x_tr @ base.gamma
            cross = (x_tr.T @ resid_tr) / train.size
            s_vec = apply_theta(cache.theta_for(range(data.p)), cross)
            extra = select_extra(s_vec, support, l_extra)
            support |= set(int(j) for j in extra)
        theta = cache.theta_for(support)
    except NumericalError as exc:
        raise type(exc)(f"fold {k}: {exc}") from exc
    support_arr = np.array(sorted(support), dtype=np.intp)
    diagnostics = dict(base.diagnostics)
    diagnostics["support_size"] = float(support_arr.size)
    diagnostics["theta_rows_computed"] = float(cache.rows_computed)
    if support_arr.size:
        diagnostics["theta_max_row_l1"] = max(
            cache.row(int(j)).l1_norm for j in support_arr
        )
    return FoldNuisance(
        gamma=base.gamma,
        gamma_int=base.gamma_int,
        phi=base.phi,
        phi_int=base.phi_int,
        support=support_arr,
        theta=theta,
        diagnostics=diagnostics,
    )


def fit_fold_nuisance(
    data: Dataset,
    plan: FoldPlan,
    k: int,
    pens: FoldPenalties | None,
    method: str = "triple",
    l_extra: int = 0,
    tol: float = 1e-7,
    max_iter: int = 10_000,
) -> FoldNuisance:
    """Fit (gamma, phi) and, for the triple method, the node-wise rows, all on
    the training folds ``I(-k)``. ``pens=None`` activates the feasible
    (two-step, real-data) penalty path for every regression.

    For ``method="double"`` no node-wise work happens and ``theta`` is the
    empty-support zero operator.
    """
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
    base = _fit_gamma_phi(data, plan, k, pens, tol, max_iter)
    if method == "double":
        return base
    return _extend_theta(data, plan, k, base, pens, l_extra, tol, max_iter)


def _holdout_residuals(
    data: Dataset, plan: FoldPlan, k: int, nuis: FoldNuisance
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.intp]]:
    hold = plan.holdout(k)
    x_h = data.x[hold]
    r_d = data.d[hold] - nuis.gamma_int - x_h @ nuis.gamma
    r_y = data.y[hold] - nuis.phi_int - x_h @ nuis.phi
    return r_y, r_d, hold


def _fold_terms(
    data: Dataset, plan: FoldPlan, k: int, nuis: FoldNuisance, use_theta: bool
) -> tuple[float, float]:
    """Numerator and denominator of the fold estimator (with or without the
    inverse-Gram adjustment), after the denominator floor check."""
    r_y, r_d, hold = _holdout_residuals(data, plan, k, nuis)
    m = hold.size
    num = float(r_y @ r_d) / m
    den = float(r_d @ r_d) / m
    if use_theta:
        b_y = (data.x[hold].T @ r_y) / m
        b_d = (data.x[hold].T @ r_d) / m
        theta_bd = apply_theta(nuis.theta, b_d)
        num = num - float(b_y @ theta_bd)
        den = den - float(b_d @ theta_bd)
    floor = DENOMINATOR_FLOOR_REL * float(np.mean(data.d[hold] ** 2))
    if den < floor:
        raise DegenerateResidualError(
            f"fold {k} denominator {den:.3e} below floor {floor:.3e}"
        )
    return num, den


def fold_beta_double(data: Dataset, plan: FoldPlan, k: int, nuis: FoldNuisance) -> float:
    num, den = _fold_terms(data, plan, k, nuis, use_theta=False)
    return num / den


def fold_beta_triple(data: Dataset, plan: FoldPlan, k: int, nuis: FoldNuisance) -> float:
    num, den = _fold_terms(data, plan, k, nuis, use_theta=True)
    return num / den


def aggregate(fold_betas: Sequence[float]) -> float:
    """Equal-weight mean of the fold estimates."""
    arr = np.asarray(fold_betas, dtype=np.float64)
    if arr.size < 1:
        raise ValueError("need at least one fold estimate")
    return float(arr.mean())


def score_se(
    data: Dataset,
    plan: FoldPlan,
    nuisances: Sequence[FoldNuisance],
    beta_hat: float,
) -> float:
    """Influence-function standard error from cross-fitted residuals."""
    n = data.n
    nu = np.empty(n)
    eps = np.empty(n)
    for k in range(plan.k_folds):
        r_y, r_d, hold = _holdout_residuals(data, plan, k, nuisances[k])
        nu[hold] = r_d
        eps[hold] = r_y - beta_hat * r_d
    nu2 = float(np.mean(nu**2))
    floor = DENOMINATOR_FLOOR_REL * float(np.mean(data.d**2))
    if nu2 < floor:
        raise DegenerateResidualError(
            f"treatment residual second moment {nu2:.3e} below floor {floor:.3e}"
        )
    v_hat = float(np.mean((eps * nu) ** 2)) / (nu2 * nu2)
    return math.sqrt(v_hat / n)


def confidence_interval(beta_hat: float, se: float, level: float) -> tuple[float, float]:
    """Two-sided normal interval ``beta_hat +/- z * se``."""
    if not se > 0.0:
        raise ValueError(f"se must be > 0, got {se}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    z = inv_normal_cdf(1.0 - (1.0 - level) / 2.0)
    return beta_hat - z * se, beta_hat + z * se


@dataclass(frozen=True)
class DmlEstimate:
    method: str
    beta_hat: float
    se: float
    ci: tuple[float, float]
    level: float
    fold_betas: NDArray[np.float64]
    fold_diagnostics: tuple[Mapping[str, float], ...]


@dataclass(frozen=True)
class EstimateConfig:
    """Pipeline configuration.

    ``penalties=None`` switches every regression to the feasible two-step
    penalty path (real-data mode). ``seed`` feeds the fold shuffle; pass a
    Generator via ``rng`` to control it directly.
    """

    methods: tuple[str, ...] = METHODS
    k_folds: int = 5
    level: float = 0.95
    l_extra: int = 0
    penalties: FoldPenalties | None = None
    seed: int = 0
    rng: np.random.Generator | None = None
    tol: float = 1e-7
    max_iter: int = 10_000

    def __post_init__(self) -> None:
        if not self.methods:
            raise ConfigError("at least one method required")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        if self.k_folds < 2:
            raise ConfigError(f"k_folds must be >= 2, got {self.k_folds}")
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"level must lie in (0, 1), got {self.level}")
        if self.l_extra < 0:
            raise ConfigError(f"l_extra must be >= 0, got {self.l_extra}")


@dataclass(frozen=True)
class EstimateResult:
    """Per-method estimates plus per-method failure tags (a method appears in
    exactly one of the two mappings)."""

    estimates: Mapping[str, DmlEstimate]
    failures: Mapping[str, str]
    plan: FoldPlan


def estimate(data: Dataset, config: EstimateConfig) -> EstimateResult:
    """Run the full cross-fitted pipeline.

    Both methods share the fold plan and the (gamma, phi) fits; the triple
    method adds the node-wise stage. A failure in the shared stage fails every
    requested method; a failure in a method-specific stage fails only that
    method. Failure tags are exception class names.
    """
    if data.n < 4 * config.k_folds:
        raise ConfigError(
            f"need n >= 4*k_folds, got n={data.n}, k_folds={config.k_folds}"
        )
    rng = config.rng if config.rng is not None else np.random.default_rng(config.seed)
    plan = make_folds(data.n, config.k_folds, rng)

    want_triple = "triple" in config.methods
    estimates: dict[str, DmlEstimate] = {}
    failures: dict[str, str] = {}

    # Shared stage: (gamma, phi) per fold, used by both methods.
    try:
        nuisances = [
            _fit_gamma_phi(data, plan, k, config.penalties, config.tol, config.max_iter)
            for k in range(plan.k_folds)
        ]
    except NumericalError as exc:
        tag = type(exc).__name__
        return EstimateResult(
            estimates={}, failures={m: tag for m in config.methods}, plan=plan
        )

    per_method_nuisances: dict[str, list[FoldNuisance]] = {"double": nuisances}
    if want_triple:
        try:
            per_method_nuisances["triple"] = [
                _extend_theta(
                    data,
                    plan,
                    k,
                    nuisances[k],
                    config.penalties,
                    config.l_extra,
                    config.tol,
                    config.max_iter,
                )
                for k in range(plan.k_folds)
            ]
        except NumericalError as exc:
            failures["triple"] = type(exc).__name__

    for method in config.methods:
        if method in failures:
            continue
        method_nuis = per_method_nuisances[method]
        try:
            fold_betas = []
            diags = []
            for k in range(plan.k_folds):
                num, den = _fold_terms(
                    data, plan, k, method_nuis[k], use_theta=(method == "triple")
                )
                fold_betas.append(num / den)
                diag = dict(method_nuis[k].diagnostics)
                diag["numerator"] = num
                diag["denominator"] = den
                diags.append(diag)
            beta_hat = aggregate(fold_betas)
            se = score_se(data, plan, method_nuis, beta_hat)
            ci = confidence_interval(beta_hat, se, config.level)
        except NumericalError as exc:
            failures[method] = type(exc).__name__
            continue
        estimates[method] = DmlEstimate(
            method=method,
            beta_hat=beta_hat,
            se=se,
            ci=ci,
            level=config.level,
            fold_betas=np.array(fold_betas),
            fold_diagnostics=tuple(diags),
        )
    return EstimateResult(estimates=estimates, failures=failures, plan=plan)
