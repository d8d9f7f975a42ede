"""Monte Carlo harness: designs, replication records, metrics, densities.

A design fixes a Gaussian linear data-generating process

    X ~ N(0, Sigma(rho)),  D = X @ gamma0 + nu,  Y = beta0 * D + X @ theta0 + eps

with geometric coefficient decay and one of three sparsity regimes for
``gamma0`` (2 nonzeros, 5 nonzeros, or fully dense). Every replication is
seeded independently of execution order: the stream for replication ``r`` of a
design derives from ``(master_seed, sha256(design_id), r)`` and splits into
three independent generators (design matrix, noise, fold shuffle), so results
are bitwise identical whether replications run serially or across processes.
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, DegenerateInputError
from .estimators import METHODS, Dataset, EstimateConfig, estimate
from .numkit import cholesky, sample_mvn, toeplitz_sigma
from .penalty import FoldPenalties, fold_penalties

__all__ = [
    "GAMMA_REGIMES",
    "SimDesign",
    "ReplicationRecord",
    "MetricsRow",
    "make_theta0",
    "make_gamma0",
    "design_penalties",
    "replication_rngs",
    "draw_dataset",
    "run_replication",
    "run_grid",
    "compute_metrics",
    "type7_quantile",
    "kernel_density",
]

# Regime name -> number of leading nonzero treatment coefficients
# (None means all p of them).
GAMMA_REGIMES: dict[str, int | None] = {
    "exact": 2,
    "intermediate": 5,
    "approximate": None,
}


@dataclass(frozen=True)
class SimDesign:
    """One cell of the simulation grid."""

    n: int
    p: int
    rho: float
    gamma_regime: str
    beta0: float = 1.0
    sigma_nu: float = 1.0
    sigma_eps: float = 1.0
    k_folds: int = 5
    reps: int = 1
    master_seed: int = 0

    def __post_init__(self) -> None:
        if self.p < 2:
            raise ConfigError(f"p must be >= 2, got {self.p}")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")
        if self.gamma_regime not in GAMMA_REGIMES:
            raise ConfigError(
                f"gamma_regime must be one of {sorted(GAMMA_REGIMES)}, "
                f"got {self.gamma_regime!r}"
            )
        if self.k_folds < 2:
            raise ConfigError(f"k_folds must be >= 2, got {self.k_folds}")
        if self.n < 4 * self.k_folds:
            raise ConfigError(
                f"need n >= 4*k_folds, got n={self.n}, k_folds={self.k_folds}"
            )
        if self.reps < 1:
            raise ConfigError(f"reps must be >= 1, got {self.reps}")
        if self.sigma_nu <= 0.0 or self.sigma_eps <= 0.0:
            raise ConfigError("noise standard deviations must be > 0")

    @property
    def design_id(self) -> str:
        return f"n{self.n}_p{self.p}_rho{self.rho:g}_{self.gamma_regime}"


@dataclass(frozen=True)
class ReplicationRecord:
    """One (replication, method) outcome; failed replications carry NaN
    statistics plus the failure tag (an exception class name)."""

    design_id: str
    rep_id: int
    method: str
    beta_hat: float
    se: float
    covered: float
    ci_length: float
    t_stat: float
    runtime_ms: float = 0.0
    failure: str = ""


@dataclass(frozen=True)
class MetricsRow:
    """Monte Carlo summary for one (design, method) group, with a Monte Carlo
    standard error column next to every estimated moment."""

    design_id: str
    method: str
    n_reps: int
    n_failed: int
    failure_rate: float
    coverage: float
    coverage_se: float
    mean_t: float
    mean_t_se: float
    sq_bias: float
    sq_bias_se: float
    variance: float
    variance_se: float
    mse: float
    mse_se: float


def make_theta0(p: int) -> NDArray[np.float64]:
    """Outcome control coefficients: geometric decay ``0.5 ** j``, j=0..p-1."""
    if p < 1:
        raise ConfigError(f"p must be >= 1, got {p}")
    return 0.5 ** np.arange(p, dtype=np.float64)


def make_gamma0(p: int, gamma_regime: str) -> NDArray[np.float64]:
    """Treatment coefficients: the same decay, truncated by the regime's
    sparsity (2, 5, or no truncation)."""
    if gamma_regime not in GAMMA_REGIMES:
        raise ConfigError(
            f"gamma_regime must be one of {sorted(GAMMA_REGIMES)}, "
            f"got {gamma_regime!r}"
        )
    gamma = make_theta0(p).copy()
    s = GAMMA_REGIMES[gamma_regime]
    if s is not None:
        gamma[s:] = 0.0
    return gamma


@lru_cache(maxsize=32)
def _chol_for(p: int, rho: float) -> NDArray[np.float64]:
    chol = cholesky(toeplitz_sigma(p, rho))
    chol.setflags(write=False)
    return chol


def design_penalties(design: SimDesign) -> FoldPenalties:
    """Plug-in penalty levels for the design, evaluated at the common
    training-fold size ``round((K-1) * n / K)``."""
    n_train = round((design.k_folds - 1) * design.n / design.k_folds)
    return fold_penalties(
        n_train,
        design.p,
        design.rho,
        beta0=design.beta0,
        sigma_nu=design.sigma_nu,
        sigma_eps=design.sigma_eps,
    )


def replication_rngs(
    design: SimDesign, rep: int
) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Three independent generators (design matrix, noise, folds) for one
    replication, derived from the design identity and the replication index."""
    digest = hashlib.sha256(design.design_id.encode("utf-8")).digest()[:8]
    tag = int.from_bytes(digest, "little")
    seq = np.random.SeedSequence([design.master_seed, tag, rep])
    x_seq, noise_seq, fold_seq = seq.spawn(3)
    return (
        np.random.default_rng(x_seq),
        np.random.default_rng(noise_seq),
        np.random.default_rng(fold_seq),
    )


def draw_dataset(
    design: SimDesign,
    rng: np.random.Generator,
    noise_rng: np.random.Generator | None = None,
) -> Dataset:
    """Draw one dataset from the design. ``rng`` drives the design matrix;
    ``noise_rng`` (default: the same generator) drives nu then eps, in that
    order."""
    noise = noise_rng if noise_rng is not None else rng
    chol = _chol_for(design.p, design.rho)
    x = sample_mvn(chol, design.n, rng)
    nu = design.sigma_nu * noise.standard_normal(design.n)
    eps = design.sigma_eps * noise.standard_normal(design.n)
    d = x @ make_gamma0(design.p, design.gamma_regime) + nu
    y = design.beta0 * d + x @ make_theta0(design.p) + eps
    return Dataset(x=x, d=d, y=y)


def run_replication(
    design: SimDesign,
    rep: int,
    l_extra: int = 0,
    timing: bool = False,
    penalties: FoldPenalties | None = None,
) -> list[ReplicationRecord]:
    """One replication -> one record per method (double and triple).

    ``penalties`` defaults to the design's plug-in levels; pass an override to
    study mis-specified penalty choices. With ``timing`` off (the default)
    ``runtime_ms`` is exactly 0.0, keeping output byte-reproducible; with it
    on, both records carry the wall-clock milliseconds of the shared pipeline
    call.
    """
    if rep < 0:
        raise ConfigError(f"rep must be >= 0, got {rep}")
    x_rng, noise_rng, fold_rng = replication_rngs(design, rep)
    data = draw_dataset(design, x_rng, noise_rng)
    config = EstimateConfig(
        methods=METHODS,
        k_folds=design.k_folds,
        level=0.95,
        l_extra=l_extra,
        penalties=penalties if penalties is not None else design_penalties(design),
        rng=fold_rng,
    )
    t0 = time.perf_counter() if timing else 0.0
    result = estimate(data, config)
    runtime_ms = (time.perf_counter() - t0) * 1e3 if timing else 0.0

    records = []
    for method in METHODS:
        if method in result.failures:
            records.append(
                ReplicationRecord(
                    design_id=design.design_id,
                    rep_id=rep,
                    method=method,
                    beta_hat=float("nan"),
                    se=float("nan"),
                    covered=float("nan"),
                    ci_length=float("nan"),
                    t_stat=float("nan"),
                    runtime_ms=runtime_ms,
                    failure=result.failures[method],
                )
            )
            continue
        est = result.estimates[method]
        ci_length = est.ci[1] - est.ci[0]
        dev = est.beta_hat - design.beta0
        records.append(
            ReplicationRecord(
                design_id=design.design_id,
                rep_id=rep,
                method=method,
                beta_hat=est.beta_hat,
                se=est.se,
                covered=float(abs(dev) <= 0.5 * ci_length),
                ci_length=ci_length,
                t_stat=dev / est.se,
                runtime_ms=runtime_ms,
                failure="",
            )
        )
    return records


def _run_one(args: tuple[SimDesign, int, int, bool]) -> list[ReplicationRecord]:
    design, rep, l_extra, timing = args
    return run_replication(design, rep, l_extra=l_extra, timing=timing)


def run_grid(
    designs: Sequence[SimDesign],
    jobs: int = 1,
    l_extra: int = 0,
    timing: bool = False,
) -> list[ReplicationRecord]:
    """All replications of all designs, sorted by (design_id, rep, method).

    ``jobs > 1`` fans replications out over a process pool; the per-replication
    seeding plus the final sort make the output independent of scheduling.
    """
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    tasks = [
        (design, rep, l_extra, timing)
        for design in designs
        for rep in range(design.reps)
    ]
    records: list[ReplicationRecord] = []
    if jobs == 1 or len(tasks) <= 1:
        for task in tasks:
            records.extend(_run_one(task))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for batch in pool.map(_run_one, tasks, chunksize=8):
                records.extend(batch)
    records.sort(key=lambda r: (r.design_id, r.rep_id, r.method))
    return records


def compute_metrics(records: Sequence[ReplicationRecord]) -> MetricsRow:
    """Summarize one (design, method) group of records.

    Deviations from the target are recovered as ``t_stat * se``, so no design
    lookup is needed. Requires at least two non-failed records; an all-failed
    group raises :class:`DegenerateInputError` (callers producing tables
    should catch it and emit a failure-rate-only row).
    """
    if not records:
        raise DegenerateInputError("no records to summarize")
    keys = {(r.design_id, r.method) for r in records}
    if len(keys) > 1:
        raise ConfigError(
            f"records mix (design, method) groups: {sorted(keys)}"
        )
    ok = [r for r in records if not r.failure]
    n_failed = len(records) - len(ok)
    if not ok:
        raise DegenerateInputError(
            "every replication in the group failed; no moments to report"
        )
    if len(ok) < 2:
        raise DegenerateInputError(
            f"need >= 2 non-failed replications, got {len(ok)}"
        )
    r_ok = len(ok)
    dev = np.array([r.t_stat * r.se for r in ok])
    t = np.array([r.t_stat for r in ok])
    cov = np.array([r.covered for r in ok])

    mean_dev = float(dev.mean())
    sq_bias = mean_dev * mean_dev
    centered = dev - mean_dev
    variance = float(np.mean(centered**2))
    mse = sq_bias + variance
    coverage = float(cov.mean())

    sd_dev = float(dev.std(ddof=1))
    mu4 = float(np.mean(centered**4))
    sqrt_r = np.sqrt(r_ok)
    (design_id, method) = next(iter(keys))
    return MetricsRow(
        design_id=design_id,
        method=method,
        n_reps=len(records),
        n_failed=n_failed,
        failure_rate=n_failed / len(records),
        coverage=coverage,
        coverage_se=float(np.sqrt(coverage * (1.0 - coverage) / r_ok)),
        mean_t=float(t.mean()),
        mean_t_se=float(t.std(ddof=1) / sqrt_r),
        sq_bias=sq_bias,
        sq_bias_se=2.0 * abs(mean_dev) * sd_dev / float(sqrt_r),
        variance=variance,
        variance_se=float(np.sqrt(max(mu4 - variance * variance, 0.0) / r_ok)),
        mse=mse,
        mse_se=float(np.sqrt(np.mean((dev**2 - mse) ** 2) / r_ok)),
    )


def type7_quantile(values: NDArray[np.float64], q: float) -> float:
    """Linear-interpolation sample quantile (the numpy/R default)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DegenerateInputError("cannot take a quantile of an empty array")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    return float(np.quantile(values, q))


def kernel_density(
    values: NDArray[np.float64],
    grid: NDArray[np.float64] | None = None,
    grid_size: int = 512,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Gaussian kernel density with the classic rule-of-thumb bandwidth

        h = 0.9 * min(sd, IQR / 1.34) * len(values) ** (-1/5)

    (sample sd, interpolated IQR; when the IQR collapses to zero the sd alone
    sets the scale). All-equal input is degenerate and raises. Returns
    ``(grid, density)``; the default grid spans the data plus three bandwidths
    on each side with ``grid_size`` points.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise DegenerateInputError("kernel density needs at least two values")
    if not np.all(np.isfinite(v)):
        raise DegenerateInputError("kernel density needs finite values")
    sd = float(v.std(ddof=1))
    iqr = type7_quantile(v, 0.75) - type7_quantile(v, 0.25)
    scale = min(sd, iqr / 1.34)
    if scale <= 0.0:
        scale = sd
    if scale <= 0.0:
        raise DegenerateInputError("all values are identical; density is degenerate")
    h = 0.9 * scale * v.size ** (-0.2)
    if grid is None:
        grid = np.linspace(v.min() - 3.0 * h, v.max() + 3.0 * h, grid_size)
    else:
        grid = np.asarray(grid, dtype=np.float64)
    z = (grid[:, None] - v[None, :]) / h
    density = np.exp(-0.5 * z * z).mean(axis=1) / (h * np.sqrt(2.0 * np.pi))
    return grid, density
