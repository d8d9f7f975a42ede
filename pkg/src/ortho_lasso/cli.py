"""Command-line interface.

Subcommands
-----------
simulate     run a Monte Carlo grid and write one record per (replication,
             method) to a CSV file
report       summarize a records file into metrics and density tables
estimate     run the cross-fitted estimators on a CSV dataset
ortho-check  finite-difference certification of the orthogonality properties

Exit codes: 0 success, 2 usage/configuration problem, 3 input-data problem,
4 numerical failure. Floating-point values are printed with 17 significant
digits so that identical runs produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DegenerateInputError,
    NumericalError,
    OrthoLassoError,
)
from .estimators import Dataset, EstimateConfig, METHODS, estimate
from .numkit import toeplitz_sigma
from .orthomoments import (
    lift,
    certify_orthogonality,
    max_directional_derivative,
    max_gradient_fd,
    max_mixed_partial,
    single_index_system,
    squared_loss,
)
from .population import (
    GaussianLinearDesign,
    GaussianSquaredLossMoments,
    double_score_function,
    triple_score_function,
)
from .simkit import (
    MetricsRow,
    ReplicationRecord,
    SimDesign,
    compute_metrics,
    draw_dataset,
    kernel_density,
    make_gamma0,
    make_theta0,
    replication_rngs,
    run_grid,
)

RECORDS_HEADER = (
    "design_id,n,p,rho,regime,rep,method,beta_hat,se,covered,"
    "ci_length,t_stat,runtime_ms,failure"
)
METRICS_HEADER = (
    "design_id,method,n_reps,n_failed,failure_rate,coverage,coverage_se,"
    "mean_t,mean_t_se,sq_bias,sq_bias_se,variance,variance_se,mse,mse_se"
)
DENSITY_HEADER = "design_id,method,value,density"
ESTIMATE_HEADER = "method,beta_hat,se,ci_lo,ci_hi,n,p,K,seed"

JOBS_ENV = "ORTHO_LASSO_JOBS"

# Certification thresholds used by ortho-check.
SCORE_TOL = 1e-5
BASELINE_MIN = 0.5


def _fmt(value) -> str:
    """17-significant-digit text for floats, plain str otherwise."""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_csv(path: str, header: str, rows: Sequence[Sequence[object]]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _resolve_jobs(raw: int | None) -> int:
    if raw is not None:
        return raw
    env = os.environ.get(JOBS_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{JOBS_ENV} must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


# ---------------------------------------------------------------- simulate


def _grid_designs(args) -> list[SimDesign]:
    cell_flags = [args.n, args.p, args.rho, args.regime]
    if args.grid is not None:
        if any(v is not None for v in cell_flags):
            raise ConfigError("--grid cannot be combined with --n/--p/--rho/--regime")
        try:
            with open(args.grid) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read grid file {args.grid}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"grid file {args.grid} is not valid JSON: {exc}") from exc
        if isinstance(doc, list):
            cells, base = doc, {}
        elif isinstance(doc, dict):
            cells, base = doc.get("designs", []), doc
        else:
            raise DataError("grid JSON must be a list or an object with 'designs'")
        if not cells:
            raise ConfigError("grid file contains no designs")
        reps = args.reps if args.reps is not None else int(base.get("reps", 1))
        seed = args.seed if args.seed is not None else int(base.get("master_seed", 0))
        designs = []
        for cell in cells:
            try:
                designs.append(
                    SimDesign(
                        n=int(cell["n"]),
                        p=int(cell["p"]),
                        rho=float(cell["rho"]),
                        gamma_regime=str(cell.get("regime", cell.get("gamma_regime"))),
                        k_folds=args.folds,
                        reps=reps,
                        master_seed=seed,
                    )
                )
            except KeyError as exc:
                raise DataError(f"grid cell {cell!r} is missing key {exc}") from exc
        return designs

    if any(v is None for v in cell_flags):
        raise ConfigError("provide --grid or all of --n/--p/--rho/--regime")
    reps = args.reps if args.reps is not None else 1
    seed = args.seed if args.seed is not None else 0
    return [
        SimDesign(
            n=args.n,
            p=args.p,
            rho=args.rho,
            gamma_regime=args.regime,
            k_folds=args.folds,
            reps=reps,
            master_seed=seed,
        )
    ]


def _emit_dataset(path: str, design: SimDesign) -> None:
    """Write the replication-0 dataset of ``design`` as a flat CSV
    (columns y, d, x0001..)."""
    x_rng, noise_rng, _ = replication_rngs(design, 0)
    data = draw_dataset(design, x_rng, noise_rng)
    width = max(4, len(str(design.p)))
    names = ["y", "d"] + [f"x{j + 1:0{width}d}" for j in range(design.p)]
    rows = np.column_stack([data.y, data.d, data.x])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def cmd_simulate(args) -> int:
    designs = _grid_designs(args)
    by_id: dict[str, SimDesign] = {}
    for design in designs:
        if design.design_id in by_id:
            raise ConfigError(f"duplicate design cell {design.design_id}")
        by_id[design.design_id] = design
    jobs = _resolve_jobs(args.jobs)
    if args.emit_data is not None:
        _emit_dataset(args.emit_data, designs[0])
    records = run_grid(designs, jobs=jobs, l_extra=args.l_extra, timing=args.timing)
    rows = []
    for rec in records:
        design = by_id[rec.design_id]
        rows.append(
            (
                rec.design_id,
                design.n,
                design.p,
                float(design.rho),
                design.gamma_regime,
                rec.rep_id,
                rec.method,
                rec.beta_hat,
                rec.se,
                rec.covered,
                rec.ci_length,
                rec.t_stat,
                rec.runtime_ms,
                rec.failure,
            )
        )
    _write_csv(args.out, RECORDS_HEADER, rows)
    n_failed = sum(1 for rec in records if rec.failure)
    print(
        f"wrote {len(rows)} records ({len(designs)} designs, "
        f"{n_failed} failures) to {args.out}"
    )
    return 0


# ------------------------------------------------------------------ report


def _read_records(path: str) -> list[ReplicationRecord]:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read records file {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        required = set(RECORDS_HEADER.split(","))
        fields = set(reader.fieldnames or [])
        if not required <= fields:
            raise DataError(
                f"records file {path} is missing columns: "
                f"{sorted(required - fields)}"
            )
        records = []
        for line_no, row in enumerate(reader, start=2):
            try:
                records.append(
                    ReplicationRecord(
                        design_id=row["design_id"],
                        rep_id=int(row["rep"]),
                        method=row["method"],
                        beta_hat=float(row["beta_hat"]),
                        se=float(row["se"]),
                        covered=float(row["covered"]),
                        ci_length=float(row["ci_length"]),
                        t_stat=float(row["t_stat"]),
                        runtime_ms=float(row["runtime_ms"]),
                        failure=row["failure"] or "",
                    )
                )
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{line_no}: malformed record: {exc}") from exc
    if not records:
        raise DataError(f"records file {path} contains no rows")
    return records


def _metrics_to_row(m: MetricsRow) -> tuple:
    return (
        m.design_id,
        m.method,
        m.n_reps,
        m.n_failed,
        m.failure_rate,
        m.coverage,
        m.coverage_se,
        m.mean_t,
        m.mean_t_se,
        m.sq_bias,
        m.sq_bias_se,
        m.variance,
        m.variance_se,
        m.mse,
        m.mse_se,
    )


def cmd_report(args) -> int:
    records = _read_records(args.records)
    groups: dict[tuple[str, str], list[ReplicationRecord]] = {}
    for rec in records:
        groups.setdefault((rec.design_id, rec.method), []).append(rec)

    nan = float("nan")
    metric_rows = []
    density_rows = []
    degenerate = []
    for key in sorted(groups):
        group = groups[key]
        try:
            metric_rows.append(_metrics_to_row(compute_metrics(group)))
        except DegenerateInputError:
            # Too few usable replications: report the failure rate, flag the
            # moment columns as empty.
            n_failed = sum(1 for r in group if r.failure)
            degenerate.append(key)
            metric_rows.append(
                (key[0], key[1], len(group), n_failed, n_failed / len(group))
                + (nan,) * 10
            )
            continue
        t_vals = np.array([r.t_stat for r in group if not r.failure])
        try:
            grid, dens = kernel_density(t_vals)
        except DegenerateInputError:
            continue
        density_rows.extend(
            (key[0], key[1], float(g), float(d)) for g, d in zip(grid, dens)
        )

    _write_csv(args.metrics, METRICS_HEADER, metric_rows)
    _write_csv(args.density, DENSITY_HEADER, density_rows)
    print(
        f"wrote {len(metric_rows)} metric rows to {args.metrics} and "
        f"{len(density_rows)} density rows to {args.density}"
    )
    for design_id, method in degenerate:
        print(
            f"warning: group ({design_id}, {method}) had too few usable "
            "replications; moment columns left empty",
            file=sys.stderr,
        )
    return 0


# ---------------------------------------------------------------- estimate


def _read_dataset(path: str, treatment: str, outcome: str):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read data file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"data file {path} is empty")
        names = [name.strip() for name in header]
        for needed in (treatment, outcome):
            if needed not in names:
                raise DataError(f"data file {path} has no column {needed!r}")
        if treatment == outcome:
            raise ConfigError("treatment and outcome columns must differ")
        raw_rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(names):
                raise DataError(
                    f"{path}:{line_no}: expected {len(names)} fields, got {len(row)}"
                )
            raw_rows.append(row)
    if not raw_rows:
        raise DataError(f"data file {path} contains no observations")
    try:
        values = np.array(raw_rows, dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"data file {path} has non-numeric entries: {exc}") from exc
    if not np.all(np.isfinite(values)):
        raise DataError(f"data file {path} contains non-finite entries")

    cols = {name: values[:, j] for j, name in enumerate(names)}
    covariate_names = [n for n in names if n not in (treatment, outcome)]
    if not covariate_names:
        raise DataError("data file has no covariate columns besides treatment/outcome")
    for name in names:
        if float(np.std(cols[name])) == 0.0:
            raise DataError(f"column {name!r} has zero variance")
    x = np.column_stack([cols[n] for n in covariate_names])
    return Dataset(x=x, d=cols[treatment], y=cols[outcome]), covariate_names


def cmd_estimate(args) -> int:
    data, _ = _read_dataset(args.data, args.treatment, args.outcome)
    methods = METHODS if args.method == "both" else (args.method,)
    config = EstimateConfig(
        methods=methods,
        k_folds=args.folds,
        level=args.level,
        l_extra=args.l_extra,
        penalties=None,
        seed=args.seed,
    )
    result = estimate(data, config)
    print(ESTIMATE_HEADER)
    for method in methods:
        est = result.estimates.get(method)
        if est is None:
            continue
        fields = (
            method,
            est.beta_hat,
            est.se,
            est.ci[0],
            est.ci[1],
            data.n,
            data.p,
            args.folds,
            args.seed,
        )
        print(",".join(_fmt(v) for v in fields))
    if result.failures:
        for method, tag in sorted(result.failures.items()):
            print(f"error: method {method} failed: {tag}", file=sys.stderr)
        return 4
    return 0


# ------------------------------------------------------------- ortho-check


def _check_line(name: str, order: int, value: float, threshold: float, upper: bool):
    ok = value <= threshold if upper else value >= threshold
    rel = "max<=" if upper else "min>="
    print(
        f"{name},order={order},value={value:.6e},{rel}{threshold:g},"
        f"{'PASS' if ok else 'FAIL'}"
    )
    return ok


def cmd_ortho_check(args) -> int:
    if not 2 <= args.p <= 12:
        raise ConfigError(f"p must lie in [2, 12] for the check, got {args.p}")
    if not 0.0 <= args.rho < 1.0:
        raise ConfigError(f"rho must lie in [0, 1), got {args.rho}")
    design = GaussianLinearDesign(
        sigma=toeplitz_sigma(args.p, args.rho),
        gamma0=make_gamma0(args.p, "approximate"),
        theta0=make_theta0(args.p),
    )
    rng = np.random.default_rng(args.seed)
    ok = True

    # The adjusted score: every eta-partial and every second directional
    # derivative must vanish at the truth.
    score_tl, eta0_tl = triple_score_function(design)
    g1 = max_gradient_fd(lambda e: score_tl(design.beta0, e), eta0_tl, h=1e-5)
    ok &= _check_line("triple_score", 1, g1, SCORE_TOL, upper=True)
    g2 = max_directional_derivative(
        lambda e: score_tl(design.beta0, e),
        eta0_tl,
        order=2,
        directions=args.directions,
        h=1e-4,
        rng=rng,
    )
    ok &= _check_line("triple_score", 2, g2, SCORE_TOL, upper=True)

    # The unadjusted score must visibly fail at second order (cross block of
    # the two regression nuisances), confirming the check has power.
    score_dl, eta0_dl = double_score_function(design)
    idx = np.arange(args.p, dtype=np.intp)
    cross = max_mixed_partial(
        lambda e: score_dl(design.beta0, e), eta0_dl, idx, idx + args.p, h=1e-4
    )
    ok &= _check_line("double_score_cross", 2, cross, BASELINE_MIN, upper=False)

    # Generic construction: lift the single-index system to order k and
    # certify all orders up to k.
    moments = GaussianSquaredLossMoments(design)
    system = single_index_system(squared_loss(), moments, args.p)
    eta0_si = np.concatenate([design.theta0, design.gamma0])
    lifted = lift(system, design.beta0, eta0_si, args.k, h=args.h)
    report = certify_orthogonality(
        lifted, design.beta0, directions=args.directions, h=args.h, rng=rng
    )
    for order in sorted(report):
        ok &= _check_line("lifted_single_index", order, report[order], SCORE_TOL, True)

    return 0 if ok else 4


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ortho-lasso",
        description="Cross-fitted lasso inference with inverse-Gram debiasing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo grid")
    sim.add_argument("--n", type=int, help="sample size (single-cell mode)")
    sim.add_argument("--p", type=int, help="number of controls (single-cell mode)")
    sim.add_argument("--rho", type=float, help="design correlation (single-cell mode)")
    sim.add_argument(
        "--regime",
        choices=("exact", "intermediate", "approximate"),
        help="treatment-coefficient sparsity regime (single-cell mode)",
    )
    sim.add_argument("--grid", help="JSON grid file (alternative to --n/--p/...)")
    sim.add_argument("--reps", type=int, help="replications per design")
    sim.add_argument("--seed", type=int, help="master seed (default 0)")
    sim.add_argument("--folds", type=int, default=5, help="cross-fitting folds")
    sim.add_argument(
        "--l-extra",
        type=int,
        default=0,
        help="extra inverse-Gram rows beyond the selected support",
    )
    sim.add_argument(
        "--jobs",
        type=int,
        default=None,
        help=f"worker processes (default: ${JOBS_ENV} or the CPU count)",
    )
    sim.add_argument("--out", default="records.csv", help="output records file")
    sim.add_argument(
        "--emit-data",
        default=None,
        metavar="PATH",
        help="also write the replication-0 dataset of the first design",
    )
    sim.add_argument(
        "--timing",
        action="store_true",
        help="record wall-clock runtime_ms (breaks byte-reproducibility)",
    )
    sim.set_defaults(func=cmd_simulate)

    rep = sub.add_parser("report", help="summarize a records file")
    rep.add_argument("--records", default="records.csv", help="input records file")
    rep.add_argument("--metrics", default="metrics.csv", help="output metrics file")
    rep.add_argument("--density", default="density.csv", help="output density file")
    rep.set_defaults(func=cmd_report)

    est = sub.add_parser("estimate", help="estimate from a CSV dataset")
    est.add_argument("--data", required=True, help="input CSV file")
    est.add_argument("--treatment", default="d", help="treatment column name")
    est.add_argument("--outcome", default="y", help="outcome column name")
    est.add_argument(
        "--method", choices=("double", "triple", "both"), default="both"
    )
    est.add_argument("--folds", type=int, default=5, help="cross-fitting folds")
    est.add_argument("--seed", type=int, default=0, help="fold-shuffle seed")
    est.add_argument("--level", type=float, default=0.95, help="confidence level")
    est.add_argument(
        "--l-extra",
        type=int,
        default=0,
        help="extra inverse-Gram rows beyond the selected support",
    )
    est.set_defaults(func=cmd_estimate)

    chk = sub.add_parser(
        "ortho-check", help="finite-difference orthogonality certification"
    )
    chk.add_argument("--p", type=int, default=4, help="number of controls (<= 12)")
    chk.add_argument("--rho", type=float, default=0.5, help="design correlation")
    chk.add_argument(
        "--k",
        type=int,
        choices=(1, 2),
        default=2,
        help="lift order for the generic construction",
    )
    chk.add_argument(
        "--h", type=float, default=None, help="finite-difference step override"
    )
    chk.add_argument(
        "--directions", type=int, default=20, help="random directions per order"
    )
    chk.add_argument("--seed", type=int, default=0, help="direction-sampling seed")
    chk.set_defaults(func=cmd_ortho_check)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if code is not None else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except OrthoLassoError as exc:  # pragma: no cover - defensive
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
