"""End-to-end tests of the command-line interface, driven through ``main``.

Each subcommand is exercised against temporary files; outputs are compared
byte-for-byte where reproducibility is part of the contract. Exit codes:
0 success, 2 usage/configuration, 3 input data, 4 numerical failure.
"""

import json

import numpy as np
import pytest

from ortho_lasso.cli import (
    DENSITY_HEADER,
    ESTIMATE_HEADER,
    METRICS_HEADER,
    RECORDS_HEADER,
    main,
)

SINGLE_CELL = [
    "--n", "60", "--p", "6", "--rho", "0", "--regime", "exact",
]


def run_simulate(tmp_path, name="records.csv", reps="10", extra=()):
    out = tmp_path / name
    code = main(
        ["simulate", *SINGLE_CELL, "--reps", reps, "--jobs", "1", "--out", str(out)]
        + list(extra)
    )
    return code, out


class TestSimulate:
    def test_single_cell_records(self, tmp_path, capsys):
        code, out = run_simulate(tmp_path)
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == RECORDS_HEADER
        assert len(lines) == 1 + 10 * 2  # header + reps x methods
        assert "wrote 20 records (1 designs" in capsys.readouterr().out
        first = lines[1].split(",")
        assert first[0] == "n60_p6_rho0_exact"
        assert first[1:5] == ["60", "6", "0", "exact"]
        assert first[6] == "double"

    def test_byte_identical_reruns(self, tmp_path):
        _, first = run_simulate(tmp_path, "a.csv")
        _, second = run_simulate(tmp_path, "b.csv")
        assert first.read_bytes() == second.read_bytes()

    def test_grid_file(self, tmp_path):
        grid = tmp_path / "grid.json"
        grid.write_text(
            json.dumps(
                {
                    "reps": 2,
                    "master_seed": 1,
                    "designs": [
                        {"n": 60, "p": 6, "rho": 0.0, "regime": "exact"},
                        {"n": 60, "p": 6, "rho": 0.4, "regime": "intermediate"},
                    ],
                }
            )
        )
        out = tmp_path / "records.csv"
        code = main(
            ["simulate", "--grid", str(grid), "--jobs", "1", "--out", str(out)]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 1 + 2 * 2 * 2
        ids = {line.split(",")[0] for line in lines[1:]}
        assert ids == {"n60_p6_rho0_exact", "n60_p6_rho0.4_intermediate"}

    def test_grid_conflicts_with_cell_flags(self, tmp_path):
        grid = tmp_path / "grid.json"
        grid.write_text("[]")
        code = main(
            ["simulate", "--grid", str(grid), "--n", "60", "--out", "x.csv"]
        )
        assert code == 2

    def test_grid_file_problems(self, tmp_path):
        out = str(tmp_path / "r.csv")
        assert main(["simulate", "--grid", str(tmp_path / "nope.json"), "--out", out]) == 3
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["simulate", "--grid", str(bad), "--out", out]) == 3
        empty = tmp_path / "empty.json"
        empty.write_text("[]")
        assert main(["simulate", "--grid", str(empty), "--out", out]) == 2
        missing_key = tmp_path / "missing.json"
        missing_key.write_text(json.dumps([{"n": 60, "p": 6}]))
        assert main(["simulate", "--grid", str(missing_key), "--out", out]) == 3
        dup = tmp_path / "dup.json"
        dup.write_text(
            json.dumps(
                [
                    {"n": 60, "p": 6, "rho": 0.0, "regime": "exact"},
                    {"n": 60, "p": 6, "rho": 0.0, "regime": "exact"},
                ]
            )
        )
        assert main(["simulate", "--grid", str(dup), "--out", out]) == 2

    def test_incomplete_cell_flags(self, tmp_path):
        code = main(["simulate", "--n", "60", "--out", str(tmp_path / "r.csv")])
        assert code == 2

    def test_invalid_reps(self, tmp_path):
        code, _ = run_simulate(tmp_path, reps="0")
        assert code == 2

    def test_jobs_env_variable(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ORTHO_LASSO_JOBS", "2")
        out_env = tmp_path / "env.csv"
        code = main(
            ["simulate", *SINGLE_CELL, "--reps", "2", "--out", str(out_env)]
        )
        assert code == 0
        out_serial = tmp_path / "serial.csv"
        main(
            ["simulate", *SINGLE_CELL, "--reps", "2", "--jobs", "1",
             "--out", str(out_serial)]
        )
        assert out_env.read_bytes() == out_serial.read_bytes()
        monkeypatch.setenv("ORTHO_LASSO_JOBS", "abc")
        assert main(["simulate", *SINGLE_CELL, "--reps", "2", "--out", str(out_env)]) == 2


class TestReport:
    def test_metrics_and_density(self, tmp_path, capsys):
        _, records = run_simulate(tmp_path)
        metrics = tmp_path / "metrics.csv"
        density = tmp_path / "density.csv"
        code = main(
            ["report", "--records", str(records), "--metrics", str(metrics),
             "--density", str(density)]
        )
        assert code == 0
        mlines = metrics.read_text().splitlines()
        assert mlines[0] == METRICS_HEADER
        assert len(mlines) == 1 + 2  # one row per method
        dlines = density.read_text().splitlines()
        assert dlines[0] == DENSITY_HEADER
        assert len(dlines) == 1 + 512 * 2
        assert "wrote 2 metric rows" in capsys.readouterr().out

    def test_idempotent_bytes(self, tmp_path):
        _, records = run_simulate(tmp_path)
        paths = {}
        for tag in ("one", "two"):
            m = tmp_path / f"m_{tag}.csv"
            d = tmp_path / f"d_{tag}.csv"
            main(["report", "--records", str(records), "--metrics", str(m),
                  "--density", str(d)])
            paths[tag] = (m.read_bytes(), d.read_bytes())
        assert paths["one"] == paths["two"]

    def test_all_failed_group(self, tmp_path, capsys):
        records = tmp_path / "records.csv"
        nanrow = "nan,nan,nan,nan,nan"
        records.write_text(
            RECORDS_HEADER + "\n"
            + f"g,60,6,0,exact,0,triple,{nanrow},0,ConvergenceError\n"
            + f"g,60,6,0,exact,1,triple,{nanrow},0,ConvergenceError\n"
        )
        metrics = tmp_path / "metrics.csv"
        density = tmp_path / "density.csv"
        code = main(
            ["report", "--records", str(records), "--metrics", str(metrics),
             "--density", str(density)]
        )
        assert code == 0
        captured = capsys.readouterr()
        assert "too few usable replications" in captured.err
        mlines = metrics.read_text().splitlines()
        assert len(mlines) == 2
        fields = mlines[1].split(",")
        assert fields[:5] == ["g", "triple", "2", "2", "1"]
        assert fields[5:] == ["nan"] * 10
        assert density.read_text().splitlines() == [DENSITY_HEADER]

    def test_input_problems(self, tmp_path):
        assert main(["report", "--records", str(tmp_path / "nope.csv")]) == 3
        short = tmp_path / "short.csv"
        short.write_text("design_id,method\n")
        assert main(["report", "--records", str(short)]) == 3
        headeronly = tmp_path / "empty.csv"
        headeronly.write_text(RECORDS_HEADER + "\n")
        assert main(["report", "--records", str(headeronly)]) == 3
        malformed = tmp_path / "mal.csv"
        malformed.write_text(
            RECORDS_HEADER + "\n" + "g,60,6,0,exact,0,triple,oops,1,1,1,1,0,\n"
        )
        assert main(["report", "--records", str(malformed)]) == 3


def write_dataset(tmp_path, name="data.csv", n=300, p=40, seed=0):
    """Emit a replication-0 dataset through the CLI itself."""
    data = tmp_path / name
    code = main(
        ["simulate", "--n", str(n), "--p", str(p), "--rho", "0",
         "--regime", "exact", "--reps", "1", "--jobs", "1",
         "--out", str(tmp_path / "_records.csv"), "--emit-data", str(data)]
    )
    assert code == 0
    return data


class TestEstimate:
    def test_recovers_coefficient(self, tmp_path, capsys):
        data = write_dataset(tmp_path)
        capsys.readouterr()  # drop the simulate summary line
        code = main(["estimate", "--data", str(data)])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == ESTIMATE_HEADER
        assert len(lines) == 3
        for line in lines[1:]:
            fields = line.split(",")
            beta, se, lo, hi = map(float, fields[1:5])
            assert abs(beta - 1.0) <= 5.0 * se
            assert lo < beta < hi
            assert fields[5:] == ["300", "40", "5", "0"]
        assert lines[1].startswith("double,")
        assert lines[2].startswith("triple,")

    def test_deterministic_stdout(self, tmp_path, capsys):
        data = write_dataset(tmp_path, n=120, p=10)
        capsys.readouterr()
        main(["estimate", "--data", str(data)])
        first = capsys.readouterr().out
        main(["estimate", "--data", str(data)])
        assert capsys.readouterr().out == first

    def test_l_extra_zero_matches_default(self, tmp_path, capsys):
        data = write_dataset(tmp_path, n=120, p=10)
        capsys.readouterr()
        main(["estimate", "--data", str(data)])
        default = capsys.readouterr().out
        main(["estimate", "--data", str(data), "--l-extra", "0"])
        assert capsys.readouterr().out == default

    def test_single_method(self, tmp_path, capsys):
        data = write_dataset(tmp_path, n=120, p=10)
        capsys.readouterr()
        code = main(["estimate", "--data", str(data), "--method", "double"])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 2
        assert lines[1].startswith("double,")

    def test_zero_variance_column(self, tmp_path, capsys):
        data = write_dataset(tmp_path, n=60, p=4)
        lines = data.read_text().splitlines()
        header = lines[0] + ",x0005"
        rows = [line + ",7" for line in lines[1:]]
        bad = tmp_path / "bad.csv"
        bad.write_text("\n".join([header] + rows) + "\n")
        code = main(["estimate", "--data", str(bad)])
        assert code == 3
        assert "'x0005' has zero variance" in capsys.readouterr().err

    def test_input_problems(self, tmp_path):
        assert main(["estimate", "--data", str(tmp_path / "nope.csv")]) == 3
        data = write_dataset(tmp_path, n=60, p=4)
        assert main(["estimate", "--data", str(data), "--treatment", "y"]) == 2
        assert main(["estimate", "--data", str(data), "--outcome", "zzz"]) == 3
        onlyyd = tmp_path / "narrow.csv"
        onlyyd.write_text("y,d\n1.0,2.0\n2.0,1.0\n")
        assert main(["estimate", "--data", str(onlyyd)]) == 3
        text = tmp_path / "text.csv"
        text.write_text("y,d,x0001\n1.0,2.0,apple\n2.0,1.0,3.0\n")
        assert main(["estimate", "--data", str(text)]) == 3


class TestOrthoCheck:
    def test_default_run_passes(self, capsys):
        code = main(["ortho-check"])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 5
        assert all(line.endswith("PASS") for line in lines)
        names = [line.split(",")[0] for line in lines]
        assert names == [
            "triple_score",
            "triple_score",
            "double_score_cross",
            "lifted_single_index",
            "lifted_single_index",
        ]

    def test_first_order_lift(self, capsys):
        code = main(["ortho-check", "--k", "1", "--p", "3", "--rho", "0.2"])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 4
        assert all(line.endswith("PASS") for line in lines)

    def test_invalid_lift_order_is_usage_error(self, capsys):
        assert main(["ortho-check", "--k", "0"]) == 2
        assert main(["ortho-check", "--k", "3"]) == 2

    def test_dimension_bounds(self):
        assert main(["ortho-check", "--p", "1"]) == 2
        assert main(["ortho-check", "--p", "13"]) == 2
        assert main(["ortho-check", "--rho", "1.0"]) == 2


class TestParser:
    def test_no_subcommand(self):
        assert main([]) == 2

    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) == 2
