"""
End-to-end tests for the stdf-lab command line.

Critical behaviors tested:
1. Every subcommand writes its outputs and a manifest under --out
2. Reruns and manifest replays reproduce outputs byte for byte
3. Exit statuses follow the error class: usage 2, data 3, precondition 4
"""

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from stdf_lab import cli
from stdf_lab.cli import main


def _run(capsys, *argv):
    code = main(list(argv))
    printed = [line for line in capsys.readouterr().out.splitlines() if line]
    return code, [Path(line) for line in printed]


def _output(paths, suffix):
    return next(path for path in paths if path.name.endswith(suffix))


def _simulate(capsys, out, *extra):
    return _run(
        capsys,
        "simulate",
        "--model",
        "independence",
        "--d",
        "2",
        "--n",
        "100",
        "--seed",
        "7",
        "--out",
        str(out),
        *extra,
    )


class TestSimulate:
    """Test sample generation from the command line."""

    def test_writes_sample_and_manifest(self, capsys, tmp_path):
        code, paths = _simulate(capsys, tmp_path)
        assert code == 0
        sample, manifest = paths
        assert sample.name.startswith("simulate-")
        assert len(sample.read_text().splitlines()) == 100
        assert manifest.name.endswith(".manifest.json")
        payload = json.loads(manifest.read_text())
        assert payload["subcommand"] == "simulate"
        assert payload["seed"] == 7

    def test_rerun_is_byte_identical(self, capsys, tmp_path):
        _, (first, _) = _simulate(capsys, tmp_path / "a")
        _, (second, _) = _simulate(capsys, tmp_path / "b")
        assert first.name == second.name
        assert first.read_bytes() == second.read_bytes()

    def test_manifest_replay(self, capsys, tmp_path):
        _, (sample, manifest) = _simulate(
            capsys, tmp_path / "a", "--margins", "pareto(2)"
        )
        code, replayed = _run(
            capsys, "simulate", "--config", str(manifest), "--out", str(tmp_path / "b")
        )
        assert code == 0
        assert replayed[0].name == sample.name
        assert replayed[0].read_bytes() == sample.read_bytes()

    def test_missing_seed_is_usage_error(self, capsys, tmp_path):
        argv = ["simulate", "--model", "independence", "--d", "2", "--n", "10"]
        code = main(argv + ["--out", str(tmp_path)])
        assert code == 2

    def test_default_out_dir(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setattr(cli, "OUT_DIR", str(tmp_path))
        argv = ["simulate", "--model", "comonotone", "--d", "3", "--n", "5"]
        code, paths = _run(capsys, *argv, "--seed", "1")
        assert code == 0
        assert all(path.parent == tmp_path for path in paths)


class TestEstimate:
    """Test l_n tabulation from a CSV."""

    def test_comonotone_surface_is_max(self, capsys, tmp_path):
        column = np.arange(1.0, 51.0)
        data = tmp_path / "comonotone.csv"
        np.savetxt(data, np.column_stack([column, column]), delimiter=",", fmt="%.17g")

        argv = ["estimate", "--data", str(data), "--k", "5", "--T", "2"]
        code, paths = _run(capsys, *argv, "--out", str(tmp_path))
        assert code == 0
        surface = pd.read_csv(paths[0])
        assert len(surface) == 11 * 11
        expected = np.maximum(surface["x1"], surface["x2"])
        np.testing.assert_allclose(surface["l_n"], expected)

    def test_ties_are_data_error(self, capsys, tmp_path):
        data = tmp_path / "tied.csv"
        data.write_text("1,2\n1,3\n2,4\n")
        argv = ["estimate", "--data", str(data), "--k", "1", "--T", "1"]
        code = main(argv + ["--out", str(tmp_path)])
        assert code == 3

    def test_jitter_breaks_ties(self, capsys, tmp_path):
        data = tmp_path / "tied.csv"
        data.write_text("1,2\n1,3\n2,4\n")
        code, _ = _run(
            capsys,
            "estimate",
            "--data",
            str(data),
            "--k",
            "1",
            "--T",
            "1",
            "--jitter",
            "1e-9",
            "--seed",
            "3",
            "--out",
            str(tmp_path),
        )
        assert code == 0


class TestBound:
    """Test bound evaluation and precondition reporting."""

    def test_theorem2_single_line(self, capsys, tmp_path):
        code, paths = _run(
            capsys,
            "bound",
            "--kind",
            "theorem2",
            "--k",
            "100",
            "--d",
            "2",
            "--T",
            "4",
            "--delta",
            "0.05",
            "--out",
            str(tmp_path),
        )
        assert code == 0
        lines = paths[0].read_text().splitlines()
        assert len(lines) == 1
        kind, value = lines[0].split(",")
        assert kind == "theorem2"
        assert float(value) == pytest.approx(0.858, abs=1e-3)

    def test_precondition_violation_exit_status(self, capsys, caplog, tmp_path):
        with caplog.at_level(logging.ERROR):
            code = main(
                [
                    "bound",
                    "--kind",
                    "theorem2",
                    "--k",
                    "100",
                    "--d",
                    "1",
                    "--T",
                    "3",
                    "--delta",
                    "0.05",
                    "--out",
                    str(tmp_path),
                ]
            )
        assert code == 4
        assert "violated" in caplog.text

    def test_compare_table(self, capsys, tmp_path):
        code, paths = _run(
            capsys,
            "bound",
            "--kind",
            "compare",
            "--p",
            "0.01",
            "--V",
            "2",
            "--delta",
            "0.05",
            "--ns",
            "1000,10000",
            "--out",
            str(tmp_path),
        )
        assert code == 0
        frame = pd.read_csv(paths[0])
        assert frame["n"].tolist() == [1000, 10000]
        assert np.all(frame["ratio_remark1_theorem1"] > 1)

    def test_unknown_kind_is_usage_error(self, capsys, tmp_path):
        assert main(["bound", "--kind", "hoeffding", "--out", str(tmp_path)]) == 2


class TestExperiments:
    """Smoke runs of the experiment subcommands."""

    def test_converge(self, capsys, tmp_path):
        code, paths = _run(
            capsys,
            "converge",
            "--model",
            "comonotone",
            "--d",
            "2",
            "--n",
            "1000",
            "--k-schedule",
            "10,20",
            "--T",
            "2",
            "--trials",
            "3",
            "--seed",
            "5",
            "--events",
            "2",
            "--workers",
            "1",
            "--out",
            str(tmp_path),
        )
        assert code == 0
        names = [path.name for path in paths]
        assert any(name.endswith(".summary.csv") for name in names)
        assert any(name.endswith(".events.csv") for name in names)
        summary = pd.read_csv(_output(paths, ".summary.csv"))
        assert summary["k"].tolist() == [10, 20]

    def test_converge_with_pilot_writes_calibrated_coverage(self, capsys, tmp_path):
        code, paths = _run(
            capsys,
            "converge",
            "--model",
            "comonotone",
            "--d",
            "2",
            "--n",
            "1000",
            "--k-schedule",
            "10,20",
            "--T",
            "4",
            "--trials",
            "10",
            "--seed",
            "5",
            "--pilot-seed",
            "6",
            "--pilot-trials",
            "20",
            "--pilot-delta",
            "0.05",
            "--out",
            str(tmp_path),
        )
        assert code == 0
        coverage = pd.read_csv(_output(paths, ".coverage.csv"))
        assert coverage["k"].tolist() == [10, 20]
        lemma = pd.read_csv(_output(paths, ".lemma2.summary.csv"))
        assert lemma["k"].tolist() == [10, 20]
        assert lemma["coverage"].between(0, 1).all()
        assert (lemma["constant"] > 0).all()

    def test_rademacher(self, capsys, tmp_path):
        code, paths = _run(
            capsys,
            "rademacher",
            "--model",
            "independence",
            "--d",
            "2",
            "--ns",
            "200,400",
            "--scale",
            "0.1",
            "--T",
            "1",
            "--trials",
            "3",
            "--pairs",
            "50",
            "--seed",
            "2",
            "--workers",
            "1",
            "--out",
            str(tmp_path),
        )
        assert code == 0
        summary = pd.read_csv(_output(paths, ".summary.csv"))
        assert summary["k"].tolist() == [20, 40]
        assert "q" in summary.columns

    def test_rademacher_three_dimensions_need_grid(self, capsys, tmp_path):
        code = main(
            [
                "rademacher",
                "--model",
                "independence",
                "--d",
                "3",
                "--n",
                "100",
                "--k",
                "10",
                "--T",
                "1",
                "--trials",
                "2",
                "--seed",
                "1",
                "--out",
                str(tmp_path),
            ]
        )
        assert code == 2

    def test_classify(self, capsys, tmp_path):
        code, paths = _run(
            capsys,
            "classify",
            "--model",
            "independence",
            "--d",
            "2",
            "--schedule",
            "500:0.1,1000:0.1",
            "--trials",
            "2",
            "--norm",
            "linf",
            "--family-size",
            "4",
            "--appendix-b",
            "2",
            "--seed",
            "3",
            "--workers",
            "1",
            "--out",
            str(tmp_path),
        )
        assert code == 0
        names = [path.name for path in paths]
        assert any(name.endswith(".family.json") for name in names)
        appendix = pd.read_csv(_output(paths, ".appendix_b.csv"))
        assert appendix["holds"].all()

    def test_classify_reference_draws_default(self):
        config = {
            "model": "independence",
            "d": 2,
            "schedule": "500:0.1",
            "trials": 2,
            "seed": 3,
        }
        assert cli._classification_config(config).reference_draws == 10**7
        config["reference_draws"] = 1000
        assert cli._classification_config(config).reference_draws == 1000


class TestParser:
    """Test version and usage handling."""

    def test_version(self, capsys):
        assert main(["--version"]) == 0
        assert capsys.readouterr().out.strip() == cli.get_version()

    def test_unknown_subcommand(self, capsys):
        assert main(["fit"]) == 2

    def test_malformed_config_names_line(self, capsys, caplog, tmp_path):
        config = tmp_path / "config.json"
        config.write_text('{\n  "n": 10,\n  oops\n}\n')
        with caplog.at_level(logging.ERROR):
            code = main(["simulate", "--config", str(config), "--out", str(tmp_path)])
        assert code == 2
        assert "line 3" in caplog.text
