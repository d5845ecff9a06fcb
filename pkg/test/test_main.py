import math
from unittest import mock

import numpy as np
import pytest

from ribbonlim.__main__ import build_parser, resolve_config, run
from ribbonlim.errors import BracketError, InputError
from ribbonlim.geometry import builtin_chart
from ribbonlim.parser import Shorthand
from ribbonlim.validation import SuiteReport


def data_lines(path):
    return [line for line in path.read_text().splitlines() if not line.startswith("#")]


def write_wavy_profile(path, nodes=64):
    """mu = 1 + sin(2 pi t) / 2 and tau = 2 on the default rectangle."""
    chart = builtin_chart("rectangle", {}, 1.0, nodes)
    lines = ["t,mu,tau"]
    for t in chart.t:
        mu = 1.0 + 0.5 * math.sin(2.0 * math.pi * t)
        lines.append(f"{float(t)!r},{mu!r},2.0")
    path.write_text("\n".join(lines) + "\n")


class TestResolveConfig:
    """Unit tests for merging the configuration file with flags."""

    def test_flags_override_the_file(self, tmp_path):
        """Tests that command line flags win over the configuration file."""
        path = tmp_path / "run.json"
        path.write_text('{"rigidity": "isotropic(1, 1)", "nodes": 8, "length": 2}')
        args = build_parser().parse_args(
            ["spontaneous", "--config", str(path), "--nodes", "16", "--orthotropic", "1", "0", "1", "0.5"]
        )
        config = resolve_config(args)
        assert config.rigidity == Shorthand("orthotropic", (1.0, 0.0, 1.0, 0.5))
        assert config.nodes == 16
        assert config.length == 2.0
        assert config.base_dir == str(tmp_path)

    def test_density_table_grid(self):
        """Tests that the grid flags replace the grid group."""
        args = build_parser().parse_args(["density-table", "--mu-range", "0", "1", "--points", "3"])
        grid = resolve_config(args).grid
        assert (grid.mu_min, grid.mu_max, grid.points) == (0.0, 1.0, 3)
        assert (grid.tau_min, grid.tau_max) == (-3.0, 3.0)

    def test_rigidity_flags_are_exclusive(self):
        """Tests that two rigidity flags are rejected."""
        with pytest.raises(InputError, match="not allowed with argument"):
            build_parser().parse_args(["alphas", "--isotropic", "1", "1", "--rigidity", "sadowsky"])


class TestAlphas:
    """Tests of the alphas subcommand."""

    def test_isotropic(self, capsys):
        """Tests the constants of the isotropic rigidity (1, 1)."""
        assert run(["alphas", "--isotropic", "1", "1"]) == 0
        assert capsys.readouterr().out == "alpha_plus 2.000000000000 alpha_minus 6.000000000000\n"

    def test_default_is_sadowsky(self, capsys):
        """Tests that both constants of the Sadowsky material are 2."""
        assert run(["alphas"]) == 0
        words = capsys.readouterr().out.split()
        assert float(words[1]) == pytest.approx(2.0, abs=1e-9)
        assert float(words[3]) == pytest.approx(2.0, abs=1e-9)

    def test_invalid_rigidity_is_an_input_error(self, capsys):
        """Tests that invalid input exits with status 1."""
        assert run(["alphas", "--isotropic", "-1", "0"]) == 1
        assert "error: config key 'rigidity'" in capsys.readouterr().err

    def test_bad_shorthand_is_an_input_error(self, capsys):
        """Tests that a syntax error exits with status 1."""
        assert run(["alphas", "--rigidity", "isotropic(1,"]) == 1
        assert "cannot parse" in capsys.readouterr().err

    @mock.patch("ribbonlim.__main__.build_rigidity")
    def test_numerical_failure(self, mock_build_rigidity, capsys):
        """Tests that numerical failures exit with status 2."""
        mock_build_rigidity.side_effect = BracketError("no sign change")
        assert run(["alphas"]) == 2
        assert "error: no sign change" in capsys.readouterr().err

    def test_unknown_command(self, capsys):
        """Tests that usage errors exit with status 1."""
        assert run(["shape"]) == 1
        assert "error: cli:" in capsys.readouterr().err


class TestDensityTable:
    """Tests of the density-table subcommand."""

    def test_sadowsky_rows(self, tmp_path):
        """Tests the grid rows of the Sadowsky density."""
        path = tmp_path / "qbar.csv"
        code = run(
            [
                "density-table",
                "--mu-range", "0", "1",
                "--tau-range", "0", "1",
                "--points", "2",
                "--out", str(path),
            ]
        )
        assert code == 0
        lines = data_lines(path)
        assert lines[0] == "mu,tau,qbar,gamma_star"
        assert lines[1] == "0,0,0,0"
        assert "1,0,1,0" in lines[1:]
        assert len(lines) == 5
        assert path.read_text().startswith("# rigidity=sadowsky\n")


class TestSpontaneous:
    """Tests of the spontaneous subcommand."""

    def test_zero_natural_curvature(self, tmp_path):
        """Tests that a ribbon without natural curvature stays flat."""
        profile = tmp_path / "profile.csv"
        centerline = tmp_path / "centerline.csv"
        code = run(
            ["spontaneous", "--nodes", "8", "--out", str(profile), "--emit-centerline", str(centerline)]
        )
        assert code == 0
        rows = data_lines(profile)
        assert rows[0] == "t,mu,tau,gamma_star,qbar"
        assert len(rows) == 10
        assert all(row.endswith(",0,0,0,0") for row in rows[1:])
        lines = data_lines(centerline)
        assert lines[0].startswith("t,y1,y2,y3,d1_1")
        last = [float(x) for x in lines[-1].split(",")]
        assert last[1:4] == pytest.approx([1.0, 0.0, 0.0])

    def test_twisted_natural_curvature(self, tmp_path):
        """Tests that a twisted target gives a nonzero profile."""
        profile = tmp_path / "profile.csv"
        code = run(
            ["spontaneous", "--natural", "constant(0, 1, 0)", "--nodes", "4", "--out", str(profile)]
        )
        assert code == 0
        data = np.genfromtxt(data_lines(profile), delimiter=",", names=True)
        assert len(data) == 5
        assert np.all(data["qbar"] >= 0.0)
        assert np.any(data["mu"] != 0.0) or np.any(data["tau"] != 0.0)


class TestReconstruct:
    """Tests of the reconstruct subcommand."""

    def test_mesh_and_flat_points(self, tmp_path):
        """Tests that the centerline, mesh and flat points are written."""
        profile = tmp_path / "profile.csv"
        write_wavy_profile(profile)
        out = tmp_path / "centerline.csv"
        mesh = tmp_path / "strip.obj"
        flat = tmp_path / "flat.csv"
        code = run(
            [
                "reconstruct",
                "--profile", str(profile),
                "--out", str(out),
                "--mesh", str(mesh),
                "--flat", str(flat),
                "--cells", "8",
            ]
        )
        assert code == 0
        assert len(data_lines(out)) == 66
        vertices = [line for line in mesh.read_text().splitlines() if line.startswith("v ")]
        assert len(vertices) == 65 * 9
        assert data_lines(flat)[0] == "t,s,Phi1,Phi2"
        assert len(data_lines(flat)) == 65 * 9 + 1

    def test_missing_profile(self, tmp_path, capsys):
        """Tests that an unreadable profile exits with status 1."""
        assert run(["reconstruct", "--profile", str(tmp_path / "none.csv")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_profile_on_another_grid(self, tmp_path):
        """Tests that the profile grid must match the chart."""
        profile = tmp_path / "profile.csv"
        write_wavy_profile(profile, nodes=32)
        assert run(["reconstruct", "--profile", str(profile), "--out", str(tmp_path / "c.csv")]) == 1


class TestCorrugate:
    """Tests of the corrugate subcommand."""

    def test_cells(self, tmp_path):
        """Tests one row per cell and the energy comments."""
        profile = tmp_path / "profile.csv"
        write_wavy_profile(profile)
        out = tmp_path / "cells.csv"
        assert run(["corrugate", "--profile", str(profile), "--cells", "8", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        rows = data_lines(out)
        assert rows[0] == "cell,t_start,t_end,theta,a1,a2,a3,b1,b2,b3"
        assert [row.split(",")[0] for row in rows[1:]] == [str(k) for k in range(8)]
        comments = dict(line[2:].split("=", 1) for line in lines if line.startswith("# mean_") or line.startswith("# energy_gap"))
        assert abs(float(comments["energy_gap"])) <= 1e-8 * float(comments["mean_qbar"])

    def test_odd_cells(self, capsys):
        """Tests that an odd cell count is rejected."""
        assert run(["corrugate", "--cells", "7"]) == 1
        assert "config key 'cells'" in capsys.readouterr().err


class TestValidate:
    """Tests of the validate subcommand."""

    def test_writes_reports(self, tmp_path):
        """Tests that a suite writes its report into the output directory."""
        out = tmp_path / "reports"
        assert run(["validate", "alphas", "density", "--out", str(out)]) == 0
        assert (out / "alphas.csv").exists()
        assert (out / "density.csv").read_text().splitlines()[-1] == "# passed=true"

    def test_independent_of_threads(self, tmp_path):
        """Tests that the reports do not depend on the thread count."""
        single, pooled = tmp_path / "single", tmp_path / "pooled"
        assert run(["validate", "alphas", "--threads", "1", "--out", str(single)]) == 0
        assert run(["validate", "alphas", "--threads", "4", "--out", str(pooled)]) == 0
        assert (single / "alphas.csv").read_text() == (pooled / "alphas.csv").read_text()

    def test_all_is_independent_of_threads(self, tmp_path, capsys):
        """Tests that every report of --all is byte identical for 1 and 4 threads."""
        path = tmp_path / "small.json"
        path.write_text('{"samples": 3, "contexts": 2, "oracle_grid": 101, "grid": {"points": 5}}')
        outputs = []
        for threads in ("1", "4"):
            code = run(["validate", "--all", "--seed", "7", "--config", str(path), "--threads", threads])
            outputs.append((code, capsys.readouterr().out))
        assert outputs[0] == outputs[1]
        assert outputs[0][1].count("# passed=") == 7

    @pytest.mark.parametrize("argv", [["validate"], ["validate", "shapes"]])
    def test_suite_names(self, argv, capsys):
        """Tests that missing or unknown suites exit with status 1."""
        assert run(argv) == 1
        assert "validation suite" in capsys.readouterr().err

    @mock.patch("ribbonlim.__main__.run_suites")
    def test_failed_suite(self, mock_run_suites, capsys):
        """Tests that a failed suite exits with status 2."""
        mock_run_suites.return_value = [SuiteReport("frames", ("check",), [], False)]
        assert run(["validate", "frames"]) == 2
        assert "suites failed: frames" in capsys.readouterr().err

    def test_all(self, mocker):
        """Tests that --all runs every suite in order."""
        mock_run_suites = mocker.patch("ribbonlim.__main__.run_suites", return_value=[])
        assert run(["validate", "--all"]) == 0
        names = mock_run_suites.call_args.args[0]
        assert names == [
            "alphas",
            "density",
            "relaxation",
            "frames",
            "surface",
            "corrugation",
            "spontaneous",
        ]
