import pytest

from ribbonlim.config import GridSpec, RunConfig
from ribbonlim.validation import CHECK_COLUMNS, SUITES, run_suite, run_suites


@pytest.fixture
def config():
    """Provides a small RunConfig for the validation suites."""
    return RunConfig(samples=3, contexts=2, oracle_grid=201, grid=GridSpec(-2.0, 2.0, -2.0, 2.0, 9))


@pytest.mark.parametrize(
    "name", ["alphas", "density", "relaxation", "frames", "surface", "spontaneous"]
)
def test_suite_passes(config, name):
    """Tests that a validation suite passes on the reference configuration."""
    report = run_suite(name, config)
    assert report.name == name
    assert report.rows
    assert all(len(row) == len(report.columns) for row in report.rows)
    assert report.passed


def test_density_suite_covers_the_grid(config):
    """Tests that every grid point becomes one row."""
    report = run_suite("density", config)
    assert len(report.rows) == 81
    assert report.rows[0][:2] == (-2.0, -2.0)
    assert report.rows[-1][:2] == (2.0, 2.0)


def test_check_suites_share_columns(config):
    """Tests the layout of the check-list suites."""
    report = run_suite("frames", config)
    assert report.columns == CHECK_COLUMNS
    assert [row[0] for row in report.rows] == [
        "so3_drift",
        "helix_curvature",
        "helix_torsion",
        "circle_closure",
        "convergence_order",
    ]


def test_corrugation_suite_energy_gap(config):
    """Tests that the corrugation suite reports vanishing energy gaps."""
    report = run_suite("corrugation", config)
    assert [row[:2] for row in report.rows] == [
        ("wavy", 16),
        ("wavy", 32),
        ("wavy", 64),
        ("wavy", 128),
        ("wavy", 256),
        ("constant", 64),
        ("constant", 256),
    ]
    for row in report.rows:
        assert abs(row[4]) <= 1e-8 * max(1.0, row[3])
    for row in report.rows[5:]:
        assert abs(row[2] - 4.0) <= 0.08


def test_relaxation_suite_includes_the_fixed_points(config):
    """Tests the random rows and the five fixed oracle points."""
    report = run_suite("relaxation", config)
    assert [row[0] for row in report.rows] == [0, 1, 2] + [f"fixed{k}" for k in range(5)]
    for row in report.rows[3:]:
        assert -1e-6 <= row[5] - row[3] <= 0.5


def test_spontaneous_suite_size(config):
    """Tests that the suite draws the configured number of contexts."""
    report = run_suite("spontaneous", config)
    assert [row[0] for row in report.rows] == [0, 1]
    assert all(row[5] <= 1e-6 for row in report.rows)


def test_suites_are_independent_of_threads(config):
    """Tests that threads change scheduling only."""
    for name in ("alphas", "relaxation", "spontaneous"):
        assert run_suite(name, config, threads=1).rows == run_suite(name, config, threads=4).rows


def test_suites_follow_the_seed(config):
    """Tests that the generator is seeded from the configuration."""
    first = run_suite("alphas", config).rows
    assert run_suite("alphas", config).rows == first
    assert run_suite("alphas", config.replace(seed=1)).rows != first


def test_every_suite_is_registered():
    """Tests the suite names."""
    assert list(SUITES) == [
        "alphas",
        "density",
        "relaxation",
        "frames",
        "surface",
        "corrugation",
        "spontaneous",
    ]


def test_run_suites_writes_one_file_each(tmp_path, config):
    """Tests that reports go to <out>/<suite>.csv with a header and a verdict."""
    reports = run_suites(["alphas", "density"], config, str(tmp_path))
    assert [report.name for report in reports] == ["alphas", "density"]
    for name in ("alphas", "density"):
        lines = (tmp_path / f"{name}.csv").read_text().splitlines()
        assert lines[0] == f"# suite={name}"
        assert "# seed=0" in lines
        assert lines[-1] == "# passed=true"


def test_run_suites_to_stdout(capsys, config):
    """Tests that the path - writes the report to stdout."""
    run_suites(["density"], config)
    out = capsys.readouterr().out
    assert "mu,tau,qbar,closed,error\n" in out
    assert out.endswith("# passed=true\n")
