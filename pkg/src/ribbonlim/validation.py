import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from ribbonlim.config import RunConfig
from ribbonlim.frames import FramePath, Profile, adapted_coefficients, frenet, integrate_frame
from ribbonlim.geometry import NaturalCurvature, ReferenceChart, builtin_chart, uniform_grid
from ribbonlim.parallel import parallel_map
from ribbonlim.quadratic_forms import Rigidity, SymMat2, orthotropic_alphas
from ribbonlim.reduced_density import DensityContext, qbar, sadowsky_corrected
from ribbonlim.relaxation import (
    RelaxationProblem,
    brute_force_biconjugate,
    relaxed_integrand,
    two_point_decomposition,
)
from ribbonlim.report import CsvReport
from ribbonlim.surface import RankOneField, RibbonMesh, corrugate, ruled_surface, width_bound
from ribbonlim.variational import pointwise_minimum, search_radius

logger = logging.getLogger(__name__)

CHECK_COLUMNS = ("check", "value", "tolerance", "passed")


@dataclass(frozen=True)
class SuiteReport:
    name: str
    columns: tuple[str, ...]
    rows: list[tuple[object, ...]]
    passed: bool


def _check(name: str, value: float, tolerance: float, passed: bool) -> tuple[object, ...]:
    return (name, value, tolerance, passed)


def _checks(name: str, rows: list[tuple[object, ...]]) -> SuiteReport:
    return SuiteReport(name, CHECK_COLUMNS, rows, all(bool(row[3]) for row in rows))


def random_orthotropic(rng: np.random.Generator) -> tuple[float, float, float, float]:
    k11, k22 = rng.uniform(0.5, 3.0, size=2)
    k12 = rng.uniform(-0.9, 0.9) * math.sqrt(k11 * k22)
    k33 = rng.uniform(0.2, 2.0)
    return float(k11), float(k12), float(k22), float(k33)


def random_rigidity(rng: np.random.Generator) -> Rigidity:
    factor = rng.normal(scale=0.7, size=(3, 3))
    return Rigidity(factor @ factor.T + 0.5 * np.eye(3))


def alphas_suite(config: RunConfig, rng: np.random.Generator, threads: int | None) -> SuiteReport:
    params = [random_orthotropic(rng) for _ in range(config.samples)]

    def row(index: int) -> tuple[object, ...]:
        k = params[index]
        plus, minus = Rigidity.orthotropic(*k).alphas
        closed_plus, closed_minus = orthotropic_alphas(*k)
        error = max(abs(plus - closed_plus), abs(minus - closed_minus))
        return (index, *k, plus, minus, closed_plus, closed_minus, error)

    rows = parallel_map(row, range(len(params)), threads)
    columns = ("sample", "K11", "K12", "K22", "K33", "alpha_plus", "alpha_minus", "closed_plus", "closed_minus", "error")
    return SuiteReport("alphas", columns, rows, all(float(r[-1]) <= 1e-9 for r in rows))  # type: ignore[arg-type]


def density_suite(config: RunConfig, rng: np.random.Generator, threads: int | None) -> SuiteReport:
    ctx = DensityContext.build(Rigidity.orthotropic(1.0, 0.0, 1.0, 0.5))
    mu_axis, tau_axis = config.grid.axes()
    mu, tau = np.meshgrid(mu_axis, tau_axis, indexing="ij")
    values, _ = qbar(ctx, mu, tau)
    closed = np.asarray(sadowsky_corrected(mu, tau))
    errors = np.abs(np.asarray(values) - closed)
    rows = [
        (float(a), float(b), float(v), float(c), float(e))
        for a, b, v, c, e in zip(mu.ravel(), tau.ravel(), np.ravel(values), closed.ravel(), errors.ravel())
    ]
    return SuiteReport("density", ("mu", "tau", "qbar", "closed", "error"), rows, bool(errors.max() <= 1e-8))


# fixed points of the Sadowsky oracle refinement, z = 0
ORACLE_POINTS = (
    (1.0, 1.0, 0.0),
    (0.5, -0.5, 1.0),
    (0.2, 0.7, -0.4),
    (0.0, 0.0, 1.0),
    (-0.6, 0.4, 0.3),
)
# nested grids, the interval count doubles
ORACLE_REFINEMENT = (17, 33, 65)


def relaxation_suite(config: RunConfig, rng: np.random.Generator, threads: int | None) -> SuiteReport:
    cases = []
    for _ in range(config.samples):
        rigidity = random_rigidity(rng)
        z = float(rng.uniform(-2.0, 2.0))
        m = rng.uniform(-1.5, 1.5, size=3)
        cases.append((RelaxationProblem(rigidity, z), m))

    def row(index: int) -> tuple[object, ...]:
        problem, m = cases[index]
        formula = float(relaxed_integrand(problem, m))
        split = two_point_decomposition(problem, m)
        oracle = brute_force_biconjugate(problem, m, config.oracle_radius, config.oracle_n)
        det = float(m[0] * m[1] - 0.25 * m[2] * m[2])
        rel_err = abs(split.value - formula) / max(abs(formula), 1e-300)
        return (index, det, problem.z, formula, split.value, oracle, rel_err)

    rows = parallel_map(row, range(len(cases)), threads)
    passed = all(
        float(r[6]) <= 1e-8 and float(r[5]) >= float(r[3]) - 1e-6  # type: ignore[arg-type]
        for r in rows
    )

    sadowsky = RelaxationProblem(Rigidity.orthotropic(1.0, 0.0, 1.0, 0.5), 0.0)

    def fixed_row(index: int) -> tuple[tuple[object, ...], bool]:
        m = np.array(ORACLE_POINTS[index])
        formula = float(relaxed_integrand(sadowsky, m))
        split = two_point_decomposition(sadowsky, m)
        errors = [
            brute_force_biconjugate(sadowsky, m, config.oracle_radius, n) - formula
            for n in ORACLE_REFINEMENT
        ]
        oracle = brute_force_biconjugate(sadowsky, m, config.oracle_radius, 64)
        logger.debug("oracle errors at fixed point %d: %s", index, errors)
        decreasing = all(fine <= coarse + 1e-7 for coarse, fine in zip(errors, errors[1:]))
        close = -1e-6 <= oracle - formula <= 0.5
        rel_err = abs(split.value - formula) / formula
        det = float(m[0] * m[1] - 0.25 * m[2] * m[2])
        return (f"fixed{index}", det, 0.0, formula, split.value, oracle, rel_err), decreasing and close

    fixed = parallel_map(fixed_row, range(len(ORACLE_POINTS)), threads)
    rows.extend(r for r, _ in fixed)
    passed = passed and all(ok and float(r[6]) <= 1e-8 for r, ok in fixed)  # type: ignore[arg-type]
    columns = ("seed", "detm", "z", "formula", "decomposition", "oracle", "rel_err")
    return SuiteReport("relaxation", columns, rows, passed)


def _endpoint_frame(intervals: int, length: float = 2.0) -> NDArray[np.float64]:
    t = uniform_grid(length, intervals)
    path = integrate_frame(0.3 * np.sin(t), 1.0 + 0.5 * np.cos(t), np.full_like(t, 0.7), t)
    return path.rotations[-1]


def frames_suite(config: RunConfig, rng: np.random.Generator, threads: int | None) -> SuiteReport:
    rows = []
    t = uniform_grid(10.0, 100_000)
    varying = integrate_frame(0.3 * np.sin(t), 1.0 + 0.5 * np.cos(t), np.full_like(t, 0.7), t)
    drift = varying.orthogonality_drift()
    rows.append(_check("so3_drift", drift, 1e-12, drift <= 1e-12))

    t = uniform_grid(10.0, 10_000)
    helix = integrate_frame(np.zeros_like(t), np.ones_like(t), np.ones_like(t), t)
    curvature, torsion = frenet(helix.centerline, t)
    error = float(abs(curvature.mean() - 1.0))
    rows.append(_check("helix_curvature", error, 1e-5, error <= 1e-5))
    error = float(abs(torsion.mean() - 1.0))
    rows.append(_check("helix_torsion", error, 1e-5, error <= 1e-5))

    t = uniform_grid(math.pi, 10_000)
    circle = integrate_frame(np.zeros_like(t), np.full_like(t, 2.0), np.zeros_like(t), t)
    gap = float(np.linalg.norm(circle.centerline[-1] - circle.centerline[0]))
    rows.append(_check("circle_closure", gap, 1e-6, gap <= 1e-6))

    reference = _endpoint_frame(8192)
    errors = [float(np.abs(_endpoint_frame(n) - reference).max()) for n in (64, 128, 256)]
    order = math.log2(errors[1] / errors[2])
    rows.append(_check("convergence_order", order, 1.8, order >= 1.8))
    return _checks("frames", rows)


def rotating_field(intervals: int, length: float = 1.0) -> tuple[RankOneField, ReferenceChart]:
    """A smooth rank-one field on a straight chart, p turning at rate 0.3."""
    chart = builtin_chart("rectangle", {}, length, intervals)
    angle = 0.3 * chart.t
    p = np.column_stack([np.cos(angle), np.sin(angle)])
    lam = 1.0 + 0.5 * np.sin(2.0 * chart.t)
    return RankOneField.along(lam, p, chart), chart


def _strip(
    intervals: int, samples: int = 9
) -> tuple[RankOneField, ReferenceChart, FramePath, RibbonMesh]:
    field, chart = rotating_field(intervals)
    path = integrate_frame(*adapted_coefficients(field, chart), chart.t)
    eta = min(0.2, width_bound(field, chart))
    return field, chart, path, ruled_surface(path, field, chart, eta, samples)


def surface_suite(config: RunConfig, rng: np.random.Generator, threads: int | None) -> SuiteReport:
    rows = []
    defects = [_strip(n)[3].metric_defect() for n in (100, 200, 400)]
    for n, defect in zip((100, 200, 400), defects):
        rows.append(_check(f"metric_defect_{n}", defect, 1e-2, defect <= 1e-2))
    order = math.log2(defects[1] / defects[2])
    rows.append(_check("metric_defect_order", order, 1.0, order >= 1.0))

    field, chart, path, mesh = _strip(1000)
    normals = mesh.centerline_normals()
    normal_error = float(np.abs(normals - path.a3[1:-1]).max())
    rows.append(_check("centerline_normal", normal_error, 1e-5, normal_error <= 1e-5))
    along = np.einsum("ni,ni->n", field.p, chart.D1)
    expected = field.lam * along * along
    curvature_error = float(np.abs(mesh.normal_curvature() - expected[1:-1]).max())
    rows.append(_check("normal_curvature", curvature_error, 5e-2, curvature_error <= 5e-2))
    floor = 0.5 * float(np.abs(along).min())
    jacobian = float(np.abs(mesh.jacobian).min())
    rows.append(_check("jacobian_floor", jacobian, floor, jacobian >= floor))
    return _checks("surface", rows)


def _profile(
    ctx: DensityContext, t: NDArray[np.float64], mu: NDArray[np.float64], tau: NDArray[np.float64]
) -> Profile:
    values, gamma = qbar(ctx, mu, tau)
    return Profile(t, mu, tau, np.asarray(gamma), np.asarray(values))


def corrugation_suite(config: RunConfig, rng: np.random.Generator, threads: int | None) -> SuiteReport:
    rigidity = Rigidity.orthotropic(1.0, 0.0, 1.0, 0.5)
    chart = builtin_chart("rectangle", {}, 1.0, 1024)
    ctx = DensityContext.build(rigidity)
    mu = 1.0 + 0.5 * np.sin(2.0 * math.pi * chart.t)
    wavy = _profile(ctx, chart.t, mu, np.full_like(mu, 2.0))
    constant = _profile(ctx, chart.t, np.ones_like(mu), np.ones_like(mu))
    rows = []
    runs = [("wavy", wavy, cells) for cells in (16, 32, 64, 128, 256)]
    runs += [("constant", constant, cells) for cells in (64, 256)]
    for target, profile, cells in runs:
        result = corrugate(chart, rigidity, NaturalCurvature.zero(), profile, cells, threads)
        energy, mean = result.mean_energy(), result.mean_qbar()
        rows.append((target, cells, energy, mean, result.energy_gap(), result.window_defect(4)))
    defects = [float(row[5]) for row in rows if row[0] == "wavy"]  # type: ignore[arg-type]
    decreasing = all(b <= 1.1 * a for a, b in zip(defects, defects[1:]))
    gaps = all(abs(float(row[4])) <= 1e-8 * max(1.0, float(row[3])) for row in rows)  # type: ignore[arg-type]
    # qbar(1, 1) = 4 for the Sadowsky rigidity
    reference = float(constant.qbar[0])  # type: ignore[index]
    within = all(
        abs(float(row[2]) - reference) <= 0.02 * reference  # type: ignore[arg-type]
        for row in rows
        if row[0] == "constant"
    )
    columns = ("target", "cells", "mean_energy", "mean_qbar", "energy_gap", "window_defect")
    return SuiteReport("corrugation", columns, rows, decreasing and gaps and within)


def grid_minimum(ctx: DensityContext, radius: float, points: int, block: int = 101) -> float:
    """Smallest qbar on a points x points grid over [-radius, radius]^2, in row blocks."""
    axis = np.linspace(-radius, radius, points)
    best = math.inf
    for start in range(0, points, block):
        mu, tau = np.meshgrid(axis[start : start + block], axis, indexing="ij")
        best = min(best, float(np.min(qbar(ctx, mu, tau)[0])))
    return best


def spontaneous_suite(config: RunConfig, rng: np.random.Generator, threads: int | None) -> SuiteReport:
    contexts = []
    for _ in range(config.contexts):
        rigidity = Rigidity.orthotropic(*random_orthotropic(rng))
        a11, a12, a22 = rng.uniform(-1.0, 1.0, size=3)
        D = np.array([[1.0, rng.uniform(-0.3, 0.3)], [0.0, rng.uniform(0.8, 1.2)]])
        contexts.append(DensityContext.build(rigidity, D, SymMat2(a11, a12, a22)))

    def row(index: int) -> tuple[object, ...]:
        ctx = contexts[index]
        mu, tau, _, value = pointwise_minimum(ctx)
        oracle = grid_minimum(ctx, search_radius(ctx), config.oracle_grid)
        return (index, mu, tau, value, oracle, value - oracle)

    rows = parallel_map(row, range(len(contexts)), threads)
    passed = all(float(r[5]) <= 1e-6 for r in rows)  # type: ignore[arg-type]
    return SuiteReport("spontaneous", ("sample", "mu", "tau", "value", "oracle", "excess"), rows, passed)


SUITES: dict[str, Callable[[RunConfig, np.random.Generator, int | None], SuiteReport]] = {
    "alphas": alphas_suite,
    "density": density_suite,
    "relaxation": relaxation_suite,
    "frames": frames_suite,
    "surface": surface_suite,
    "corrugation": corrugation_suite,
    "spontaneous": spontaneous_suite,
}


def run_suite(name: str, config: RunConfig, threads: int | None = None) -> SuiteReport:
    """Run one suite with a generator seeded by (seed, suite index)."""
    index = list(SUITES).index(name)
    rng = np.random.default_rng([config.seed, index])
    logger.info("running validation suite %s", name)
    return SUITES[name](config, rng, threads)


def write_suite(report: SuiteReport, path: str, config: RunConfig):
    header = [("suite", report.name)] + config.header()
    with CsvReport(path, report.columns, header) as csv:
        csv.write_rows(report.rows)
        csv.write_comment("passed", "true" if report.passed else "false")


def run_suites(
    names: Sequence[str], config: RunConfig, out: str = "-", threads: int | None = None
) -> list[SuiteReport]:
    """Run suites in order and write one CSV report each.

    With out = "-" all reports go to stdout, otherwise to out/<suite>.csv.
    """
    reports = []
    for name in names:
        report = run_suite(name, config, threads)
        target = "-" if out == "-" else str(Path(out) / f"{name}.csv")
        write_suite(report, target, config)
        if not report.passed:
            logger.warning("validation suite %s failed", name)
        reports.append(report)
    return reports
