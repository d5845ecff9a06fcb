import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
from lark.exceptions import LarkError

from ribbonlim.config import (
    GridSpec,
    RunConfig,
    build_chart,
    build_natural,
    build_rigidity,
    build_spec,
    load_config,
    spec_value,
)
from ribbonlim.errors import InputError, NumericalError
from ribbonlim.frames import (
    Profile,
    centerline_and_directors,
    evaluate_J,
    integrate_frame,
    load_profile_csv,
)
from ribbonlim.geometry import frame_coefficients
from ribbonlim.parser import Shorthand
from ribbonlim.reduced_density import DensityContext, qbar, qbar_along
from ribbonlim.report import (
    CENTERLINE_COLUMNS,
    CsvReport,
    ObjWriter,
    centerline_rows,
    flat_rows,
)
from ribbonlim.surface import Strip, corrugate, corrugated_strip
from ribbonlim.validation import SUITES, run_suites
from ribbonlim.variational import MinimizeSpec, clamped_minimize, spontaneous_profile

logger = logging.getLogger(__name__)

PROFILE_COLUMNS = ("t", "mu", "tau", "gamma_star", "qbar")
CELL_COLUMNS = ("cell", "t_start", "t_end", "theta", "a1", "a2", "a3", "b1", "b2", "b3")


class ArgumentParser(argparse.ArgumentParser):
    """Argument parser that raises `InputError` instead of exiting."""

    def error(self, message: str):
        raise InputError(f"cli: {message}")


def common_options() -> ArgumentParser:
    parent = ArgumentParser(add_help=False)
    parent.add_argument("--config", help="path to a JSON run configuration")
    rigidity = parent.add_mutually_exclusive_group()
    rigidity.add_argument("--rigidity", help="rigidity shorthand, e.g. 'orthotropic(1, 0, 1, 0.5)'")
    rigidity.add_argument(
        "--isotropic", nargs=2, type=float, metavar=("KMU", "KLAMBDA"), help="isotropic rigidity"
    )
    rigidity.add_argument(
        "--orthotropic",
        nargs=4,
        type=float,
        metavar=("K11", "K12", "K22", "K33"),
        help="orthotropic rigidity",
    )
    rigidity.add_argument(
        "--voigt",
        nargs=6,
        type=float,
        metavar=("C11", "C12", "C13", "C22", "C23", "C33"),
        help="upper triangle of the Voigt matrix",
    )
    parent.add_argument("--chart", help="chart shorthand, e.g. 'arc(kappa0=0.5)'")
    parent.add_argument("--natural", help="natural curvature shorthand, e.g. 'constant(0, 1, 0)'")
    parent.add_argument("--length", type=float, help="length of the centerline")
    parent.add_argument("--nodes", type=int, help="number of grid intervals N")
    parent.add_argument("--seed", type=int, help="seed of the validation generators")
    parent.add_argument("--threads", type=int, help="number of worker threads")
    parent.add_argument("--out", "-o", default="-", help="output path, '-' for stdout")
    parent.add_argument("--verbose", "-v", action="count", default=0, help="log more")
    return parent


def strip_options() -> ArgumentParser:
    parent = ArgumentParser(add_help=False)
    parent.add_argument("--mesh", help="write the ruled strip as OBJ to this path")
    parent.add_argument("--flat", help="write the flat parameter points as CSV to this path")
    parent.add_argument("--cells", type=int, help="number of corrugation cells")
    parent.add_argument("--margin", type=float, help="fraction of the half-width bound to use")
    parent.add_argument("--eta", type=float, dest="eta_max", help="upper bound of the half-width")
    return parent


def build_parser() -> ArgumentParser:
    common = common_options()
    strip = strip_options()
    parser = ArgumentParser(prog="ribbonlim", description="One-dimensional model of elastic ribbons.")
    subparsers = parser.add_subparsers(required=True, dest="command")

    subparsers.add_parser("alphas", parents=[common], help="print the relaxation constants")

    table = subparsers.add_parser("density-table", parents=[common], help="tabulate qbar on a grid")
    table.add_argument("--mu-range", nargs=2, type=float, metavar=("MIN", "MAX"))
    table.add_argument("--tau-range", nargs=2, type=float, metavar=("MIN", "MAX"))
    table.add_argument("--points", type=int, help="grid points per axis")
    table.add_argument("--at", type=float, default=0.0, help="abscissa of the chart data")

    spontaneous = subparsers.add_parser(
        "spontaneous", parents=[common, strip], help="minimize the limit energy"
    )
    spontaneous.add_argument("--emit-centerline", help="write centerline and directors to this path")

    reconstruct = subparsers.add_parser(
        "reconstruct", parents=[common, strip], help="centerline and strip of a given profile"
    )
    reconstruct.add_argument("--profile", required=True, help="profile CSV with t, mu, tau")

    corrugation = subparsers.add_parser(
        "corrugate", parents=[common, strip], help="rank-one corrugation of a profile"
    )
    corrugation.add_argument("--profile", help="profile CSV, the spontaneous profile by default")

    validate = subparsers.add_parser("validate", parents=[common], help="run validation suites")
    validate.add_argument("--all", action="store_true", help="run every suite")
    validate.add_argument("suites", nargs="*", metavar="SUITE", help=", ".join(SUITES))
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """The configuration file, if any, overridden by command line flags."""
    config = load_config(args.config) if args.config else RunConfig()
    rigidity = None
    if args.rigidity is not None:
        rigidity = spec_value("rigidity", args.rigidity)
    elif args.isotropic is not None:
        rigidity = Shorthand("isotropic", tuple(args.isotropic))
    elif args.orthotropic is not None:
        rigidity = Shorthand("orthotropic", tuple(args.orthotropic))
    elif args.voigt is not None:
        rigidity = Shorthand("voigt", tuple(args.voigt))
    changes = {
        "rigidity": rigidity,
        "chart": None if args.chart is None else spec_value("chart", args.chart),
        "natural_curvature": None if args.natural is None else spec_value("natural_curvature", args.natural),
        "length": args.length,
        "nodes": args.nodes,
        "seed": args.seed,
        "threads": args.threads,
    }
    for key in ("cells", "margin", "eta_max"):
        changes[key] = getattr(args, key, None)
    if args.command == "density-table":
        grid = config.grid
        mu_min, mu_max = args.mu_range or (grid.mu_min, grid.mu_max)
        tau_min, tau_max = args.tau_range or (grid.tau_min, grid.tau_max)
        changes["grid"] = GridSpec(mu_min, mu_max, tau_min, tau_max, args.points or grid.points)
    return config.replace(**changes)


def write_profile(path: str, profile: Profile, config: RunConfig):
    with CsvReport(path, PROFILE_COLUMNS, config.header()) as csv:
        csv.write_rows(zip(profile.t, profile.mu, profile.tau, profile.gamma, profile.qbar))  # type: ignore[arg-type]


def write_centerline(path: str, profile: Profile, spec: MinimizeSpec, config: RunConfig):
    """Integrate the frame of a profile and write centerline and directors."""
    kappa, mu, tau = frame_coefficients(spec.chart, profile.mu, profile.tau)
    frame = integrate_frame(kappa, mu, tau, spec.chart.t, spec.initial_frame)
    drift = frame.orthogonality_drift()
    logger.debug("frame orthogonality drift %.3e", drift)
    with CsvReport(path, CENTERLINE_COLUMNS, config.header()) as csv:
        csv.write_rows(centerline_rows(spec.chart.t, centerline_and_directors(frame, spec.chart)))


def write_strip(args: argparse.Namespace, profile: Profile, spec: MinimizeSpec, config: RunConfig):
    """Build the corrugated strip and write the requested mesh files."""
    if not (args.mesh or args.flat):
        return
    strip: Strip = corrugated_strip(
        spec.chart,
        spec.rigidity,
        spec.natural,
        profile,
        config.cells,
        margin=config.margin,
        eta_max=config.eta_max,
        samples=config.surface_samples,
        initial_frame=spec.initial_frame,
        threads=config.threads,
    )
    logger.info("strip metric defect %.3e", strip.mesh.metric_defect())
    if args.mesh:
        with ObjWriter(args.mesh) as obj:
            obj.write(strip.mesh)
    if args.flat:
        with CsvReport(args.flat, ("t", "s", "Phi1", "Phi2"), config.header()) as csv:
            csv.write_rows(flat_rows(strip.mesh))


def with_density(profile: Profile, spec: MinimizeSpec) -> Profile:
    """Fill in gamma_star and qbar of a profile read from a file."""
    profile.check_grid(spec.chart)
    values, gamma = qbar_along(spec.contexts(), profile.mu, profile.tau)
    return Profile(profile.t, profile.mu, profile.tau, gamma, values)


def command_alphas(args: argparse.Namespace, config: RunConfig) -> int:
    alpha_plus, alpha_minus = build_rigidity(config.rigidity).alphas
    print(f"alpha_plus {alpha_plus:.12f} alpha_minus {alpha_minus:.12f}")
    return 0


def command_density_table(args: argparse.Namespace, config: RunConfig) -> int:
    chart, from_chart = build_chart(config)
    natural = build_natural(config, from_chart)
    ctx = DensityContext.build(
        build_rigidity(config.rigidity), chart.D_at(args.at), natural.at(args.at)
    )
    mu_axis, tau_axis = config.grid.axes()
    mu, tau = np.meshgrid(mu_axis, tau_axis, indexing="ij")
    values, gamma = qbar(ctx, mu, tau)
    with CsvReport(args.out, ("mu", "tau", "qbar", "gamma_star"), config.header()) as csv:
        csv.write_rows(zip(mu.ravel(), tau.ravel(), np.ravel(values), np.ravel(gamma)))
    return 0


def command_spontaneous(args: argparse.Namespace, config: RunConfig) -> int:
    spec = build_spec(config)
    if spec.mode == "clamped":
        result = clamped_minimize(spec, config.threads)
        profile = result.profile
        logger.info(
            "clamped energy %.12g, position residual %.3e", result.energy, result.position_residual
        )
    else:
        profile = spontaneous_profile(spec, config.threads)
    logger.info("limit energy J = %.12g", evaluate_J(profile, spec.contexts()))
    write_profile(args.out, profile, config)
    if args.emit_centerline:
        write_centerline(args.emit_centerline, profile, spec, config)
    write_strip(args, profile, spec, config)
    return 0


def command_reconstruct(args: argparse.Namespace, config: RunConfig) -> int:
    spec = build_spec(config)
    profile = with_density(load_profile_csv(args.profile), spec)
    write_centerline(args.out, profile, spec, config)
    write_strip(args, profile, spec, config)
    return 0


def command_corrugate(args: argparse.Namespace, config: RunConfig) -> int:
    spec = build_spec(config)
    if args.profile:
        profile = with_density(load_profile_csv(args.profile), spec)
    else:
        profile = spontaneous_profile(spec, config.threads)
    result = corrugate(spec.chart, spec.rigidity, spec.natural, profile, config.cells, config.threads)
    with CsvReport(args.out, CELL_COLUMNS, config.header()) as csv:
        for k in range(result.cells):
            csv.write_row(
                (k, result.edges[k], result.edges[k + 1], result.theta[k], *result.a[k], *result.b[k])
            )
        csv.write_comment("mean_energy", f"{result.mean_energy():.17g}")
        csv.write_comment("mean_qbar", f"{result.mean_qbar():.17g}")
        csv.write_comment("energy_gap", f"{result.energy_gap():.17g}")
    write_strip(args, profile, spec, config)
    return 0


def command_validate(args: argparse.Namespace, config: RunConfig) -> int:
    names = list(SUITES) if args.all else list(dict.fromkeys(args.suites))
    if not names:
        raise InputError("cli: name at least one validation suite or pass --all")
    unknown = [name for name in names if name not in SUITES]
    if unknown:
        raise InputError(f"cli: unknown validation suite {unknown[0]!r}")
    if args.out != "-":
        Path(args.out).mkdir(parents=True, exist_ok=True)
    reports = run_suites(names, config, args.out, config.threads)
    failed = [report.name for report in reports if not report.passed]
    if failed:
        raise NumericalError(f"validation: suites failed: {', '.join(failed)}")
    return 0


COMMANDS = {
    "alphas": command_alphas,
    "density-table": command_density_table,
    "spontaneous": command_spontaneous,
    "reconstruct": command_reconstruct,
    "corrugate": command_corrugate,
    "validate": command_validate,
}


def run(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, run one subcommand and map failures to exit codes.

    Returns:
        0 on success, 1 on input errors, 2 on numerical failures
    """
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
            stream=sys.stderr,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return COMMANDS[args.command](args, resolve_config(args))
    except (InputError, LarkError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except NumericalError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
