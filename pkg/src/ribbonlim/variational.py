import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import trapezoid
from scipy.optimize import minimize, minimize_scalar

from ribbonlim.errors import InputError
from ribbonlim.frames import Profile, check_rotation, integrate_frame
from ribbonlim.geometry import NaturalCurvature, ReferenceChart, frame_coefficients
from ribbonlim.parallel import parallel_map
from ribbonlim.quadratic_forms import Rigidity, SymMat2
from ribbonlim.reduced_density import DensityContext, contexts_along, qbar, qbar_along

logger = logging.getLogger(__name__)

Mode = Literal["free", "clamped"]

MAX_SWEEPS = 40


@dataclass(frozen=True, eq=False)
class ClampedTargets:
    """End-state targets of a clamped ribbon and the optimizer budget."""

    y_target: NDArray[np.float64]
    r_target: NDArray[np.float64] | None = None
    penalty: float = 1e5
    max_iter: int = 3000
    controls: int = 9

    def __post_init__(self):
        y = np.array(self.y_target, dtype=float)
        if y.shape != (3,):
            raise InputError(f"y_target must have 3 entries, got shape {y.shape}")
        object.__setattr__(self, "y_target", y)
        if self.r_target is not None:
            object.__setattr__(self, "r_target", check_rotation(self.r_target, 1e-9))
        if not self.penalty > 0.0:
            raise InputError(f"penalty weight must be positive, got {self.penalty}")
        if self.max_iter < 1:
            raise InputError(f"max_iter must be positive, got {self.max_iter}")
        if self.controls < 2:
            raise InputError(f"at least 2 control nodes are needed, got {self.controls}")


@dataclass(frozen=True, eq=False)
class MinimizeSpec:
    chart: ReferenceChart
    rigidity: Rigidity
    natural: NaturalCurvature = field(default_factory=NaturalCurvature.zero)
    mode: Mode = "free"
    clamped: ClampedTargets | None = None
    initial_frame: NDArray[np.float64] | None = None
    grid_points: int = 41
    tolerance: float = 1e-8

    def __post_init__(self):
        if self.mode not in ("free", "clamped"):
            raise InputError(f"unknown mode {self.mode!r}")
        if self.mode == "clamped" and self.clamped is None:
            raise InputError("clamped mode needs end-state targets")
        if self.grid_points < 3 or self.grid_points % 2 == 0:
            raise InputError(f"grid_points must be odd and >= 3, got {self.grid_points}")
        if self.initial_frame is not None:
            object.__setattr__(self, "initial_frame", check_rotation(self.initial_frame))

    def contexts(self) -> list[DensityContext]:
        return contexts_along(self.chart, self.rigidity, self.natural)


@dataclass(frozen=True, eq=False)
class ClampedResult:
    profile: Profile
    objective: float
    energy: float
    position_residual: float
    frame_residual: float | None
    converged: bool
    history: list[list[float]]


def search_radius(ctx: DensityContext) -> float:
    """Radius of a square around the origin that contains every minimizer of qbar.

    qbar(A°11, A°12) is bounded by the penalty of A° itself, while qbar grows
    at least like lambda_min(C) det D sigma_min(D^-1)^4 times the squared
    distance from (A°11, A°12).
    """
    smallest = float(np.linalg.eigvalsh(ctx.rigidity.C)[0])
    sigma = float(np.linalg.svd(np.linalg.inv(ctx.D), compute_uv=False)[-1])
    growth = smallest * ctx.det_D * sigma**4
    natural = ctx.natural
    centre = math.hypot(natural.m11, natural.m12)
    penalty = (
        ctx.alpha_plus * max(natural.det, 0.0) + ctx.alpha_minus * max(-natural.det, 0.0)
    ) / ctx.det_D
    return centre + math.sqrt(penalty / growth) + 1.0


def _coordinate_refine(
    objective: Callable[[NDArray[np.float64]], float],
    start: NDArray[np.float64],
    step: float,
    tolerance: float,
) -> NDArray[np.float64]:
    x = start.copy()
    for _ in range(MAX_SWEEPS):
        previous = x.copy()
        for k in range(2):

            def along(u: float) -> float:
                trial = x.copy()
                trial[k] = u
                return objective(trial)

            result = minimize_scalar(
                along,
                bounds=(x[k] - 2.0 * step, x[k] + 2.0 * step),
                method="bounded",
                options={"xatol": tolerance},
            )
            if result.fun < objective(x):
                x[k] = result.x
        if np.abs(x - previous).max() <= tolerance:
            break
    return x


def pointwise_minimum(
    ctx: DensityContext, grid_points: int = 41, tolerance: float = 1e-8
) -> tuple[float, float, float, float]:
    """Minimizer of qbar(ctx, ., .) over the plane.

    A grid scan on [-R, R]^2 (`search_radius`) picks a start, ties going to the
    smallest norm; coordinate-wise bounded scalar searches and a Nelder-Mead
    polish refine it. The refined point is used only if strictly better.

    Returns:
        (mu, tau, gamma_star, value)
    """
    if ctx.natural == SymMat2.zero():
        # qbar >= 0 vanishes at the origin
        return 0.0, 0.0, 0.0, 0.0
    radius = search_radius(ctx)
    axis = np.linspace(-radius, radius, grid_points)
    mu, tau = np.meshgrid(axis, axis, indexing="ij")
    values, _ = qbar(ctx, mu, tau)
    best = float(values.min())
    near = values <= best + 1e-12 * (1.0 + abs(best))
    index = np.unravel_index(np.argmin(np.where(near, mu * mu + tau * tau, np.inf)), mu.shape)
    point = np.array([mu[index], tau[index]])
    value = float(values[index])

    def objective(x: NDArray[np.float64]) -> float:
        return float(qbar(ctx, x[0], x[1])[0])

    refined = _coordinate_refine(objective, point, float(axis[1] - axis[0]), tolerance)
    polished = minimize(
        objective,
        refined,
        method="Nelder-Mead",
        options={"xatol": tolerance, "fatol": 1e-15, "maxiter": 2000},
    )
    candidate = polished.x if polished.fun < objective(refined) else refined
    if objective(candidate) < value:
        point = candidate
    found, gamma = qbar(ctx, point[0], point[1])
    return float(point[0]) + 0.0, float(point[1]) + 0.0, float(gamma), float(found)


def spontaneous_profile(spec: MinimizeSpec, threads: int | None = None) -> Profile:
    """Nodewise minimizer of the reduced density, the shape a free ribbon takes."""
    contexts = spec.contexts()
    minima = parallel_map(
        lambda ctx: pointwise_minimum(ctx, spec.grid_points, spec.tolerance), contexts, threads
    )
    columns = np.array(minima)
    return Profile(spec.chart.t, columns[:, 0], columns[:, 1], columns[:, 2], columns[:, 3])


def end_state(
    spec: MinimizeSpec, mu: ArrayLike, tau: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Centerline end point and end frame reached by the profile."""
    kappa_m, mu_m, tau_m = frame_coefficients(spec.chart, mu, tau)
    path = integrate_frame(kappa_m, mu_m, tau_m, spec.chart.t, spec.initial_frame)
    return path.centerline[-1], path.rotations[-1]


def clamped_minimize(spec: MinimizeSpec, threads: int | None = None) -> ClampedResult:
    """Penalized minimization of the energy under end-state targets.

    The profile is piecewise linear on `controls` nodes. Each penalty stage
    (penalty/100, penalty/10, penalty) runs Nelder-Mead followed by a Powell
    polish from the best point so far. Starts are the spontaneous profile and,
    when different, zero.

    Raises:
        InputError: if spec is not in clamped mode
    """
    if spec.mode != "clamped" or spec.clamped is None:
        raise InputError("clamped_minimize needs a clamped spec")
    targets = spec.clamped
    chart = spec.chart
    contexts = spec.contexts()
    control_t = np.linspace(chart.t[0], chart.t[-1], targets.controls)
    count = targets.controls

    def expand(x: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        return np.interp(chart.t, control_t, x[:count]), np.interp(chart.t, control_t, x[count:])

    def residuals(x: NDArray[np.float64]) -> tuple[float, float | None]:
        end, frame = end_state(spec, *expand(x))
        position = float(np.linalg.norm(end - targets.y_target))
        if targets.r_target is None:
            return position, None
        return position, float(np.linalg.norm(frame - targets.r_target))

    def energy(x: NDArray[np.float64]) -> float:
        mu, tau = expand(x)
        values, _ = qbar_along(contexts, mu, tau)
        return float(trapezoid(values, chart.t))

    def penalized(x: NDArray[np.float64], weight: float) -> float:
        position, frame = residuals(x)
        mismatch = position**2 + (frame**2 if frame is not None else 0.0)
        return energy(x) + weight * mismatch

    free = spontaneous_profile(spec, threads)
    starts = [
        np.concatenate(
            [np.interp(control_t, chart.t, free.mu), np.interp(control_t, chart.t, free.tau)]
        )
    ]
    if np.any(starts[0]):
        starts.append(np.zeros(2 * count))

    weights = [targets.penalty / 100.0, targets.penalty / 10.0, targets.penalty]
    best_x = starts[0]
    best_value = math.inf
    converged = True
    history: list[list[float]] = []
    for start in starts:
        x = start.copy()
        stage_converged = True
        for weight in weights:
            current = penalized(x, weight)
            record = [current]

            def objective(v: NDArray[np.float64], weight: float = weight) -> float:
                return penalized(v, weight)

            def track(v: NDArray[np.float64], *_: object) -> None:
                record.append(objective(np.asarray(v)))

            step = max(1.0, 0.1 * float(np.abs(x).max(initial=0.0)))
            simplex = np.vstack([x, x + step * np.eye(len(x))])
            simplex_run = minimize(
                objective,
                x,
                method="Nelder-Mead",
                callback=track,
                options={
                    "initial_simplex": simplex,
                    "adaptive": True,
                    "maxfev": targets.max_iter,
                    "xatol": 1e-10,
                    "fatol": 1e-12,
                },
            )
            if simplex_run.fun < current:
                x, current = simplex_run.x, float(simplex_run.fun)
            polish = minimize(
                objective,
                x,
                method="Powell",
                callback=track,
                options={"maxfev": targets.max_iter, "xtol": 1e-10, "ftol": 1e-14},
            )
            if polish.fun < current:
                x, current = polish.x, float(polish.fun)
            stage_converged = bool(polish.success)
            history.append(record)
            logger.info(
                "clamped stage weight=%.3g objective=%.12g residual=%.3e",
                weight,
                current,
                residuals(x)[0],
            )
        final = penalized(x, targets.penalty)
        if final < best_value:
            best_x, best_value, converged = x, final, stage_converged

    if not converged:
        logger.warning("clamped minimization did not converge within %d evaluations", targets.max_iter)
    mu, tau = expand(best_x)
    values, gamma = qbar_along(contexts, mu, tau)
    position, frame = residuals(best_x)
    return ClampedResult(
        Profile(chart.t, mu, tau, gamma, values),
        best_value,
        energy(best_x),
        position,
        frame,
        converged,
        history,
    )
