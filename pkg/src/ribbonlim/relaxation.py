import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import linprog

from ribbonlim.errors import DecompositionError, InputError, NumericalError
from ribbonlim.quadratic_forms import (
    DET_FORM,
    Rigidity,
    Voigt3,
    det_form,
    kernel_direction,
    quad,
)

logger = logging.getLogger(__name__)

DEGENERATE_KERNEL = 1e-10
WIDENED_THRESHOLD = 1e4
VALUE_TOLERANCE = 1e-8


@dataclass(frozen=True)
class RelaxationProblem:
    """Relaxation of Q(M) under the constraint det M = z."""

    rigidity: Rigidity
    z: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.z):
            raise InputError(f"constraint level z must be finite, got {self.z}")
        object.__setattr__(self, "z", float(self.z))


@dataclass(frozen=True, eq=False)
class Decomposition:
    """m = (1 - theta) a + theta b with det a = det b = z."""

    a: Voigt3
    b: Voigt3
    theta: float
    value: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise DecompositionError(
                f"relaxation: decomposition weight {self.theta} is outside [0, 1]"
            )

    @property
    def mean(self) -> Voigt3:
        return (1.0 - self.theta) * self.a + self.theta * self.b


def relaxed_integrand(
    problem: RelaxationProblem, m: ArrayLike
) -> float | NDArray[np.float64]:
    """Q + alpha_plus (det - z)^+ + alpha_minus (det - z)^-, vectorized over m."""
    alpha_plus, alpha_minus = problem.rigidity.alphas
    v = np.asarray(m, dtype=float)
    excess = np.asarray(det_form(v)) - problem.z
    value = (
        np.asarray(quad(problem.rigidity, v))
        + alpha_plus * np.maximum(excess, 0.0)
        + alpha_minus * np.maximum(-excess, 0.0)
    )
    return float(value) if value.ndim == 0 else value


def _straddling_roots(a: float, b: float, c: float) -> tuple[float, float]:
    """Roots of a x^2 + 2 b x + c, which must lie on both sides of zero."""
    discriminant = b * b - a * c
    if not discriminant > 0.0:
        raise DecompositionError(
            f"relaxation: no real roots along the kernel direction (discriminant {discriminant:.6g})"
        )
    q = -(b + math.copysign(math.sqrt(discriminant), b))
    first, second = sorted((q / a, c / q))
    if not first < 0.0 < second:
        raise DecompositionError(
            f"relaxation: roots {first:.6g}, {second:.6g} do not straddle zero, "
            "the relaxation constants are inconsistent with the rigidity"
        )
    return first, second


def two_point_decomposition(problem: RelaxationProblem, m: ArrayLike) -> Decomposition:
    """Split m into two points on det = z that realize the relaxed integrand.

    The points lie on the line through m spanned by the kernel direction of
    the branch selected by the sign of det m - z.

    Raises:
        KernelSignError: propagated from `kernel_direction`
        DecompositionError: if the line does not cross the constraint on both
            sides of m, or the two-point energy disagrees with the formula
    """
    v = np.asarray(m, dtype=float)
    excess = det_form(v) - problem.z
    if abs(excess) <= 1e-14 * (1.0 + float(v @ v) + abs(problem.z)):
        return Decomposition(v.copy(), v.copy(), 0.0, quad(problem.rigidity, v))

    sign = "plus" if excess > 0.0 else "minus"
    direction = kernel_direction(problem.rigidity, sign)
    curvature = det_form(direction)
    if abs(curvature) < DEGENERATE_KERNEL:
        logger.warning(
            "near-parabolic %s kernel (det %.3e), widening the kernel threshold",
            sign,
            curvature,
        )
        direction = kernel_direction(problem.rigidity, sign, WIDENED_THRESHOLD)
        curvature = det_form(direction)

    polar = float(v @ DET_FORM @ direction)
    low, high = _straddling_roots(curvature, polar, excess)
    a = v + low * direction
    b = v + high * direction
    theta = -low / (high - low)
    value = (1.0 - theta) * quad(problem.rigidity, a) + theta * quad(problem.rigidity, b)

    expected = relaxed_integrand(problem, v)
    mismatch = abs(value - expected) / max(abs(expected), 1e-300)
    if mismatch > VALUE_TOLERANCE:
        raise DecompositionError(
            f"relaxation: two-point energy {value:.12g} differs from the relaxed "
            f"integrand {expected:.12g} (relative {mismatch:.3e})"
        )
    return Decomposition(a, b, theta, value)


def constraint_points(
    problem: RelaxationProblem, radius: float, n: int
) -> NDArray[np.float64]:
    """Nodes of the cubic grid on [-radius, radius]^3 snapped onto det = z.

    A node is moved along the m3 axis to the nearest point of the constraint
    set when that point is within one grid spacing.
    """
    axis = np.linspace(-radius, radius, n)
    g1, g2, g3 = (g.ravel() for g in np.meshgrid(axis, axis, axis, indexing="ij"))
    tolerance = 2.0 * radius / n
    slack = g1 * g2 - problem.z
    admissible = slack >= 0.0
    root = 2.0 * np.sqrt(np.where(admissible, slack, 0.0))
    snapped = np.where(g3 >= 0.0, root, -root)
    keep = admissible & (np.abs(snapped - g3) <= tolerance) & (np.abs(snapped) <= radius)
    return np.column_stack([g1[keep], g2[keep], snapped[keep]])


def brute_force_biconjugate(
    problem: RelaxationProblem, m: ArrayLike, radius: float, n: int
) -> float:
    """Convex envelope of Q restricted to det = z, evaluated at m.

    The envelope is computed as a discrete double Legendre transform over the
    rasterized constraint set: the linear program max m.xi - t subject to
    xi.x - t <= Q(x) for every constraint point x. It does not use the kernel
    construction and converges to `relaxed_integrand` from above.

    Raises:
        InputError: if |m| >= radius / 2, n < 16, or the rasterized constraint
            set is empty
        NumericalError: if the linear program fails
    """
    v = np.asarray(m, dtype=float)
    if n < 16:
        raise InputError(f"oracle grid needs n >= 16, got {n}")
    if not float(np.linalg.norm(v)) < radius / 2.0:
        raise InputError(f"oracle point must satisfy |m| < radius/2 = {radius / 2.0}")
    points = constraint_points(problem, radius, n)
    if len(points) == 0:
        raise InputError(
            f"rasterized constraint set is empty for radius={radius}, n={n}, z={problem.z}"
        )
    logger.debug("oracle at n=%d uses %d constraint points", n, len(points))
    energies = np.asarray(quad(problem.rigidity, points))
    objective = np.concatenate([-v, [1.0]])
    constraints = np.column_stack([points, -np.ones(len(points))])
    result = linprog(
        objective,
        A_ub=constraints,
        b_ub=energies,
        bounds=[(None, None)] * 4,
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if not result.success:
        raise NumericalError(f"relaxation: oracle linear program failed: {result.message}")
    return float(-result.fun)


def isotropic_relaxed(k_mu: float, k_lambda: float, matrix: ArrayLike) -> float:
    """Relaxed isotropic integrand at z = 0,
    (Kmu + Klambda) |M|^2 + 2 (Kmu + Klambda) |det M|.
    """
    a = np.asarray(matrix, dtype=float)
    weight = k_mu + k_lambda
    return float(weight * np.sum(a * a) + 2.0 * weight * abs(np.linalg.det(a)))
