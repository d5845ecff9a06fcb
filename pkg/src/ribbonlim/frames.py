import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, NamedTuple, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import trapezoid
from scipy.spatial.transform import Rotation

from ribbonlim.errors import InputError
from ribbonlim.geometry import ReferenceChart, read_table
from ribbonlim.reduced_density import DensityContext, qbar_along

if TYPE_CHECKING:
    from ribbonlim.surface import RankOneField

logger = logging.getLogger(__name__)

ROTATION_TOLERANCE = 1e-12


def check_rotation(r: ArrayLike, tolerance: float = ROTATION_TOLERANCE) -> NDArray[np.float64]:
    """Return r as an array if it is a rotation matrix.

    Raises:
        InputError: if r is not orthogonal with determinant one
    """
    matrix = np.array(r, dtype=float)
    if matrix.shape != (3, 3):
        raise InputError(f"initial frame must be 3x3, got shape {matrix.shape}")
    drift = float(np.abs(matrix.T @ matrix - np.eye(3)).max())
    det = float(np.linalg.det(matrix))
    if drift > tolerance or abs(det - 1.0) > tolerance:
        raise InputError(
            f"initial frame is not a rotation (|r^T r - I| = {drift:.3e}, det = {det:.12g})"
        )
    return matrix


@dataclass(frozen=True, eq=False)
class FramePath:
    """Rotations r_i with rows (a1, a2, a3) and centerline points y_i."""

    t: NDArray[np.float64]
    rotations: NDArray[np.float64]
    centerline: NDArray[np.float64]

    def __post_init__(self):
        n = len(self.t)
        if self.rotations.shape != (n, 3, 3) or self.centerline.shape != (n, 3):
            raise InputError("frame path arrays do not match the grid")

    @property
    def a1(self) -> NDArray[np.float64]:
        return self.rotations[:, 0]

    @property
    def a2(self) -> NDArray[np.float64]:
        return self.rotations[:, 1]

    @property
    def a3(self) -> NDArray[np.float64]:
        return self.rotations[:, 2]

    def orthogonality_drift(self) -> float:
        """max_i |r_i^T r_i - I|."""
        products = np.einsum("nki,nkj->nij", self.rotations, self.rotations)
        return float(np.abs(products - np.eye(3)).max())


@dataclass(frozen=True, eq=False)
class Profile:
    """Bending mu and twisting tau per node, with optional gamma* and density."""

    t: NDArray[np.float64]
    mu: NDArray[np.float64]
    tau: NDArray[np.float64]
    gamma: NDArray[np.float64] | None = None
    qbar: NDArray[np.float64] | None = None

    def __post_init__(self):
        for name in ("t", "mu", "tau", "gamma", "qbar"):
            value = getattr(self, name)
            if value is None:
                continue
            array = np.array(value, dtype=float)
            if array.shape != (len(self.t),):
                raise InputError(f"profile column {name} does not match the grid")
            if not np.all(np.isfinite(array)):
                raise InputError(f"profile column {name} has non-finite values")
            object.__setattr__(self, name, array)

    @classmethod
    def zero(cls, t: ArrayLike) -> "Profile":
        grid = np.asarray(t, dtype=float)
        return cls(grid, np.zeros_like(grid), np.zeros_like(grid))

    def check_grid(self, chart: ReferenceChart) -> None:
        if self.t.shape != chart.t.shape or not np.allclose(self.t, chart.t, rtol=0.0, atol=1e-12):
            raise InputError("profile grid does not match the chart grid")


def load_profile_csv(path: str | Path) -> Profile:
    """Read a profile with columns t, mu, tau and optionally gamma_star, qbar."""
    data = read_table(path)
    names = data.dtype.names or ()
    missing = [name for name in ("t", "mu", "tau") if name not in names]
    if missing:
        raise InputError(f"{path}: missing profile columns {', '.join(missing)}")
    return Profile(
        data["t"],
        data["mu"],
        data["tau"],
        data["gamma_star"] if "gamma_star" in names else None,
        data["qbar"] if "qbar" in names else None,
    )


class Directors(NamedTuple):
    y: NDArray[np.float64]
    d1: NDArray[np.float64]
    d2: NDArray[np.float64]
    d3: NDArray[np.float64]


def _midpoints(values: NDArray[np.float64]) -> NDArray[np.float64]:
    return 0.5 * (values[1:] + values[:-1])


def integrate_frame(
    kappa: ArrayLike,
    mu: ArrayLike,
    tau: ArrayLike,
    t: ArrayLike,
    r0: ArrayLike | None = None,
    y0: ArrayLike | None = None,
) -> FramePath:
    """Integrate r' = W r with W = (0, k, m; -k, 0, t; -m, -t, 0) and y' = r^T e1.

    Each step freezes the coefficients at the interval midpoint and applies the
    exact rotation exp(h W). The centerline advances with the tangent of the
    half-step frame, so both are second order and every r_i is a rotation to
    rounding.

    Args:
        kappa, mu, tau: nodal coefficients
        t: increasing grid
        r0: initial frame, identity by default
        y0: initial point, origin by default

    Raises:
        InputError: if r0 is not a rotation or the arrays do not match
    """
    grid = np.asarray(t, dtype=float)
    coefficients = [np.asarray(c, dtype=float) for c in (kappa, mu, tau)]
    if grid.ndim != 1 or len(grid) < 2 or any(c.shape != grid.shape for c in coefficients):
        raise InputError("frame coefficients must be sampled on the grid")
    start = np.eye(3) if r0 is None else check_rotation(r0)
    origin = np.zeros(3) if y0 is None else np.asarray(y0, dtype=float)

    k, m, s = (_midpoints(c) for c in coefficients)
    # W is the hat matrix of (-tau, mu, -kappa)
    generators = np.column_stack([-s, m, -k])
    h = np.diff(grid)[:, None]
    steps = Rotation.from_rotvec(h * generators)
    halves = Rotation.from_rotvec(0.5 * h * generators)

    n = len(grid)
    quaternions = np.empty((n, 4))
    current = Rotation.from_matrix(start)
    quaternions[0] = current.as_quat()
    for i in range(n - 1):
        current = steps[i] * current
        quaternions[i + 1] = current.as_quat()
    frames = Rotation.from_quat(quaternions)
    rotations = frames.as_matrix()
    rotations[0] = start

    tangents = (halves * frames[:-1]).as_matrix()[:, 0, :]
    centerline = np.empty((n, 3))
    centerline[0] = origin
    centerline[1:] = origin + np.cumsum(h * tangents, axis=0)
    return FramePath(grid, rotations, centerline)


def centerline_and_directors(path: FramePath, chart: ReferenceChart) -> Directors:
    """Directors d1 = a1, d3 = a3 and d2 = (D1.D2) d1 + det D (d3 wedge d1)."""
    if path.t.shape != chart.t.shape or not np.allclose(path.t, chart.t, rtol=0.0, atol=1e-12):
        raise InputError("frame path grid does not match the chart grid")
    cosine = np.einsum("ni,ni->n", chart.D1, chart.D2)
    d2 = cosine[:, None] * path.a1 + chart.det[:, None] * path.a2
    return Directors(path.centerline, path.a1, d2, path.a3)


def evaluate_J(profile: Profile, contexts: Sequence[DensityContext]) -> float:
    """Trapezoid quadrature of the reduced density along the profile."""
    if len(contexts) != len(profile.t):
        raise InputError("one density context per profile node is required")
    values, _ = qbar_along(contexts, profile.mu, profile.tau)
    return float(trapezoid(values, profile.t))


def adapted_coefficients(
    field: "RankOneField", chart: ReferenceChart
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Frame coefficients adapted to (B, lambda p x p).

    kappa = B''.N, mu = lambda (B'.p)^2, tau = lambda (B'.p)(N.p).
    """
    along = np.einsum("ni,ni->n", chart.D1, field.p)
    across = np.einsum("ni,ni->n", chart.normal, field.p)
    return chart.kappa.copy(), field.lam * along * along, field.lam * along * across


def frenet(y: ArrayLike, t: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Discrete curvature and torsion of a curve sampled on a uniform grid.

    Central differences at the nodes 2 .. n-3.
    """
    points = np.asarray(y, dtype=float)
    grid = np.asarray(t, dtype=float)
    if len(grid) < 5:
        raise InputError("discrete Frenet frame needs at least 5 nodes")
    h = float(grid[1] - grid[0])
    first = (points[3:-1] - points[1:-3]) / (2.0 * h)
    second = (points[3:-1] - 2.0 * points[2:-2] + points[1:-3]) / (h * h)
    third = (points[4:] - 2.0 * points[3:-1] + 2.0 * points[1:-3] - points[:-4]) / (2.0 * h**3)
    binormal = np.cross(first, second)
    area = np.linalg.norm(binormal, axis=1)
    speed = np.linalg.norm(first, axis=1)
    curvature = area / speed**3
    torsion = np.einsum("ni,ni->n", binormal, third) / (area * area)
    return curvature, torsion
