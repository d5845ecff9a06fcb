import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ribbonlim.errors import InputError, NonTransversalError, NumericalError, WidthError
from ribbonlim.frames import FramePath, Profile, adapted_coefficients, integrate_frame
from ribbonlim.geometry import NaturalCurvature, ReferenceChart, assemble_curvature, perp
from ribbonlim.parallel import parallel_map
from ribbonlim.quadratic_forms import Rigidity, SymMat2, quad, unvoigt_stack, voigt_stack
from ribbonlim.reduced_density import DensityContext, qbar
from ribbonlim.relaxation import RelaxationProblem, two_point_decomposition

logger = logging.getLogger(__name__)

JACOBIAN_FLOOR = 1e-12
RANK_TOLERANCE = 1e-9
ETA_MAX = 0.25


def _matrix_stack(M: ArrayLike | Sequence[SymMat2]) -> NDArray[np.float64]:
    if isinstance(M, Sequence) and M and isinstance(M[0], SymMat2):
        return np.stack([m.as_matrix() for m in M])  # type: ignore[union-attr]
    return np.asarray(M, dtype=float)


@dataclass(frozen=True, eq=False)
class RankOneField:
    """Nodal factorization M = lam p x p with p unit and p.B' >= 0.

    `transversal[i]` is False where p is orthogonal to the centerline.
    """

    lam: NDArray[np.float64]
    p: NDArray[np.float64]
    transversal: NDArray[np.bool_]

    def __post_init__(self):
        n = len(self.lam)
        if self.p.shape != (n, 2) or self.transversal.shape != (n,):
            raise InputError("rank-one field arrays do not match")
        lengths = np.linalg.norm(self.p, axis=1)
        if np.abs(lengths - 1.0).max(initial=0.0) > 1e-10:
            raise InputError("rank-one directions must be unit vectors")

    @classmethod
    def along(cls, lam: ArrayLike, p: ArrayLike, chart: ReferenceChart) -> "RankOneField":
        """Field from explicit lam and p, with the sign of p fixed against B'."""
        values = np.asarray(lam, dtype=float)
        directions = np.asarray(p, dtype=float)
        directions = directions / np.linalg.norm(directions, axis=1)[:, None]
        along = np.einsum("ni,ni->n", directions, chart.D1)
        directions = np.where((along < 0.0)[:, None], -directions, directions)
        along = np.abs(along)
        return cls(values, directions, along > JACOBIAN_FLOOR)

    @property
    def matrices(self) -> NDArray[np.float64]:
        return self.lam[:, None, None] * np.einsum("ni,nj->nij", self.p, self.p)

    def straightened(self, chart: ReferenceChart) -> "RankOneField":
        """Replace p by B' wherever lam = 0, which leaves lam p x p unchanged."""
        flat = self.lam == 0.0
        if not np.any(flat):
            return self
        p = np.where(flat[:, None], chart.D1, self.p)
        along = np.einsum("ni,ni->n", p, chart.D1)
        return RankOneField(self.lam.copy(), p, np.abs(along) > JACOBIAN_FLOOR)


def rank_one_field(M: ArrayLike | Sequence[SymMat2], chart: ReferenceChart) -> RankOneField:
    """Factor nodal curvatures of vanishing determinant as lam p x p.

    lam = Tr M and p = M B' / |M B'|, or N where M B' = 0, with the sign chosen
    so that p.B' >= 0.

    Raises:
        InputError: if det M is not zero at some node
    """
    matrices = _matrix_stack(M)
    if matrices.shape != (chart.nodes, 2, 2):
        raise InputError("curvature field must have one 2x2 matrix per chart node")
    scale = 1.0 + np.einsum("nij,nij->n", matrices, matrices)
    dets = np.linalg.det(matrices)
    bad = np.flatnonzero(np.abs(dets) > RANK_TOLERANCE * scale)
    if len(bad):
        raise InputError(f"curvature has det M = {dets[bad[0]]:.6g} at node {bad[0]}, not rank one")
    lam = np.trace(matrices, axis1=1, axis2=2)
    image = np.einsum("nij,nj->ni", matrices, chart.D1)
    norms = np.linalg.norm(image, axis=1)
    vanishing = norms <= 1e-14 * np.sqrt(scale)
    safe = np.where(vanishing, 1.0, norms)
    p = np.where(vanishing[:, None], chart.normal, image / safe[:, None])
    along = np.einsum("ni,ni->n", p, chart.D1)
    p = np.where((along < 0.0)[:, None], -p, p)
    transversal = np.abs(along) > JACOBIAN_FLOOR
    if not np.all(transversal):
        logger.warning(
            "rank-one direction is normal to the centerline at %d nodes, first %d",
            int(np.sum(~transversal)),
            int(np.flatnonzero(~transversal)[0]),
        )
    return RankOneField(lam, p, transversal)


def direction_derivative(field: RankOneField, chart: ReferenceChart) -> NDArray[np.float64]:
    return np.gradient(field.p, chart.t, axis=0, edge_order=2)


def width_bound(
    field: RankOneField,
    chart: ReferenceChart,
    margin: float = 0.5,
    eta_max: float = ETA_MAX,
) -> float:
    """Half-width eta keeping det grad Phi away from zero.

    eta = margin min |p.B'| / (max |p_perp.p'| + 1e-12), capped by eta_max, so
    that |det grad Phi| >= (1 - margin) min |p.B'| on (-eta, eta) x I.

    Raises:
        InputError: if margin is outside (0, 1)
        NonTransversalError: if p.B' vanishes somewhere
    """
    if not 0.0 < margin < 1.0:
        raise InputError(f"margin must lie in (0, 1), got {margin}")
    along = np.abs(np.einsum("ni,ni->n", field.p, chart.D1))
    worst = int(np.argmin(along))
    if not along[worst] > JACOBIAN_FLOOR:
        raise NonTransversalError(
            f"surface: rank-one direction is orthogonal to the centerline at node {worst} "
            f"(t = {chart.t[worst]:.6g}), no ruled strip exists"
        )
    turning = np.abs(np.einsum("ni,ni->n", perp(field.p), direction_derivative(field, chart)))
    eta = margin * float(along[worst]) / (float(turning.max()) + JACOBIAN_FLOOR)
    return min(eta, eta_max)


def ruling_jacobians(
    field: RankOneField, chart: ReferenceChart, s: ArrayLike
) -> NDArray[np.float64]:
    """det grad Phi = -p.B' + s p_perp.p' on the grid (t_i, s_j)."""
    offsets = np.asarray(s, dtype=float)
    along = np.einsum("ni,ni->n", field.p, chart.D1)
    turning = np.einsum("ni,ni->n", perp(field.p), direction_derivative(field, chart))
    return -along[:, None] + offsets[None, :] * turning[:, None]


@dataclass(frozen=True, eq=False)
class RibbonMesh:
    """Triangulated ruled strip.

    Vertex i * len(s) + j sits at parameter (t_i, s_j); `flat` holds the
    matching points Phi(s_j, t_i) of the flat domain.
    """

    vertices: NDArray[np.float64]
    flat: NDArray[np.float64]
    faces: NDArray[np.int64]
    t: NDArray[np.float64]
    s: NDArray[np.float64]
    eta: float
    jacobian: NDArray[np.float64]

    def __post_init__(self):
        count = len(self.t) * len(self.s)
        if self.vertices.shape != (count, 3) or self.flat.shape != (count, 2):
            raise InputError("mesh vertex arrays do not match the parameter grid")
        if np.abs(self.s).max() > self.eta * (1.0 + 1e-12):
            raise InputError("mesh offsets exceed the half-width")
        corners = self.vertices[self.faces]
        areas = 0.5 * np.linalg.norm(
            np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=1
        )
        if len(areas) and not areas.min() > 0.0:
            raise NumericalError(f"surface: degenerate face {int(np.argmin(areas))}")

    @property
    def grid(self) -> NDArray[np.float64]:
        return self.vertices.reshape(len(self.t), len(self.s), 3)

    @property
    def flat_grid(self) -> NDArray[np.float64]:
        return self.flat.reshape(len(self.t), len(self.s), 2)

    @property
    def centerline_index(self) -> int:
        return len(self.s) // 2

    def metric_defect(self) -> float:
        """Largest deviation between the forward-difference first fundamental
        forms of the mesh and of the flat domain, over all cells."""
        dt = self.t[1] - self.t[0]
        ds = self.s[1] - self.s[0]
        deviations = []
        forms = []
        for points in (self.grid, self.flat_grid):
            along_s = (points[:-1, 1:] - points[:-1, :-1]) / ds
            along_t = (points[1:, :-1] - points[:-1, :-1]) / dt
            forms.append(
                (
                    np.einsum("...k,...k->...", along_s, along_s),
                    np.einsum("...k,...k->...", along_s, along_t),
                    np.einsum("...k,...k->...", along_t, along_t),
                )
            )
        for mesh_entry, flat_entry in zip(*forms):
            deviations.append(float(np.abs(mesh_entry - flat_entry).max()))
        return max(deviations)

    def centerline_normals(self) -> NDArray[np.float64]:
        """Unit normals at the interior nodes of s = 0, by central differences."""
        j = self.centerline_index
        points = self.grid
        along_t = points[2:, j] - points[:-2, j]
        along_s = points[1:-1, j + 1] - points[1:-1, j - 1]
        normals = np.cross(along_t, along_s)
        return normals / np.linalg.norm(normals, axis=1)[:, None]

    def normal_curvature(self) -> NDArray[np.float64]:
        """Second difference of the s = 0 curve projected on the normal."""
        j = self.centerline_index
        points = self.grid[:, j]
        dt = self.t[1] - self.t[0]
        second = (points[2:] - 2.0 * points[1:-1] + points[:-2]) / (dt * dt)
        return np.einsum("ni,ni->n", second, self.centerline_normals())


def _triangulate(vertices: NDArray[np.float64], nodes: int, samples: int) -> NDArray[np.int64]:
    i, j = np.meshgrid(np.arange(nodes - 1), np.arange(samples - 1), indexing="ij")
    v00 = (i * samples + j).ravel()
    v01 = v00 + 1
    v10 = v00 + samples
    v11 = v10 + 1
    main = np.linalg.norm(vertices[v00] - vertices[v11], axis=1)
    cross = np.linalg.norm(vertices[v01] - vertices[v10], axis=1)
    shorter = (main <= cross)[:, None]
    first = np.where(shorter, np.column_stack([v00, v10, v11]), np.column_stack([v00, v10, v01]))
    second = np.where(shorter, np.column_stack([v00, v11, v01]), np.column_stack([v01, v10, v11]))
    return np.stack([first, second], axis=1).reshape(-1, 3)


def ruled_surface(
    path: FramePath,
    field: RankOneField,
    chart: ReferenceChart,
    eta: float,
    samples: int = 9,
    margin: float = 0.5,
) -> RibbonMesh:
    """Developable strip X(t, s) = y + s [(p_perp.B') a1 + (p_perp.N) a2].

    The path must be integrated from `adapted_coefficients(field, chart)`.

    Raises:
        InputError: if samples is not an odd number >= 3
        WidthError: if eta exceeds the uncapped `width_bound(field, chart, margin)`
    """
    if samples < 3 or samples % 2 == 0:
        raise InputError(f"surface samples must be odd and >= 3, got {samples}")
    if len(path.t) != chart.nodes:
        raise InputError("frame path grid does not match the chart grid")
    bound = width_bound(field, chart, margin, math.inf)
    if not 0.0 < eta <= bound * (1.0 + 1e-12):
        raise WidthError(f"surface: half-width {eta:.6g} exceeds the admissible bound {bound:.6g}")
    s = np.linspace(-eta, eta, samples)
    s[samples // 2] = 0.0
    ruling = perp(field.p)
    tangent_part = np.einsum("ni,ni->n", ruling, chart.D1)
    normal_part = np.einsum("ni,ni->n", ruling, chart.normal)
    generator = tangent_part[:, None] * path.a1 + normal_part[:, None] * path.a2
    vertices = path.centerline[:, None, :] + s[None, :, None] * generator[:, None, :]
    flat = chart.centerline[:, None, :] + s[None, :, None] * ruling[:, None, :]
    vertices = vertices.reshape(-1, 3)
    faces = _triangulate(vertices, chart.nodes, samples)
    return RibbonMesh(
        vertices,
        flat.reshape(-1, 2),
        faces,
        path.t.copy(),
        s,
        float(eta),
        ruling_jacobians(field, chart, s),
    )


@dataclass(frozen=True, eq=False)
class Corrugation:
    """Oscillating rank-one curvature realizing a target on average.

    Cell k spans [edges[k], edges[k+1]]; its first 1 - theta[k] fraction carries
    curvature a[k] and the rest b[k] (Voigt vectors). `target` holds the cell
    midpoint targets, `field` the nodal matrices on the chart grid.
    """

    edges: NDArray[np.float64]
    theta: NDArray[np.float64]
    a: NDArray[np.float64]
    b: NDArray[np.float64]
    target: NDArray[np.float64]
    det_D: NDArray[np.float64]
    natural: NDArray[np.float64]
    cell_qbar: NDArray[np.float64]
    field: NDArray[np.float64]
    rigidity: Rigidity
    chart: ReferenceChart
    profile: Profile

    @property
    def cells(self) -> int:
        return len(self.theta)

    @cached_property
    def widths(self) -> NDArray[np.float64]:
        return np.diff(self.edges)

    def cell_energies(self) -> NDArray[np.float64]:
        """Exact mean energy density of each cell."""
        first = np.asarray(quad(self.rigidity, self.a - self.natural))
        second = np.asarray(quad(self.rigidity, self.b - self.natural))
        return ((1.0 - self.theta) * first + self.theta * second) * self.det_D

    def mean_energy(self) -> float:
        return float(np.sum(self.widths * self.cell_energies()) / np.sum(self.widths))

    def mean_qbar(self) -> float:
        return float(np.sum(self.widths * self.cell_qbar) / np.sum(self.widths))

    def energy_gap(self) -> float:
        """Mean corrugated energy minus the mean reduced density."""
        return self.mean_energy() - self.mean_qbar()

    def target_at(self, t: ArrayLike) -> NDArray[np.float64]:
        """Voigt target curvature assembled from the interpolated profile."""
        return _targets(self.chart, self.profile, np.asarray(t, dtype=float))

    def window_defect(self, window: int = 4) -> float:
        """max over windows of |window average of the field - target at the window centre|."""
        if window < 1 or self.cells % window:
            raise InputError(f"window of {window} cells does not tile {self.cells} cells")
        means = (1.0 - self.theta)[:, None] * self.a + self.theta[:, None] * self.b
        weights = self.widths.reshape(-1, window)
        averages = np.einsum("wk,wki->wi", weights, means.reshape(-1, window, 3))
        averages /= weights.sum(axis=1)[:, None]
        centres = 0.5 * (self.edges[:-1:window] + self.edges[window::window])
        return float(np.linalg.norm(averages - self.target_at(centres), axis=1).max())


def _natural_curvature(D: NDArray[np.float64], A: NDArray[np.float64]) -> NDArray[np.float64]:
    inverse = np.linalg.inv(D)
    return np.swapaxes(inverse, -1, -2) @ A @ inverse


def _targets(chart: ReferenceChart, profile: Profile, t: NDArray[np.float64]) -> NDArray[np.float64]:
    if profile.gamma is None:
        raise InputError("corrugation needs the optimal gamma of the profile")
    mu = np.interp(t, profile.t, profile.mu)
    tau = np.interp(t, profile.t, profile.tau)
    gamma = np.interp(t, profile.t, profile.gamma)
    return voigt_stack(assemble_curvature(chart.D_at(t), mu, tau, gamma))


def corrugate(
    chart: ReferenceChart,
    rigidity: Rigidity,
    natural: NaturalCurvature,
    profile: Profile,
    cells: int,
    threads: int | None = None,
) -> Corrugation:
    """Replace the target curvature by a rank-one field oscillating on `cells` cells.

    In each cell the target at the midpoint, scaled by sqrt(det D), is split by
    the two-point decomposition at z = 0; the endpoints are scaled back.

    Raises:
        InputError: if cells is not an even number >= 2
        DecompositionError: propagated from the decomposition
    """
    if cells < 2 or cells % 2:
        raise InputError(f"cells must be even and >= 2, got {cells}")
    profile.check_grid(chart)
    edges = np.linspace(chart.t[0], chart.t[-1], cells + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    target = _targets(chart, profile, mids)
    D = chart.D_at(mids)
    dets = np.linalg.det(D)
    roots = np.sqrt(dets)
    problem = RelaxationProblem(rigidity, 0.0)
    splits = parallel_map(
        lambda m: two_point_decomposition(problem, m), list(target * roots[:, None]), threads
    )
    theta = np.array([split.theta for split in splits])
    a = np.stack([split.a for split in splits]) / roots[:, None]
    b = np.stack([split.b for split in splits]) / roots[:, None]

    natural_cells = natural.matrices_at(mids)
    natural_voigt = voigt_stack(_natural_curvature(D, natural_cells))
    mu = np.interp(mids, profile.t, profile.mu)
    tau = np.interp(mids, profile.t, profile.tau)

    def density(k: int) -> float:
        ctx = DensityContext.build(rigidity, D[k], SymMat2.from_matrix(natural_cells[k]))
        value, _ = qbar(ctx, mu[k], tau[k])
        return float(value)

    cell_qbar = np.array(parallel_map(density, range(cells), threads))

    width = edges[1] - edges[0]
    index = np.minimum(((chart.t - edges[0]) / width).astype(int), cells - 1)
    local = (chart.t - edges[index]) / width
    nodal = np.where((local < 1.0 - theta[index])[:, None], a[index], b[index])
    logger.debug("corrugated %d cells, mean theta %.4f", cells, float(theta.mean()))
    return Corrugation(
        edges,
        theta,
        a,
        b,
        target,
        dets,
        natural_voigt,
        cell_qbar,
        unvoigt_stack(nodal),
        rigidity,
        chart,
        profile,
    )


@dataclass(frozen=True, eq=False)
class Strip:
    corrugation: Corrugation
    field: RankOneField
    path: FramePath
    mesh: RibbonMesh


def corrugated_strip(
    chart: ReferenceChart,
    rigidity: Rigidity,
    natural: NaturalCurvature,
    profile: Profile,
    cells: int,
    *,
    margin: float = 0.5,
    eta_max: float = ETA_MAX,
    samples: int = 9,
    initial_frame: ArrayLike | None = None,
    threads: int | None = None,
) -> Strip:
    """Corrugate the profile, factor the result and build its ruled strip.

    Raises:
        NonTransversalError: if a corrugation state has p orthogonal to B'
    """
    corrugation = corrugate(chart, rigidity, natural, profile, cells, threads)
    field = rank_one_field(corrugation.field, chart).straightened(chart)
    path = integrate_frame(*adapted_coefficients(field, chart), chart.t, initial_frame)
    eta = width_bound(field, chart, margin, eta_max)
    logger.info("ruled strip half-width %.6g over %d cells", eta, cells)
    return Strip(corrugation, field, path, ruled_surface(path, field, chart, eta, samples, margin))
