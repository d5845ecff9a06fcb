import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Mapping

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import cumulative_trapezoid

from ribbonlim.errors import InputError
from ribbonlim.quadratic_forms import SymMat2

logger = logging.getLogger(__name__)

CHART_KINDS = ("rectangle", "arc", "sheared", "sampled")
CHART_COLUMNS = ("t", "D11", "D21", "D12", "D22")
NATURAL_COLUMNS = ("Ao11", "Ao12", "Ao22")


def perp(a: ArrayLike) -> NDArray[np.float64]:
    """e3 wedge a for planar vectors, (a1, a2) -> (-a2, a1)."""
    v = np.asarray(a, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def uniform_grid(length: float, intervals: int) -> NDArray[np.float64]:
    """N + 1 uniform nodes on [-length/2, length/2]."""
    if not length > 0.0:
        raise InputError(f"length must be positive, got {length}")
    if intervals < 2:
        raise InputError(f"the grid needs at least 2 intervals, got {intervals}")
    return np.linspace(-0.5 * length, 0.5 * length, intervals + 1)


@dataclass(frozen=True, eq=False)
class ReferenceChart:
    """Reference chart sampled along the centerline.

    `D[i]` holds the tangent basis at node i as columns (D1, D2), `kappa[i]`
    the geodesic curvature D1'.(e3 wedge D1) and `centerline[i]` the point
    B(t_i), anchored so that B vanishes at the first node.
    """

    t: NDArray[np.float64]
    D: NDArray[np.float64]
    kappa: NDArray[np.float64]
    centerline: NDArray[np.float64]
    kind: str = "sampled"
    params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        D = np.array(self.D, dtype=float)
        kappa = np.array(self.kappa, dtype=float)
        centerline = np.array(self.centerline, dtype=float)
        if self.kind not in CHART_KINDS:
            raise InputError(f"unknown chart kind {self.kind!r}")
        if t.ndim != 1 or len(t) < 3:
            raise InputError("a chart needs at least 3 nodes")
        n = len(t)
        if D.shape != (n, 2, 2) or kappa.shape != (n,) or centerline.shape != (n, 2):
            raise InputError("chart arrays do not match the grid")
        steps = np.diff(t)
        if not np.all(steps > 0.0) or np.ptp(steps) > 1e-9 * steps.mean():
            raise InputError("chart grid must be uniform and increasing")
        lengths = np.linalg.norm(D[:, :, 0], axis=1)
        bad = np.flatnonzero(np.abs(lengths - 1.0) > 1e-10)
        if len(bad):
            raise InputError(
                f"|D1| = {lengths[bad[0]]:.12g} at node {bad[0]}, the centerline must be unit speed"
            )
        dets = np.linalg.det(D)
        bad = np.flatnonzero(~(dets > 0.0))
        if len(bad):
            raise InputError(f"det D = {dets[bad[0]]:.6g} at node {bad[0]}, must be positive")
        for name, value in (("t", t), ("D", D), ("kappa", kappa), ("centerline", centerline)):
            value.flags.writeable = False
            object.__setattr__(self, name, value)

    @property
    def nodes(self) -> int:
        return len(self.t)

    @property
    def length(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def spacing(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def D1(self) -> NDArray[np.float64]:
        return self.D[:, :, 0]

    @property
    def D2(self) -> NDArray[np.float64]:
        return self.D[:, :, 1]

    @cached_property
    def det(self) -> NDArray[np.float64]:
        return np.linalg.det(self.D)

    @cached_property
    def normal(self) -> NDArray[np.float64]:
        """N = e3 wedge B', the in-plane normal of the centerline."""
        return perp(self.D1)

    def D_at(self, t: ArrayLike) -> NDArray[np.float64]:
        """Entrywise linear interpolation of D."""
        s = np.asarray(t, dtype=float)
        flat = self.D.reshape(self.nodes, 4)
        columns = [np.interp(s, self.t, flat[:, k]) for k in range(4)]
        return np.stack(columns, axis=-1).reshape(s.shape + (2, 2))

    def resample(self) -> "ReferenceChart":
        """The same nodal data as a sampled chart, curvature recomputed by differences."""
        return sampled_chart(self.t, self.D)


def _rotation_stack(angles: NDArray[np.float64]) -> NDArray[np.float64]:
    c, s = np.cos(angles), np.sin(angles)
    return np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2)


def builtin_chart(
    kind: str, params: Mapping[str, float], length: float, intervals: int
) -> ReferenceChart:
    """Rectangle, annular arc or sheared chart on N + 1 uniform nodes.

    Args:
        kind: "rectangle", "arc" or "sheared"
        params: {"kappa0"} for arc, {"d12", "d22"} for sheared
        length: length of the centerline
        intervals: number of grid intervals N

    Raises:
        InputError: for a non-embedded arc, d22 <= 0, or an unknown kind
    """
    t = uniform_grid(length, intervals)
    n = len(t)
    start = t[0]
    straight = np.column_stack([t - start, np.zeros(n)])
    if kind == "rectangle":
        D = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
        return ReferenceChart(t, D, np.zeros(n), straight, "rectangle")
    if kind == "arc":
        kappa0 = float(params["kappa0"])
        if not abs(kappa0) * length < 2.0 * math.pi:
            raise InputError(
                f"arc chart is not embedded: |kappa0| * length = {abs(kappa0) * length:.6g} >= 2 pi"
            )
        D = _rotation_stack(kappa0 * t)
        if kappa0 == 0.0:
            centerline = straight
        else:
            centerline = np.column_stack(
                [
                    (np.sin(kappa0 * t) - math.sin(kappa0 * start)) / kappa0,
                    (math.cos(kappa0 * start) - np.cos(kappa0 * t)) / kappa0,
                ]
            )
        return ReferenceChart(
            t, D, np.full(n, kappa0), centerline, "arc", (("kappa0", kappa0),)
        )
    if kind == "sheared":
        d12 = float(params["d12"])
        d22 = float(params["d22"])
        if not d22 > 0.0:
            raise InputError(f"sheared chart needs d22 > 0, got {d22}")
        D = np.broadcast_to(np.array([[1.0, d12], [0.0, d22]]), (n, 2, 2)).copy()
        return ReferenceChart(
            t, D, np.zeros(n), straight, "sheared", (("d12", d12), ("d22", d22))
        )
    raise InputError(f"unknown built-in chart {kind!r}")


def sampled_chart(t: ArrayLike, D: ArrayLike) -> ReferenceChart:
    """Chart from nodal D; curvature by second-order differences, B by quadrature."""
    grid = np.asarray(t, dtype=float)
    frames = np.asarray(D, dtype=float)
    d1 = frames[:, :, 0]
    derivative = np.gradient(d1, grid, axis=0, edge_order=2)
    kappa = np.einsum("ni,ni->n", derivative, perp(d1))
    centerline = cumulative_trapezoid(d1, grid, axis=0, initial=0.0)
    return ReferenceChart(grid, frames, kappa, centerline, "sampled")


def geodesic_curvature(chart: ReferenceChart, t: float) -> float:
    """Geodesic curvature of the centerline at t."""
    if not chart.t[0] <= t <= chart.t[-1]:
        raise InputError(f"t = {t} is outside the chart interval")
    return float(np.interp(t, chart.t, chart.kappa))


def contravariant(D: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Dual basis (D^1, D^2), the columns of D^-T."""
    a = np.asarray(D, dtype=float)
    det = float(np.linalg.det(a))
    if not det > 1e-14:
        raise InputError(f"chart matrix is singular or reflecting (det {det:.6g})")
    dual = np.linalg.inv(a).T
    return dual[:, 0], dual[:, 1]


def assemble_curvature(
    D: ArrayLike, mu: ArrayLike, tau: ArrayLike, gamma: ArrayLike
) -> NDArray[np.float64]:
    """M = mu D^1 x D^1 + tau (D^1 x D^2 + D^2 x D^1) + gamma D^2 x D^2.

    Vectorized over a stack of D of shape (..., 2, 2) and matching profiles.
    Equivalently M = D^-T A D^-1 with A = (mu, tau; tau, gamma).
    """
    frames = np.asarray(D, dtype=float)
    dets = np.linalg.det(frames)
    if np.any(~(dets > 1e-14)):
        raise InputError("chart matrix is singular or reflecting")
    dual = np.swapaxes(np.linalg.inv(frames), -1, -2)
    upper = np.asarray(mu, dtype=float)
    off = np.asarray(tau, dtype=float)
    lower = np.asarray(gamma, dtype=float)
    A = np.stack(
        [np.stack([upper, off], axis=-1), np.stack([off, lower], axis=-1)], axis=-2
    )
    return dual @ A @ np.swapaxes(dual, -1, -2)


def frame_coefficients(
    chart: ReferenceChart,
    mu: ArrayLike,
    tau: ArrayLike,
    gamma: ArrayLike | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Coefficients (kappa_M, mu_M, tau_M) of the adapted frame ODE.

    mu_M = M D1.D1 and tau_M = M D1.(e3 wedge D1) for the curvature M
    assembled from the profiles; gamma does not affect either.
    """
    mu = np.asarray(mu, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if mu.shape != (chart.nodes,) or tau.shape != (chart.nodes,):
        raise InputError("profiles must be sampled on the chart grid")
    lower = np.zeros_like(mu) if gamma is None else np.asarray(gamma, dtype=float)
    M = assemble_curvature(chart.D, mu, tau, lower)
    bent = np.einsum("nij,nj->ni", M, chart.D1)
    mu_m = np.einsum("ni,ni->n", bent, chart.D1)
    tau_m = np.einsum("ni,ni->n", bent, chart.normal)
    return chart.kappa.copy(), mu_m, tau_m


@dataclass(frozen=True, eq=False)
class NaturalCurvature:
    """Natural curvature A°, constant or a nodal table interpolated linearly.

    `values` has shape (K, 2, 2); `t` is None for a constant field.
    """

    values: NDArray[np.float64]
    t: NDArray[np.float64] | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 3 or values.shape[1:] != (2, 2):
            raise InputError("natural curvature entries must be 2x2 matrices")
        if not np.all(np.isfinite(values)):
            raise InputError("natural curvature has non-finite entries")
        asymmetry = np.abs(values[:, 0, 1] - values[:, 1, 0])
        bad = np.flatnonzero(asymmetry > 1e-12 * np.maximum(1.0, np.abs(values).max()))
        if len(bad):
            raise InputError(f"natural curvature is not symmetric at entry {bad[0]}")
        if self.t is None:
            if len(values) != 1:
                raise InputError("a constant natural curvature has exactly one value")
        else:
            t = np.array(self.t, dtype=float)
            if t.shape != (len(values),) or not np.all(np.diff(t) > 0.0):
                raise InputError("natural curvature table needs increasing abscissae")
            t.flags.writeable = False
            object.__setattr__(self, "t", t)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zero(cls) -> "NaturalCurvature":
        return cls(np.zeros((1, 2, 2)))

    @classmethod
    def constant(cls, value: SymMat2) -> "NaturalCurvature":
        return cls(value.as_matrix()[None])

    @classmethod
    def table(cls, t: ArrayLike, a11: ArrayLike, a12: ArrayLike, a22: ArrayLike) -> "NaturalCurvature":
        first = np.asarray(a11, dtype=float)
        off = np.asarray(a12, dtype=float)
        last = np.asarray(a22, dtype=float)
        values = np.stack(
            [np.stack([first, off], axis=-1), np.stack([off, last], axis=-1)], axis=-2
        )
        return cls(values, np.asarray(t, dtype=float))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)

    def matrices_at(self, t: ArrayLike) -> NDArray[np.float64]:
        """A° at the given abscissae, shape t.shape + (2, 2)."""
        s = np.asarray(t, dtype=float)
        if self.t is None:
            return np.broadcast_to(self.values[0], s.shape + (2, 2)).copy()
        flat = self.values.reshape(len(self.values), 4)
        columns = [np.interp(s, self.t, flat[:, k]) for k in range(4)]
        return np.stack(columns, axis=-1).reshape(s.shape + (2, 2))

    def at(self, t: float) -> SymMat2:
        return SymMat2.from_matrix(self.matrices_at(t))


def read_table(path: str | Path) -> NDArray[np.void]:
    """Read a CSV table with a column-name line, skipping `#` comment lines."""
    with open(path, encoding="utf-8") as handle:
        lines = [line for line in handle if line.strip() and not line.lstrip().startswith("#")]
    if len(lines) < 2:
        raise InputError(f"{path}: expected a column-name line and at least one row")
    return np.atleast_1d(np.genfromtxt(lines, delimiter=",", names=True, dtype=float))


def load_chart_csv(path: str | Path) -> tuple[ReferenceChart, NaturalCurvature | None]:
    """Read a sampled chart and, when present, a natural curvature table.

    Columns t, D11, D21, D12, D22 are required; kappa is cross-checked
    against the difference quotient; Ao11, Ao12, Ao22 give A°.
    """
    data = read_table(path)
    names = data.dtype.names or ()
    missing = [name for name in CHART_COLUMNS if name not in names]
    if missing:
        raise InputError(f"{path}: missing chart columns {', '.join(missing)}")
    D = np.stack(
        [
            np.stack([data["D11"], data["D12"]], axis=-1),
            np.stack([data["D21"], data["D22"]], axis=-1),
        ],
        axis=-2,
    )
    chart = sampled_chart(data["t"], D)
    if "kappa" in names:
        deviation = float(np.abs(chart.kappa - data["kappa"]).max())
        if deviation > 1e-3 * max(1.0, float(np.abs(data["kappa"]).max())):
            logger.warning(
                "%s: kappa column differs from the difference quotient by %.3e", path, deviation
            )
    natural = None
    if all(name in names for name in NATURAL_COLUMNS):
        natural = NaturalCurvature.table(data["t"], data["Ao11"], data["Ao12"], data["Ao22"])
    return chart, natural


def load_natural_csv(path: str | Path) -> NaturalCurvature:
    """Read a natural curvature table with columns t, Ao11, Ao12, Ao22."""
    data = read_table(path)
    names = data.dtype.names or ()
    missing = [name for name in ("t",) + NATURAL_COLUMNS if name not in names]
    if missing:
        raise InputError(f"{path}: missing natural curvature columns {', '.join(missing)}")
    return NaturalCurvature.table(data["t"], data["Ao11"], data["Ao12"], data["Ao22"])
