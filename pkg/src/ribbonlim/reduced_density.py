import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ribbonlim.errors import InputError
from ribbonlim.geometry import NaturalCurvature, ReferenceChart
from ribbonlim.quadratic_forms import (
    Rigidity,
    SymMat2,
    check_orthotropic,
    voigt_stack,
)

logger = logging.getLogger(__name__)

Values = float | NDArray[np.float64]


def _outer(u: NDArray[np.float64], v: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.multiply.outer(u, v)


@dataclass(frozen=True, eq=False)
class DensityContext:
    """Everything the reduced density depends on at one abscissa."""

    rigidity: Rigidity
    alpha_plus: float
    alpha_minus: float
    D: NDArray[np.float64] = field(default_factory=lambda: np.eye(2))
    natural: SymMat2 = field(default_factory=SymMat2.zero)

    def __post_init__(self):
        D = np.array(self.D, dtype=float)
        if D.shape != (2, 2):
            raise InputError(f"chart matrix must be 2x2, got shape {D.shape}")
        det = float(np.linalg.det(D))
        if not det > 1e-14:
            raise InputError(f"chart matrix must have positive determinant, got {det:.6g}")
        expected_plus, expected_minus = self.rigidity.alphas
        if abs(self.alpha_plus - expected_plus) > 1e-9 * max(1.0, expected_plus) or abs(
            self.alpha_minus - expected_minus
        ) > 1e-9 * max(1.0, expected_minus):
            raise InputError(
                f"relaxation constants ({self.alpha_plus}, {self.alpha_minus}) do not match "
                f"the rigidity ({expected_plus}, {expected_minus})"
            )
        D.flags.writeable = False
        object.__setattr__(self, "D", D)

    @classmethod
    def build(
        cls,
        rigidity: Rigidity,
        D: ArrayLike | None = None,
        natural: SymMat2 | None = None,
    ) -> "DensityContext":
        alpha_plus, alpha_minus = rigidity.alphas
        return cls(
            rigidity,
            alpha_plus,
            alpha_minus,
            np.eye(2) if D is None else np.asarray(D, dtype=float),
            SymMat2.zero() if natural is None else natural,
        )

    @cached_property
    def det_D(self) -> float:
        return float(np.linalg.det(self.D))

    @cached_property
    def coefficients(self) -> NDArray[np.float64]:
        """Voigt images of D^-T E D^-1 for E in the basis of (mu, tau, gamma) and for E = A°."""
        inverse = np.linalg.inv(self.D)
        e11 = np.array([[1.0, 0.0], [0.0, 0.0]])
        e12 = np.array([[0.0, 1.0], [1.0, 0.0]])
        e22 = np.array([[0.0, 0.0], [0.0, 1.0]])
        images = [inverse.T @ e @ inverse for e in (e11, e12, e22, self.natural.as_matrix())]
        return voigt_stack(np.stack(images))


def _minimize_kinked(
    a2: Values,
    a1: Values,
    a0: Values,
    slope: Values,
    offset: Values,
    w_plus: float,
    w_minus: float,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Exact minimum over g of
    a2 g^2 + a1 g + a0 + w_plus (slope g - offset)^+ + w_minus (slope g - offset)^-.

    Each quadratic branch is minimized in closed form and clamped to its
    half-line around the kink; the smaller of the two is kept, ties going to
    the candidate of smaller modulus. a2 must be positive.
    """
    a2, a1, a0, slope, offset = np.broadcast_arrays(
        *(np.asarray(x, dtype=float) for x in (a2, a1, a0, slope, offset))
    )

    def energy(g: NDArray[np.float64]) -> NDArray[np.float64]:
        excess = slope * g - offset
        return (
            a2 * g * g
            + a1 * g
            + a0
            + w_plus * np.maximum(excess, 0.0)
            + w_minus * np.maximum(-excess, 0.0)
        )

    flat = slope == 0.0
    kink = np.divide(offset, slope, out=np.zeros_like(offset), where=~flat)
    upper = -(a1 + w_plus * slope) / (2.0 * a2)
    lower = -(a1 - w_minus * slope) / (2.0 * a2)
    rising = slope > 0.0
    # the plus branch lies on the side of the kink where slope * g > offset
    upper = np.where(rising, np.maximum(upper, kink), np.minimum(upper, kink))
    lower = np.where(rising, np.minimum(lower, kink), np.maximum(lower, kink))
    free = -a1 / (2.0 * a2)
    upper = np.where(flat, free, upper)
    lower = np.where(flat, free, lower)

    upper_value = energy(upper)
    lower_value = energy(lower)
    tie = np.abs(upper_value - lower_value) <= 1e-15 * (1.0 + np.abs(lower_value))
    prefer_upper = np.where(tie, np.abs(upper) < np.abs(lower), upper_value < lower_value)
    value = np.where(prefer_upper, upper_value, lower_value)
    argmin = np.where(prefer_upper, upper, lower)
    return value, argmin


def _finish(value: NDArray[np.float64], argmin: NDArray[np.float64]) -> tuple[Values, Values]:
    value = np.maximum(value, 0.0) + 0.0
    argmin = argmin + 0.0
    if value.ndim == 0:
        return float(value), float(argmin)
    return value, argmin


def qbar(ctx: DensityContext, mu: ArrayLike, tau: ArrayLike) -> tuple[Values, Values]:
    """Reduced density and its optimal gamma, vectorized over (mu, tau).

    Minimizes over gamma
        Q(D^-T (A - A°) D^-1) det D + [a+ (det A)^+ + a- (det A)^-] / det D
    with A = (mu, tau; tau, gamma). The minimization is exact.

    Returns:
        (value, gamma_star), floats for scalar input
    """
    mu, tau = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(tau, dtype=float))
    C = ctx.rigidity.C
    v_mu, v_tau, v_gamma, v_natural = ctx.coefficients
    base = mu[..., None] * v_mu + tau[..., None] * v_tau - v_natural
    det_d = ctx.det_D
    a2 = det_d * float(v_gamma @ C @ v_gamma)
    a1 = 2.0 * det_d * (base @ C @ v_gamma)
    a0 = det_d * np.einsum("...i,ij,...j->...", base, C, base)
    value, argmin = _minimize_kinked(
        a2, a1, a0, mu / det_d, tau * tau / det_d, ctx.alpha_plus, ctx.alpha_minus
    )
    return _finish(value, argmin)


def qbar_contravariant(
    ctx: DensityContext, mu: ArrayLike, tau: ArrayLike
) -> tuple[Values, Values]:
    """Reduced density through M = mu D^1 x D^1 + tau (D^1 x D^2 + D^2 x D^1) + gamma D^2 x D^2.

    Works with the relaxed integrand of M - D^-T A° D^-1 and the determinant
    of M directly; it must agree with `qbar`.
    """
    mu, tau = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(tau, dtype=float))
    dual = np.linalg.inv(ctx.D).T
    first, second = dual[:, 0], dual[:, 1]
    det_d = ctx.det_D
    fixed = (
        mu[..., None, None] * _outer(first, first)
        + tau[..., None, None] * (_outer(first, second) + _outer(second, first))
    )
    natural = dual @ ctx.natural.as_matrix() @ dual.T
    rank_one = _outer(second, second)
    C = ctx.rigidity.C
    base = voigt_stack(fixed - natural)
    direction = voigt_stack(rank_one)
    # det(P + g q x q) = det P + g q . adj(P) q
    adjugate = np.stack(
        [
            np.stack([fixed[..., 1, 1], -fixed[..., 0, 1]], axis=-1),
            np.stack([-fixed[..., 1, 0], fixed[..., 0, 0]], axis=-1),
        ],
        axis=-2,
    )
    slope = np.einsum("i,...ij,j->...", second, adjugate, second)
    offset = -np.linalg.det(fixed)
    value, argmin = _minimize_kinked(
        det_d * float(direction @ C @ direction),
        2.0 * det_d * (base @ C @ direction),
        det_d * np.einsum("...i,ij,...j->...", base, C, base),
        slope,
        offset,
        ctx.alpha_plus * det_d,
        ctx.alpha_minus * det_d,
    )
    return _finish(value, argmin)


def sadowsky_corrected(mu: ArrayLike, tau: ArrayLike) -> Values:
    """Reduced density of an isotropic ribbon with Q = |M|^2 on a flat strip."""
    mu, tau = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(tau, dtype=float))
    bending = mu * mu
    twisting = tau * tau
    first = np.divide(
        (bending + twisting) ** 2, bending, out=np.zeros_like(bending), where=bending > twisting
    )
    value = np.where(bending > twisting, first, 4.0 * twisting)
    return float(value) if value.ndim == 0 else value


def orthotropic_qbar(
    k11: float, k12: float, k22: float, k33: float, mu: ArrayLike, tau: ArrayLike
) -> Values:
    """Closed-form reduced density of an orthotropic ribbon on a flat strip.

    Raises:
        InputError: if 4 K33 < 2 (sqrt(K11 K22) - K12), where no closed form is claimed
    """
    check_orthotropic(k11, k12, k22, k33)
    root = math.sqrt(k11 * k22)
    if 4.0 * k33 < 2.0 * (root - k12):
        raise InputError(
            "orthotropic closed form needs 4 K33 >= 2 (sqrt(K11 K22) - K12), "
            f"got {4.0 * k33} < {2.0 * (root - k12)}"
        )
    mu, tau = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(tau, dtype=float))
    bending = mu * mu
    twisting = tau * tau
    kinked = math.sqrt(k11) * bending > math.sqrt(k22) * twisting
    first = np.divide(
        k11 * bending * bending + (2.0 * k12 + 4.0 * k33) * bending * twisting + k22 * twisting * twisting,
        bending,
        out=np.zeros_like(bending),
        where=kinked,
    )
    value = np.where(kinked, first, (4.0 * k33 + 2.0 * root + 2.0 * k12) * twisting)
    return float(value) if value.ndim == 0 else value


def contexts_along(
    chart: ReferenceChart, rigidity: Rigidity, natural: NaturalCurvature
) -> list[DensityContext]:
    """One density context per chart node."""
    alpha_plus, alpha_minus = rigidity.alphas
    targets = natural.matrices_at(chart.t)
    return [
        DensityContext(rigidity, alpha_plus, alpha_minus, D, SymMat2.from_matrix(target))
        for D, target in zip(chart.D, targets)
    ]


@dataclass(frozen=True)
class _StackedContexts:
    rigidity: Rigidity
    alpha_plus: float
    alpha_minus: float
    coefficients: NDArray[np.float64]
    det_D: NDArray[np.float64]


def _stack(contexts: Sequence[DensityContext]) -> _StackedContexts:
    if not contexts:
        raise InputError("no density contexts given")
    first = contexts[0]
    for ctx in contexts[1:]:
        if not np.array_equal(ctx.rigidity.C, first.rigidity.C):
            raise InputError("contexts along a ribbon must share one rigidity")
    return _StackedContexts(
        first.rigidity,
        first.alpha_plus,
        first.alpha_minus,
        np.stack([ctx.coefficients for ctx in contexts]),
        np.array([ctx.det_D for ctx in contexts]),
    )


def qbar_along(
    contexts: Sequence[DensityContext], mu: ArrayLike, tau: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Nodewise `qbar` for one (mu, tau) pair per context."""
    stacked = _stack(contexts)
    mu = np.asarray(mu, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if mu.shape != (len(contexts),) or tau.shape != (len(contexts),):
        raise InputError("profiles must have one value per context")
    C = stacked.rigidity.C
    v_mu, v_tau, v_gamma, v_natural = (stacked.coefficients[:, k] for k in range(4))
    base = mu[:, None] * v_mu + tau[:, None] * v_tau - v_natural
    det_d = stacked.det_D
    value, argmin = _minimize_kinked(
        det_d * np.einsum("ni,ij,nj->n", v_gamma, C, v_gamma),
        2.0 * det_d * np.einsum("ni,ij,nj->n", base, C, v_gamma),
        det_d * np.einsum("ni,ij,nj->n", base, C, base),
        mu / det_d,
        tau * tau / det_d,
        stacked.alpha_plus,
        stacked.alpha_minus,
    )
    return np.maximum(value, 0.0) + 0.0, argmin + 0.0
