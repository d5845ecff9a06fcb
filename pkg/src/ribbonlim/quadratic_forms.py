import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ribbonlim.errors import BracketError, InputError, KernelSignError, NumericalError

logger = logging.getLogger(__name__)

Voigt3 = NDArray[np.float64]
Sign = Literal["plus", "minus"]

# det m = DET_FORM m . m for m = (M11, M22, 2 M12)
DET_FORM = np.array(
    [
        [0.0, 0.5, 0.0],
        [0.5, 0.0, 0.0],
        [0.0, 0.0, -0.25],
    ]
)
DET_FORM.flags.writeable = False

MAX_DOUBLINGS = 200
MAX_BISECTIONS = 200
KERNEL_THRESHOLD = 1e-8
KERNEL_RESIDUAL = 1e-8


@dataclass(frozen=True)
class SymMat2:
    """A symmetric 2x2 matrix stored through its three independent entries."""

    m11: float
    m12: float
    m22: float

    def __post_init__(self):
        for name in ("m11", "m12", "m22"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InputError(f"entry {name} of a symmetric matrix is not finite")
            object.__setattr__(self, name, value)

    @classmethod
    def zero(cls) -> "SymMat2":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_matrix(cls, matrix: ArrayLike) -> "SymMat2":
        """Build from a 2x2 array.

        Raises:
            InputError: if the array is not symmetric.
        """
        a = np.asarray(matrix, dtype=float)
        if a.shape != (2, 2):
            raise InputError(f"expected a 2x2 matrix, got shape {a.shape}")
        scale = max(1.0, float(np.abs(a).max()))
        if abs(a[0, 1] - a[1, 0]) > 1e-12 * scale:
            raise InputError("matrix is not symmetric")
        return cls(a[0, 0], 0.5 * (a[0, 1] + a[1, 0]), a[1, 1])

    def as_matrix(self) -> NDArray[np.float64]:
        return np.array([[self.m11, self.m12], [self.m12, self.m22]])

    @property
    def det(self) -> float:
        return self.m11 * self.m22 - self.m12 * self.m12

    @property
    def trace(self) -> float:
        return self.m11 + self.m22


def voigt(matrix: SymMat2) -> Voigt3:
    """Map a symmetric matrix to m = (M11, M22, 2 M12)."""
    return np.array([matrix.m11, matrix.m22, 2.0 * matrix.m12])


def unvoigt(m: ArrayLike) -> SymMat2:
    """Inverse of `voigt`."""
    v = np.asarray(m, dtype=float)
    return SymMat2(v[0], 0.5 * v[2], v[1])


def voigt_stack(matrices: ArrayLike) -> NDArray[np.float64]:
    """Vectorized `voigt` over a (..., 2, 2) array of symmetric matrices."""
    a = np.asarray(matrices, dtype=float)
    return np.stack([a[..., 0, 0], a[..., 1, 1], a[..., 0, 1] + a[..., 1, 0]], axis=-1)


def unvoigt_stack(m: ArrayLike) -> NDArray[np.float64]:
    """Vectorized `unvoigt`, returning (..., 2, 2) matrices."""
    v = np.asarray(m, dtype=float)
    off = 0.5 * v[..., 2]
    return np.stack(
        [np.stack([v[..., 0], off], axis=-1), np.stack([off, v[..., 1]], axis=-1)],
        axis=-2,
    )


def det_form(m: ArrayLike) -> float | NDArray[np.float64]:
    """Determinant of the symmetric matrix encoded by m, m1 m2 - m3^2 / 4."""
    v = np.asarray(m, dtype=float)
    value = v[..., 0] * v[..., 1] - 0.25 * v[..., 2] * v[..., 2]
    return float(value) if np.ndim(value) == 0 else value


def smallest_eigenvalue(matrix: ArrayLike) -> float:
    return float(np.linalg.eigvalsh(np.asarray(matrix, dtype=float))[0])


@dataclass(frozen=True, eq=False)
class Rigidity:
    """Bending rigidity in Voigt form, Q(M) = C m . m.

    `kind` records how the matrix was specified (general, orthotropic or
    isotropic) and `params` the parameters of that preset.
    """

    C: NDArray[np.float64]
    kind: str = "general"
    params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        c = np.array(self.C, dtype=float)
        if c.shape != (3, 3):
            raise InputError(f"rigidity must be a 3x3 matrix, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InputError("rigidity has non-finite entries")
        scale = max(1.0, float(np.abs(c).max()))
        if np.abs(c - c.T).max() > 1e-12 * scale:
            raise InputError("rigidity matrix is not symmetric")
        c = 0.5 * (c + c.T)
        smallest = smallest_eigenvalue(c)
        if not smallest > 0.0:
            raise InputError(
                f"rigidity is not positive definite (smallest eigenvalue {smallest:.6g})"
            )
        c.flags.writeable = False
        object.__setattr__(self, "C", c)

    @classmethod
    def voigt(
        cls, c11: float, c12: float, c13: float, c22: float, c23: float, c33: float
    ) -> "Rigidity":
        """Build from the upper triangle of C."""
        c = np.array([[c11, c12, c13], [c12, c22, c23], [c13, c23, c33]], dtype=float)
        return cls(c)

    @classmethod
    def from_tensor_entries(
        cls,
        k1111: float,
        k1122: float,
        k1112: float,
        k2222: float,
        k1222: float,
        k1212: float,
    ) -> "Rigidity":
        """Build from fourth-order entries, Q(M) = 1/2 K M . M."""
        return cls.voigt(
            0.5 * k1111, 0.5 * k1122, 0.5 * k1112, 0.5 * k2222, 0.5 * k1222, 0.5 * k1212
        )

    @classmethod
    def orthotropic(cls, k11: float, k12: float, k22: float, k33: float) -> "Rigidity":
        check_orthotropic(k11, k12, k22, k33)
        c = np.array([[k11, k12, 0.0], [k12, k22, 0.0], [0.0, 0.0, k33]], dtype=float)
        params = (("K11", k11), ("K12", k12), ("K22", k22), ("K33", k33))
        return cls(c, "orthotropic", tuple((k, float(v)) for k, v in params))

    @classmethod
    def isotropic(cls, k_mu: float, k_lambda: float) -> "Rigidity":
        """Q(M) = Kmu |M|^2 + Klambda (Tr M)^2."""
        if not k_mu > 0.0:
            raise InputError(f"isotropic rigidity needs Kmu > 0 (got {k_mu})")
        if not k_mu + 2.0 * k_lambda > 0.0:
            raise InputError(
                f"isotropic rigidity needs Kmu + 2 Klambda > 0 (got {k_mu + 2.0 * k_lambda})"
            )
        k11 = k_mu + k_lambda
        c = np.array(
            [[k11, k_lambda, 0.0], [k_lambda, k11, 0.0], [0.0, 0.0, 0.5 * k_mu]],
            dtype=float,
        )
        return cls(c, "isotropic", (("Kmu", float(k_mu)), ("Klambda", float(k_lambda))))

    @property
    def norm(self) -> float:
        """Spectral norm of C."""
        return float(np.linalg.eigvalsh(self.C)[-1])

    @cached_property
    def alphas(self) -> tuple[float, float]:
        """Cached (alpha_plus, alpha_minus)."""
        return alpha_constants(self)


def check_orthotropic(k11: float, k12: float, k22: float, k33: float) -> None:
    """Check that the orthotropic parameters give a positive definite C.

    Raises:
        InputError: naming the first failing inequality.
    """
    if not k11 > 0.0:
        raise InputError(f"orthotropic rigidity needs K11 > 0 (got {k11})")
    if not k22 > 0.0:
        raise InputError(f"orthotropic rigidity needs K22 > 0 (got {k22})")
    if not k33 > 0.0:
        raise InputError(f"orthotropic rigidity needs K33 > 0 (got {k33})")
    if not k12 * k12 < k11 * k22:
        raise InputError(
            f"orthotropic rigidity needs K12^2 < K11 K22 (got {k12 * k12} >= {k11 * k22})"
        )


def quad(rigidity: Rigidity, m: ArrayLike) -> float | NDArray[np.float64]:
    """Q(M) = C m . m, vectorized over leading axes of m."""
    v = np.asarray(m, dtype=float)
    value = np.einsum("...i,ij,...j->...", v, rigidity.C, v)
    return float(value) if np.ndim(value) == 0 else value


def _sign_factor(sign: Sign) -> float:
    if sign == "plus":
        return 1.0
    if sign == "minus":
        return -1.0
    raise InputError(f"sign must be 'plus' or 'minus', got {sign!r}")


def _largest_alpha(c: NDArray[np.float64], sign: Sign) -> float:
    """Largest alpha with C +/- alpha D positive semidefinite, by bisection."""
    factor = _sign_factor(sign)

    def smallest(alpha: float) -> float:
        return smallest_eigenvalue(c + factor * alpha * DET_FORM)

    lo, hi = 0.0, 1.0
    doublings = 0
    while smallest(hi) >= 0.0:
        lo, hi = hi, 2.0 * hi
        doublings += 1
        if doublings > MAX_DOUBLINGS:
            raise BracketError(
                f"quadratic_forms: no sign change of the smallest eigenvalue of "
                f"C {'+' if factor > 0 else '-'} alpha D after {MAX_DOUBLINGS} doublings"
            )
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        # adjacent floats
        if mid in (lo, hi):
            break
        if smallest(mid) >= 0.0:
            lo = mid
        else:
            hi = mid
    return lo


def alpha_constants(rigidity: Rigidity) -> tuple[float, float]:
    """Relaxation constants (alpha_plus, alpha_minus) of a rigidity.

    alpha_plus (alpha_minus) is the largest alpha such that Q(M) + alpha det M
    (Q(M) - alpha det M) is nonnegative for every M.
    """
    return _largest_alpha(rigidity.C, "plus"), _largest_alpha(rigidity.C, "minus")


def orthotropic_alphas(
    k11: float, k12: float, k22: float, k33: float
) -> tuple[float, float]:
    """Closed-form relaxation constants of an orthotropic rigidity."""
    check_orthotropic(k11, k12, k22, k33)
    root = math.sqrt(k11 * k22)
    return min(4.0 * k33, 2.0 * (root - k12)), 2.0 * (root + k12)


def orthotropic_eigenvalues(
    k11: float, k12: float, k22: float, k33: float, alpha: float, sign: Sign
) -> tuple[float, float]:
    """The two eigenvalues of C +/- alpha D that can vanish.

    The third eigenvalue of the orthotropic pencil is always positive.
    """
    factor = _sign_factor(sign)
    shear = k33 - factor * alpha / 4.0
    mean = 0.5 * (k11 + k22)
    radius = math.hypot(0.5 * (k11 - k22), k12 + factor * alpha / 2.0)
    return shear, mean - radius


def _fix_sign(v: NDArray[np.float64]) -> NDArray[np.float64]:
    for component in v:
        if abs(component) > 1e-12:
            return v if component > 0.0 else -v
    return v


def kernel_direction(
    rigidity: Rigidity, sign: Sign, threshold_scale: float = 1.0
) -> Voigt3:
    """Unit kernel vector of C +/- alpha D.

    The whole kernel is scanned: on the plus branch the vector with the most
    negative determinant is returned, on the minus branch the one with the
    most positive determinant. The sign is fixed so that the first nonzero
    component is positive.

    Args:
        rigidity: the rigidity
        sign: which branch, "plus" or "minus"
        threshold_scale: factor applied to the eigenvalue threshold
            KERNEL_THRESHOLD * |C| that decides kernel membership

    Returns:
        unit Voigt vector

    Raises:
        KernelSignError: if no kernel vector has the determinant sign the
            branch needs (det < 0 for plus, det > 0 for minus)
        NumericalError: if the returned vector leaves a residual above
            KERNEL_RESIDUAL * threshold_scale * max(1, |C|), which means the
            relaxation constants do not make the pencil singular
    """
    factor = _sign_factor(sign)
    alpha_plus, alpha_minus = rigidity.alphas
    alpha = alpha_plus if factor > 0 else alpha_minus
    pencil = rigidity.C + factor * alpha * DET_FORM
    eigenvalues, eigenvectors = np.linalg.eigh(pencil)
    threshold = KERNEL_THRESHOLD * threshold_scale * rigidity.norm
    basis = eigenvectors[:, eigenvalues <= threshold]
    if basis.shape[1] == 0:
        logger.warning(
            "no eigenvalue of the %s pencil below %.3e (smallest %.3e), using its eigenvector",
            sign,
            threshold,
            eigenvalues[0],
        )
        basis = eigenvectors[:, :1]
    restricted = basis.T @ DET_FORM @ basis
    _, coefficients = np.linalg.eigh(restricted)
    chosen = coefficients[:, 0] if factor > 0 else coefficients[:, -1]
    direction = basis @ chosen
    direction = _fix_sign(direction / np.linalg.norm(direction))
    determinant = det_form(direction)
    if (factor > 0 and not determinant < 0.0) or (factor < 0 and not determinant > 0.0):
        wanted = "negative" if factor > 0 else "positive"
        raise KernelSignError(
            f"quadratic_forms: no kernel vector of the {sign} pencil has {wanted} "
            f"determinant (best {determinant:.6g}, kernel dimension {basis.shape[1]})"
        )
    residual = float(np.linalg.norm(pencil @ direction))
    if residual > KERNEL_RESIDUAL * threshold_scale * max(1.0, rigidity.norm):
        raise NumericalError(
            f"quadratic_forms: kernel vector of the {sign} pencil has residual {residual:.3e}, "
            f"alpha = {alpha:.12g} does not make the pencil singular"
        )
    return direction
