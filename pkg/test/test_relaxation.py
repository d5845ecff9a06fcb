import math

import numpy as np
import pytest

from ribbonlim.errors import DecompositionError, InputError
from ribbonlim.quadratic_forms import Rigidity, SymMat2, det_form, quad, voigt
from ribbonlim.relaxation import (
    RelaxationProblem,
    brute_force_biconjugate,
    constraint_points,
    isotropic_relaxed,
    relaxed_integrand,
    two_point_decomposition,
)
from ribbonlim.validation import ORACLE_POINTS, ORACLE_REFINEMENT


@pytest.fixture
def sadowsky():
    return Rigidity.orthotropic(1.0, 0.0, 1.0, 0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(5)


def random_rigidity(rng):
    factor = rng.normal(scale=0.7, size=(3, 3))
    return Rigidity(factor @ factor.T + 0.5 * np.eye(3))


def test_relaxed_integrand_on_the_constraint_is_q(sadowsky):
    """On det m = z there is no penalty."""
    m = np.array([2.0, 0.5, 0.0])
    assert relaxed_integrand(RelaxationProblem(sadowsky, 1.0), m) == pytest.approx(quad(sadowsky, m))


def test_relaxed_integrand_penalties(sadowsky):
    problem = RelaxationProblem(sadowsky, 0.0)
    # det = 1, Q = 2, alpha_plus = 2
    assert relaxed_integrand(problem, [1.0, 1.0, 0.0]) == pytest.approx(4.0, abs=1e-9)
    # det = -1 / 4 * 4 = -1, Q = 0.5 * 4 = 2, alpha_minus = 2
    assert relaxed_integrand(problem, [0.0, 0.0, 2.0]) == pytest.approx(4.0, abs=1e-9)


def test_relaxed_integrand_is_vectorized(sadowsky, rng):
    problem = RelaxationProblem(sadowsky, 0.3)
    ms = rng.normal(size=(6, 3))
    values = relaxed_integrand(problem, ms)
    assert values.shape == (6,)
    assert values[4] == pytest.approx(relaxed_integrand(problem, ms[4]))


def test_problem_rejects_infinite_level(sadowsky):
    with pytest.raises(InputError, match="finite"):
        RelaxationProblem(sadowsky, math.inf)


def test_decomposition_points_lie_on_the_constraint(rng):
    """Tests that a and b have det = z, average to m and realize the formula."""
    for _ in range(1000):
        problem = RelaxationProblem(random_rigidity(rng), float(rng.uniform(-2.0, 2.0)))
        m = rng.uniform(-1.5, 1.5, size=3)
        split = two_point_decomposition(problem, m)
        assert 0.0 <= split.theta <= 1.0
        assert det_form(split.a) == pytest.approx(problem.z, abs=1e-9)
        assert det_form(split.b) == pytest.approx(problem.z, abs=1e-9)
        assert split.mean == pytest.approx(m, abs=1e-12)
        expected = relaxed_integrand(problem, m)
        assert abs(split.value - expected) <= 1e-8 * max(1.0, abs(expected))


def test_relaxed_integrand_is_midpoint_convex(rng):
    for _ in range(1000):
        problem = RelaxationProblem(random_rigidity(rng), float(rng.uniform(-2.0, 2.0)))
        m, other = rng.uniform(-2.0, 2.0, size=(2, 3))
        middle = relaxed_integrand(problem, 0.5 * (m + other))
        assert middle <= 0.5 * relaxed_integrand(problem, m) + 0.5 * relaxed_integrand(problem, other) + 1e-9


def test_decomposition_on_the_constraint_is_trivial(sadowsky):
    m = np.array([1.0, 1.0, 0.0])
    split = two_point_decomposition(RelaxationProblem(sadowsky, 1.0), m)
    assert split.theta == 0.0
    assert np.array_equal(split.a, m)
    assert np.array_equal(split.b, m)


def test_sadowsky_decomposition_of_identity(sadowsky):
    """m = (1, 1, 0) at z = 0 splits along (1, -1, 0) into two rank-one states."""
    split = two_point_decomposition(RelaxationProblem(sadowsky, 0.0), [1.0, 1.0, 0.0])
    assert split.theta == pytest.approx(0.5)
    assert sorted([tuple(np.round(split.a, 12)), tuple(np.round(split.b, 12))]) == [
        (0.0, 2.0, 0.0),
        (2.0, 0.0, 0.0),
    ]
    assert split.value == pytest.approx(4.0, abs=1e-9)


def test_decomposition_checks_its_energy(sadowsky, mocker):
    """A two-point energy 1e-7 away from the formula is rejected."""
    mocker.patch("ribbonlim.relaxation.relaxed_integrand", return_value=4.0 * (1.0 + 1e-7))
    with pytest.raises(DecompositionError, match="differs from the relaxed integrand"):
        two_point_decomposition(RelaxationProblem(sadowsky, 0.0), [1.0, 1.0, 0.0])


def test_isotropic_closed_form():
    """Tests (Kmu + Klambda)|M|^2 + 2 (Kmu + Klambda)|det M| against the formula."""
    rigidity = Rigidity.isotropic(1.0, 0.5)
    problem = RelaxationProblem(rigidity, 0.0)
    for matrix in (SymMat2(1.0, 0.0, 1.0), SymMat2(0.3, 0.8, -0.2), SymMat2(2.0, -0.5, 0.7)):
        expected = relaxed_integrand(problem, voigt(matrix))
        assert isotropic_relaxed(1.0, 0.5, matrix.as_matrix()) == pytest.approx(expected, rel=1e-9)


def test_constraint_points_satisfy_the_constraint(sadowsky):
    problem = RelaxationProblem(sadowsky, -0.5)
    points = constraint_points(problem, 4.0, 20)
    assert len(points) > 0
    assert np.abs(det_form(points) + 0.5).max() < 1e-12
    assert np.abs(points).max() <= 4.0


def test_oracle_bounds_the_formula_from_above(rng):
    for _ in range(5):
        problem = RelaxationProblem(random_rigidity(rng), float(rng.uniform(-1.0, 1.0)))
        m = rng.uniform(-1.0, 1.0, size=3)
        oracle = brute_force_biconjugate(problem, m, 6.0, 24)
        assert oracle >= relaxed_integrand(problem, m) - 1e-7


@pytest.mark.parametrize("m", ORACLE_POINTS)
def test_oracle_converges_under_refinement(sadowsky, m):
    """The oracle error is at most 0.5 at n = 64 and shrinks over nested grids."""
    problem = RelaxationProblem(sadowsky, 0.0)
    formula = relaxed_integrand(problem, m)
    assert -1e-6 <= brute_force_biconjugate(problem, m, 6.0, 64) - formula <= 0.5
    errors = [brute_force_biconjugate(problem, m, 6.0, n) - formula for n in ORACLE_REFINEMENT]
    for coarse, fine in zip(errors, errors[1:]):
        assert fine <= coarse + 1e-7


def test_oracle_input_checks(sadowsky):
    problem = RelaxationProblem(sadowsky, 0.0)
    with pytest.raises(InputError, match="n >= 16"):
        brute_force_biconjugate(problem, [0.0, 0.0, 0.0], 6.0, 8)
    with pytest.raises(InputError, match="radius/2"):
        brute_force_biconjugate(problem, [4.0, 0.0, 0.0], 6.0, 24)
