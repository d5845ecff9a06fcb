import math

import numpy as np
import pytest

from ribbonlim.errors import InputError
from ribbonlim.geometry import NaturalCurvature, builtin_chart
from ribbonlim.quadratic_forms import Rigidity, SymMat2, quad, voigt_stack
from ribbonlim.reduced_density import (
    DensityContext,
    contexts_along,
    orthotropic_qbar,
    qbar,
    qbar_along,
    qbar_contravariant,
    sadowsky_corrected,
)


@pytest.fixture
def sadowsky():
    return DensityContext.build(Rigidity.orthotropic(1.0, 0.0, 1.0, 0.5))


@pytest.fixture
def rng():
    return np.random.default_rng(77)


@pytest.fixture
def grid():
    """61 x 61 points on [-3, 3]^2."""
    axis = np.linspace(-3.0, 3.0, 61)
    return np.meshgrid(axis, axis, indexing="ij")


def random_context(rng):
    factor = rng.normal(scale=0.7, size=(3, 3))
    rigidity = Rigidity(factor @ factor.T + 0.5 * np.eye(3))
    D = np.array([[1.0, rng.uniform(-0.5, 0.5)], [0.0, rng.uniform(0.6, 1.5)]])
    natural = SymMat2(*rng.uniform(-1.0, 1.0, size=3))
    return DensityContext.build(rigidity, D, natural)


def unrelaxed(ctx, mu, tau, gamma):
    """The integrand before minimizing over gamma."""
    A = np.array([[mu, tau], [tau, gamma]])
    inverse = np.linalg.inv(ctx.D)
    M = inverse.T @ (A - ctx.natural.as_matrix()) @ inverse
    det_a = mu * gamma - tau * tau
    penalty = ctx.alpha_plus * max(det_a, 0.0) + ctx.alpha_minus * max(-det_a, 0.0)
    return float(quad(ctx.rigidity, voigt_stack(M))) * ctx.det_D + penalty / ctx.det_D


@pytest.mark.parametrize(
    "mu, tau, expected",
    [(1.0, 0.0, 1.0), (0.0, 1.0, 4.0), (1.0, 1.0, 4.0), (2.0, 1.0, 6.25)],
)
def test_sadowsky_spot_values(sadowsky, mu, tau, expected):
    value, _ = qbar(sadowsky, mu, tau)
    assert value == pytest.approx(expected, abs=1e-10)
    assert sadowsky_corrected(mu, tau) == pytest.approx(expected, abs=1e-10)


def test_sadowsky_minimizers(sadowsky):
    assert qbar(sadowsky, 1.0, 0.0) == (1.0, 0.0)
    assert qbar(sadowsky, 0.0, 1.0)[1] == 0.0
    # the kinked branch sits on det A = 0
    assert qbar(sadowsky, 2.0, 1.0)[1] == pytest.approx(0.5)


def test_qbar_returns_floats_for_scalars(sadowsky):
    value, gamma = qbar(sadowsky, 0.5, 0.25)
    assert isinstance(value, float)
    assert isinstance(gamma, float)


def test_zero_target_gives_zero(sadowsky):
    assert qbar(sadowsky, 0.0, 0.0) == (0.0, 0.0)


def test_qbar_matches_sadowsky_closed_form(sadowsky, grid):
    mu, tau = grid
    values, gammas = qbar(sadowsky, mu, tau)
    assert values.shape == (61, 61)
    assert gammas.shape == (61, 61)
    assert np.abs(values - sadowsky_corrected(mu, tau)).max() <= 1e-8


@pytest.mark.parametrize(
    "k, mu, tau, expected",
    [
        ((1.0, 0.0, 1.0, 0.5), 2.0, 1.0, 6.25),
        ((1.0, 0.0, 4.0, 1.0), 1.0, 1.0, 8.0),
        ((1.0, 0.0, 4.0, 1.0), 2.0, 1.0, 9.0),
    ],
)
def test_orthotropic_spot_values(k, mu, tau, expected):
    assert orthotropic_qbar(*k, mu, tau) == pytest.approx(expected, abs=1e-12)
    value, _ = qbar(DensityContext.build(Rigidity.orthotropic(*k)), mu, tau)
    assert value == pytest.approx(expected, abs=1e-10)


def test_orthotropic_closed_form_matches_minimization(rng, grid):
    mu, tau = grid
    checked = 0
    while checked < 20:
        k11, k22 = rng.uniform(0.5, 3.0, size=2)
        k12 = rng.uniform(-0.9, 0.9) * math.sqrt(k11 * k22)
        k33 = rng.uniform(0.2, 3.0)
        if 4.0 * k33 < 2.0 * (math.sqrt(k11 * k22) - k12):
            continue
        checked += 1
        ctx = DensityContext.build(Rigidity.orthotropic(k11, k12, k22, k33))
        values, _ = qbar(ctx, mu, tau)
        closed = orthotropic_qbar(k11, k12, k22, k33, mu, tau)
        assert np.abs(values - closed).max() <= 1e-8 * max(1.0, float(np.abs(closed).max()))


def test_orthotropic_closed_form_precondition():
    with pytest.raises(InputError, match="4 K33"):
        orthotropic_qbar(1.0, 0.0, 1.0, 0.1, 1.0, 1.0)


def test_qbar_is_bounded_by_any_competitor(rng):
    for _ in range(10):
        ctx = random_context(rng)
        mu, tau = rng.uniform(-2.0, 2.0, size=2)
        value, gamma_star = qbar(ctx, mu, tau)
        assert value >= 0.0
        assert unrelaxed(ctx, mu, tau, gamma_star) == pytest.approx(value, rel=1e-9, abs=1e-12)
        for gamma in rng.uniform(-5.0, 5.0, size=100):
            assert value <= unrelaxed(ctx, mu, tau, gamma) + 1e-10


def test_on_target_competitor(rng):
    """A = A° costs only the determinant penalty."""
    for _ in range(20):
        ctx = random_context(rng)
        target = ctx.natural
        det_a = target.det
        bound = (ctx.alpha_plus * max(det_a, 0.0) + ctx.alpha_minus * max(-det_a, 0.0)) / ctx.det_D
        value, _ = qbar(ctx, target.m11, target.m12)
        assert value <= bound + 1e-12


def test_qbar_is_jointly_convex(rng):
    for _ in range(50):
        ctx = random_context(rng)
        first = rng.uniform(-2.0, 2.0, size=2)
        second = rng.uniform(-2.0, 2.0, size=2)
        middle = 0.5 * (first + second)
        left, _ = qbar(ctx, *first)
        right, _ = qbar(ctx, *second)
        centre, _ = qbar(ctx, *middle)
        assert centre <= 0.5 * (left + right) + 1e-9


def test_orthotropic_qbar_is_even_in_tau(rng):
    for _ in range(10):
        k11, k22 = rng.uniform(0.5, 3.0, size=2)
        k12 = rng.uniform(-0.9, 0.9) * math.sqrt(k11 * k22)
        natural = SymMat2(rng.uniform(-1.0, 1.0), 0.0, rng.uniform(-1.0, 1.0))
        ctx = DensityContext.build(
            Rigidity.orthotropic(k11, k12, k22, rng.uniform(0.2, 2.0)), natural=natural
        )
        mu, tau = rng.uniform(-2.0, 2.0, size=2)
        assert qbar(ctx, mu, tau)[0] == pytest.approx(qbar(ctx, mu, -tau)[0], abs=1e-10)


def test_contravariant_characterization_agrees(rng):
    for _ in range(20):
        ctx = random_context(rng)
        mu = rng.uniform(-2.0, 2.0, size=7)
        tau = rng.uniform(-2.0, 2.0, size=7)
        primal, _ = qbar(ctx, mu, tau)
        dual, _ = qbar_contravariant(ctx, mu, tau)
        assert dual == pytest.approx(primal, rel=1e-10, abs=1e-10)


def test_qbar_along_matches_nodewise(rng):
    chart = builtin_chart("arc", {"kappa0": 0.7}, 2.0, 10)
    rigidity = Rigidity.isotropic(1.0, 0.3)
    natural = NaturalCurvature.table([-1.0, 1.0], [0.5, -0.5], [0.2, 0.1], [0.0, 0.3])
    contexts = contexts_along(chart, rigidity, natural)
    assert len(contexts) == chart.nodes
    mu = rng.uniform(-1.0, 1.0, size=chart.nodes)
    tau = rng.uniform(-1.0, 1.0, size=chart.nodes)
    values, gammas = qbar_along(contexts, mu, tau)
    for ctx, m, t, value, gamma in zip(contexts, mu, tau, values, gammas):
        expected, expected_gamma = qbar(ctx, m, t)
        assert value == pytest.approx(expected, rel=1e-10, abs=1e-12)
        assert gamma == pytest.approx(expected_gamma, rel=1e-10, abs=1e-12)


def test_qbar_along_checks_profile_length(sadowsky):
    with pytest.raises(InputError, match="one value per context"):
        qbar_along([sadowsky, sadowsky], [0.0], [0.0])


def test_qbar_along_needs_one_rigidity(sadowsky):
    other = DensityContext.build(Rigidity.isotropic(1.0, 1.0))
    with pytest.raises(InputError, match="share one rigidity"):
        qbar_along([sadowsky, other], [0.0, 0.0], [0.0, 0.0])


def test_context_checks_constants():
    rigidity = Rigidity.orthotropic(1.0, 0.0, 1.0, 0.5)
    with pytest.raises(InputError, match="do not match"):
        DensityContext(rigidity, 1.0, 2.0)


def test_context_checks_chart_matrix():
    rigidity = Rigidity.orthotropic(1.0, 0.0, 1.0, 0.5)
    with pytest.raises(InputError, match="positive determinant"):
        DensityContext.build(rigidity, [[1.0, 0.0], [0.0, -1.0]])
