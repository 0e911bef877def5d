import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import integrate

from mrpert import EnvelopeClassError, InvalidInputError, ParameterError
from mrpert.problems import (
    ConstantEnvelope,
    PiecewiseEnvelope,
    PowerEnvelope,
    SeparableSource,
    envelope_from_config,
    make_diagonal,
    make_diagonal_heat,
    make_geometric,
    make_inhomogeneity,
    make_jordan_example,
    make_nonautonomous,
    make_perturbation,
    random_step_profile,
    zero_envelope,
)
from mrpert.spaces import TimeGrid, trace_level

import oracles


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 3), st.floats(0, 0.45), st.floats(1, 4), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_power_envelope_integral(c, alpha, q, mu, a, b):
    a, b = sorted((a, b))
    env = PowerEnvelope(c, alpha)
    want = oracles.power_norm(c, alpha, q, mu, a, b) ** q if b > a else 0.0
    assert env.weighted_power_integral(q, mu, a, b) == pytest.approx(want, rel=1e-8, abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.2, 3), st.floats(0, 0.45), st.floats(1.5, 4), st.floats(0, 0.5), st.floats(0.01, 0.5))
def test_budget_inversion(c, alpha, q, a, budget):
    assume(alpha * q < 1)
    env = PowerEnvelope(c, alpha)
    sigma = env.invert(q, 0.0, a, budget, 1.0)
    assert a < sigma <= 1.0
    mass = env.weighted_power_integral(q, 0.0, a, sigma)
    # sigma - a may be far below sigma, so allow rounding of the endpoints
    slack = 1e-13 * c**q * max(1.0, a ** (1 - alpha * q))
    if sigma < 1.0:
        assert mass == pytest.approx(budget**q, rel=1e-9, abs=slack)
    else:
        assert mass <= budget**q * (1 + 1e-9) + slack


def test_critical_envelope_inversion_raises():
    with pytest.raises(EnvelopeClassError):
        PowerEnvelope(1.0, 0.5).invert(2.0, 0.0, 0.0, 0.1, 1.0)
    assert not PowerEnvelope(1.0, 0.5).in_class(2.0, 0.0, 1.0)


def test_piecewise_envelope():
    env = PiecewiseEnvelope((0.0, 0.5, 1.0), (2.0, 3.0))
    np.testing.assert_array_equal(env(np.array([0.0, 0.49, 0.5, 0.99, 1.0, 2.0])), [2, 2, 3, 3, 0, 0])
    want = integrate.quad(lambda t: t * env(np.array([t]))[0] ** 2, 0, 1, points=[0.5])[0]
    assert env.weighted_power_integral(2.0, 1.0, 0.0, 1.0) == pytest.approx(want)
    assert float(env.moment(0.25, 0.75, 0)) == pytest.approx(0.5 + 0.75)
    with pytest.raises(InvalidInputError):
        PiecewiseEnvelope((0.1, 1.0), (1.0,))


def test_envelope_config_roundtrip():
    for env in (PowerEnvelope(0.5, 0.25), ConstantEnvelope(2.0), PiecewiseEnvelope((0.0, 1.0), (1.5,))):
        assert envelope_from_config(env.to_config()) == env
    assert zero_envelope().is_zero()
    with pytest.raises(ParameterError):
        envelope_from_config({"shape": "spline"})


def test_model_spectra():
    scale, A = make_diagonal_heat(4)
    np.testing.assert_allclose(scale.eigenvalues, 1 + (np.pi * np.arange(1, 5)) ** 2)
    assert A.autonomous and A.diagonal
    scale, A = make_geometric(5, 1.0, 1e4)
    np.testing.assert_allclose(scale.eigenvalues, [1, 10, 100, 1e3, 1e4])
    scale, J = make_jordan_example(4, 0.5)
    assert not J.diagonal and J.matrix[0, 1] == pytest.approx(0.5 * scale.eigenvalues[0])
    with pytest.raises(ParameterError):
        make_jordan_example(1)


def test_nonautonomous_family():
    _, A = make_diagonal_heat(3)
    prof = random_step_profile(4, 0.5, 2.0, 1.0, np.random.default_rng(0))
    An = make_nonautonomous(A, prof)
    assert not An.autonomous
    np.testing.assert_allclose(An.matrix_at(0.1), prof(np.array([0.1]))[0] * A.matrix)
    avg = An.time_average(1.0)
    assert avg.autonomous
    np.testing.assert_allclose(avg.matrix, np.mean(prof.values) * A.matrix)
    with pytest.raises(ParameterError):
        make_nonautonomous(A, PiecewiseEnvelope((0.0, 1.0), (-1.0,)))
    with pytest.raises(ParameterError):
        make_nonautonomous(A, PowerEnvelope(1.0, 0.5))


@pytest.mark.parametrize("kind,kwargs", [
    ("lower_order", dict(q=4.0, p=2.0)),
    ("lower_order", dict(q=2.0, p=2.0)),
    ("lower_order", dict(q=3.0, p=3.0)),
    ("mixed_scale", dict(p=4, triple=(Fraction(4, 3), 0, Fraction(1, 2)))),
    ("trace_valued", dict(p=2.0)),
    ("trace_valued", dict(p=1.5)),
])
def test_perturbation_respects_envelope(kind, kwargs):
    scale, _ = make_diagonal_heat(6)
    B = make_perturbation(scale, kind, PowerEnvelope(0.7, 0.2), **kwargs)
    assert B.envelope_check(np.linspace(0.01, 1, 9))
    assert B.operator_norm_ratio(0) <= 1 + 1e-8


def test_mixed_scale_exponents():
    scale, _ = make_diagonal_heat(3)
    B = make_perturbation(scale, "mixed_scale", PowerEnvelope(1.0, 0.1), p=4, triple=(Fraction(4, 3), 0, Fraction(1, 2)))
    c = B.components[0]
    assert (c.q_b, c.mu_b) == (2.0, 0.0)
    np.testing.assert_allclose(np.diag(c.matrix), scale.eigenvalues**0.5)
    assert B.operator_norm_ratio(0) == pytest.approx(1.0)


def test_perturbation_validation():
    scale, _ = make_diagonal_heat(3)
    with pytest.raises(InvalidInputError):
        make_perturbation(scale, "lower_order", PowerEnvelope(-1.0), q=4.0)
    with pytest.raises(ParameterError):
        make_perturbation(scale, "lower_order", PowerEnvelope(1.0))
    with pytest.raises(ParameterError):
        make_perturbation(scale, "sideways", PowerEnvelope(1.0))
    with pytest.raises(EnvelopeClassError):
        make_perturbation(scale, "mixed_scale", PowerEnvelope(1.0), p=2, triple=(2, 0, Fraction(1, 2)))


def test_perturbation_apply_and_scale():
    scale, _ = make_diagonal_heat(3)
    B = make_perturbation(scale, "lower_order", PowerEnvelope(2.0, 0.0), q=4.0, p=2.0)
    x = np.array([[1.0, 0.0, 0.0]])
    out = B.apply(np.array([0.5]), x)
    assert out[0, 0] == pytest.approx(2.0 * scale.eigenvalues[0] ** 0.75)
    np.testing.assert_allclose(B.scaled(-0.5).apply(np.array([0.5]), x), -0.5 * out)
    grid = TimeGrid.uniform(1.0, 4)
    np.testing.assert_allclose(B.cell_matrices(grid), np.tile(2.0 * scale.eigenvalues**0.75, (4, 1)))


@pytest.mark.parametrize("alpha", [0.0, 0.25, 0.6])
def test_separable_cell_projection_preserves_moments(alpha):
    scale, _ = make_diagonal([1.0, 2.0])
    src = SeparableSource(PowerEnvelope(1.0, alpha), np.array([1.0, -1.0]), 1.0, scale)
    grid = TimeGrid.graded(1.0, 16, 2.0)
    left, right = src.cell_linear(grid)
    lo, hi = grid.nodes[:-1], grid.nodes[1:]
    h = hi - lo
    np.testing.assert_allclose((left[:, 0] + right[:, 0]) * h / 2, src.profile.moment(lo, hi, 0), rtol=1e-10)
    # first moment about the left node of the linear interpolant
    lin_m1 = h**2 * (left[:, 0] / 6 + right[:, 0] / 3)
    np.testing.assert_allclose(lin_m1, src.profile.moment(lo, hi, 1) - lo * src.profile.moment(lo, hi, 0),
                               rtol=1e-8, atol=1e-15)


def test_inhomogeneity_slots():
    scale, _ = make_diagonal_heat(3)
    vec = np.array([1.0, 0.5, 0.25])
    g = SeparableSource(PowerEnvelope(1.0, 0.2), vec, 1.0, scale)
    f = make_inhomogeneity(scale, [(g, (4.0, 0.0, 0.0)), (g, (4 / 3, 0.0, 0.5))], 1.0, p=4, kappa=0.0)
    norms = [c.norm for c in f.components]
    assert norms[0] == pytest.approx(oracles.power_norm(1.0, 0.2, 4.0, 0.0, 0, 1) * np.linalg.norm(vec))
    assert f.total_norm() == pytest.approx(sum(norms))
    assert f.scaled(2.0).total_norm() == pytest.approx(2 * f.total_norm())
    with pytest.raises(ParameterError):
        make_inhomogeneity(scale, [(g, (1.0, 0.0, 0.9))], 1.0, p=4, kappa=0.0)
    with pytest.raises(InvalidInputError):
        make_inhomogeneity(scale, [(SeparableSource(PowerEnvelope(1.0), np.ones(2), 1.0), (2.0, 0.0, 0.0))], 1.0)


def test_trace_slot_accepts_interpolation_level():
    scale, _ = make_diagonal_heat(3)
    g = SeparableSource(PowerEnvelope(1.0, 0.5), np.ones(3), 1.0, scale)
    f = make_inhomogeneity(scale, [(g, (1.0, 0.0, trace_level(2.0)))], 1.0)
    assert math.isfinite(f.total_norm()) and f.total_norm() > 0
