import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facts_def.numerics import (
    InputError,
    IntegrationError,
    Phasor,
    Series,
    cum_energy_integral,
    cumulative_def,
    nested_convolution_integral,
    rk4_step,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(finite, finite)
def test_phasor_magnitude_and_double_conjugate(re, im):
    p = Phasor(re, im)
    assert p.magnitude() >= 0
    assert p.magnitude() == pytest.approx(abs(complex(re, im)))
    assert p.conjugate().conjugate() == p


def test_phasor_polar_roundtrip():
    p = Phasor.polar(2.0, 0.3)
    assert p.magnitude() == pytest.approx(2.0)
    assert p.angle() == pytest.approx(0.3)
    assert complex(Phasor.from_complex(3 - 4j)) == 3 - 4j


def test_series_rejects_bad_grids():
    with pytest.raises(InputError):
        Series([0.0], [1.0])
    with pytest.raises(InputError):
        Series([0.0, 1.0, 2.0], [1.0, 2.0])
    with pytest.raises(InputError):
        Series([0.0, 1.0, 3.0], [1.0, 2.0, 3.0])
    with pytest.raises(InputError):
        Series([0.0, -1.0], [1.0, 2.0])
    assert Series(np.linspace(0, 1, 11), np.zeros(11)).dt == pytest.approx(0.1)


def test_energy_integral_length_mismatch():
    a = Series(np.linspace(0, 1, 5), np.zeros(5))
    b = Series(np.linspace(0, 1, 6), np.zeros(6))
    with pytest.raises(InputError):
        cum_energy_integral(a, b)


def test_constant_magnitude_rotation_gives_zero():
    t = np.linspace(0.0, 2.0, 2001)
    v = np.exp(1j * 2 * np.pi * 0.7 * t)
    i = 1j * (-0.7) * v
    w = cum_energy_integral(Series(t, i), Series(t, v))
    assert w.v[0] == 0.0
    assert np.max(np.abs(w.v)) < 1e-12


def test_zero_current_gives_zero():
    t = np.linspace(0.0, 1.0, 101)
    v = 1 + 0.1 * np.sin(t)
    w = cum_energy_integral(Series(t, np.zeros(101)), Series(t, v.astype(complex)))
    assert np.all(w.v == 0.0)


def test_reactive_element_follows_quadratic_channel():
    # I = j b V with b = -0.7: W = -b (U^2 - U0^2) / 2 at every sample
    b = -0.7
    t = np.linspace(0.0, 1.0, 1001)
    u = 1.0 + 0.1 * np.sin(2 * np.pi * t)
    v = u.astype(complex)
    w = cumulative_def(1j * b * v, v)
    assert np.allclose(w, -b * (u ** 2 - 1.0) / 2, atol=1e-14)
    assert abs(w[-1]) < 1e-14  # closed cycle


def _closed_cycle_residual(n):
    # nonlinear algebraic current I = j b(U) V, b(U) = -(1 + U^2); potential exists
    # the loop closes at t = 1 but is not smooth-periodic (t^2 phase), so the
    # trapezoid rule shows its generic order instead of spectral accuracy
    t = np.linspace(0.0, 1.0, n + 1)
    u = 1.0 + 0.2 * np.sin(2 * np.pi * t ** 2)
    v = u * np.exp(1j * 0.3 * np.sin(2 * np.pi * t ** 2))
    i = 1j * -(1 + u ** 2) * v
    return abs(cumulative_def(i, v)[-1])


def test_closed_cycle_residual_is_second_order():
    r1, r2 = _closed_cycle_residual(200), _closed_cycle_residual(400)
    assert r1 < 1e-4
    assert 3.5 < r1 / r2 < 4.5


def test_nested_convolution_trivial_inputs():
    assert nested_convolution_integral(lambda t: np.zeros_like(t), 0.1, 1.0, 1000) == 0.0
    assert nested_convolution_integral(lambda t: 0.0 * t + 0.3, 0.1, 1.0, 1000) == pytest.approx(0.0, abs=1e-12)


def test_nested_convolution_input_errors():
    with pytest.raises(InputError):
        nested_convolution_integral(lambda t: t, 0.1, 1.0, 50)
    with pytest.raises(InputError):
        nested_convolution_integral(lambda t: np.where(t > 0.5, np.nan, t), 0.1, 1.0, 1000)
    with pytest.raises(InputError):
        nested_convolution_integral(lambda t: t, 0.0, 1.0, 1000)


def test_nested_convolution_sinusoid_per_cycle():
    # steady sinusoid through the lag; with the 1/Tc normalisation of the kernel the
    # per-cycle value is -pi A^2 w Tc / (1 + w^2 Tc^2) U0
    amp, freq, tc = 0.01, 0.6, 0.1
    w = 2 * np.pi * freq
    period = 1 / freq

    def du(t):
        return amp * np.sin(w * t)

    n_per = 20000
    a = nested_convolution_integral(du, tc, 10 * period, 10 * n_per)
    b = nested_convolution_integral(du, tc, 11 * period, 11 * n_per)
    expected = -np.pi * amp ** 2 * w * tc / (1 + (w * tc) ** 2)
    assert (b - a) / tc == pytest.approx(expected, rel=1e-3)


def test_nested_convolution_first_order_convergence():
    def du(t):
        return 0.3 * np.sin(3 * t) + 0.1 * t ** 2

    ref = nested_convolution_integral(du, 0.1, 1.0, 10 * 8000)
    e1 = nested_convolution_integral(du, 0.1, 1.0, 4000) - ref
    e2 = nested_convolution_integral(du, 0.1, 1.0, 8000) - ref
    assert 1.7 <= e1 / e2 <= 2.3


def test_rk4_constant_and_exponential():
    assert rk4_step(np.array([5.0]), lambda t, x: np.zeros(1), 0.1)[0] == 5.0
    tc = 0.3
    dt = tc / 100
    x = rk4_step(np.array([2.0]), lambda t, x: -x / tc, dt)
    assert x[0] == pytest.approx(2.0 * math.exp(-dt / tc), rel=1e-10)


@settings(max_examples=50)
@given(st.floats(-10.0, 10.0).filter(lambda v: abs(v) > 1e-3), st.floats(1e-4, 1.0))
def test_rk4_matches_exponential(lam, frac):
    # one-step error of the classical scheme is z^5/120 (z = lam dt): below 1e-9
    # up to |z| = 0.04, and bounded by that term up to |z| = 0.1
    z = 0.1 * frac * math.copysign(1.0, lam)
    dt = z / lam
    x = rk4_step(np.array([1.0]), lambda t, x: lam * x, dt)
    err = abs(x[0] - math.exp(z))
    assert err <= 1.05 * abs(z) ** 5 / 120 + 1e-15
    if abs(z) <= 0.04:
        assert err / math.exp(z) <= 1e-9


def test_rk4_rotation_preserves_magnitude():
    a = np.array([[0.0, 1.0], [-1.0, 0.0]])
    dt = 0.01
    x = rk4_step(np.array([1.0, 0.0]), lambda t, x: a @ x, dt)
    assert abs(np.hypot(*x) - 1.0) < dt ** 5


def test_rk4_reports_time_of_fault():
    with pytest.raises(IntegrationError) as err:
        rk4_step(np.array([1.0]), lambda t, x: np.array([np.nan]), 0.1, t=2.5)
    assert err.value.t == 2.5
    with pytest.raises(InputError):
        rk4_step(np.array([1.0]), lambda t, x: x, 0.0)
