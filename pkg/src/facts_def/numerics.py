"""Shared numerical kernels: phasors, sampled series, energy quadrature and RK4."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.signal import lfilter


class InputError(ValueError):
    """Malformed numerical input (length mismatch, non-uniform grid, NaN)."""


class IntegrationError(ArithmeticError):
    """Non-finite derivative encountered during time stepping."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message if t is None else f"{message} (t = {t:.6f} s)")
        self.t = t


@dataclass(frozen=True)
class Phasor:
    """Per-unit complex quantity in rectangular form."""

    re: float
    im: float = 0.0

    @classmethod
    def from_complex(cls, z: complex) -> "Phasor":
        z = complex(z)
        return cls(z.real, z.imag)

    @classmethod
    def polar(cls, mag: float, angle: float) -> "Phasor":
        return cls(mag * math.cos(angle), mag * math.sin(angle))

    def __complex__(self) -> complex:
        return complex(self.re, self.im)

    def magnitude(self) -> float:
        return math.hypot(self.re, self.im)

    def angle(self) -> float:
        return math.atan2(self.im, self.re)

    def conjugate(self) -> "Phasor":
        return Phasor(self.re, -self.im)


@dataclass
class Series:
    """Uniformly sampled time series; ``v`` may be real or complex."""

    t: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.v = np.asarray(self.v)
        if self.t.ndim != 1 or len(self.t) < 2:
            raise InputError("series needs at least two samples")
        if len(self.v) != len(self.t):
            raise InputError(f"length mismatch: {len(self.t)} times, {len(self.v)} values")
        steps = np.diff(self.t)
        if steps[0] <= 0 or not np.allclose(steps, steps[0], rtol=1e-6, atol=0.0):
            raise InputError("time axis must be strictly increasing with a constant step")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def __len__(self) -> int:
        return len(self.t)


def cumulative_def(current: np.ndarray, voltage: np.ndarray) -> np.ndarray:
    """Array kernel of :func:`cum_energy_integral` (no grid checks)."""
    current = np.asarray(current, dtype=complex)
    voltage = np.asarray(voltage, dtype=complex)
    if current.shape != voltage.shape:
        raise InputError(f"shape mismatch {current.shape} vs {voltage.shape}")
    i_mid = 0.5 * (current[1:] + current[:-1])
    increments = np.imag(np.conj(i_mid) * np.diff(voltage, axis=0))
    out = np.zeros(voltage.shape, dtype=float)
    np.cumsum(increments, axis=0, out=out[1:])
    return out


def cum_energy_integral(current: Series, voltage: Series) -> Series:
    """Cumulative ``int Im(conj(I) dV)`` into the element at the measurement point.

    Trapezoidal rule with the current taken at the step midpoint, so that a
    purely reactive linear element (``I = j b V``) telescopes exactly to
    ``-b (|V_n|^2 - |V_0|^2) / 2``.
    """
    if len(current) != len(voltage):
        raise InputError(f"length mismatch: {len(current)} vs {len(voltage)}")
    if not np.allclose(current.t, voltage.t, rtol=0.0, atol=1e-9 * max(1.0, abs(current.t[-1]))):
        raise InputError("current and voltage time axes are not aligned")
    return Series(voltage.t.copy(), cumulative_def(current.v, voltage.v))


def cumtrapz_product(weight: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Cumulative trapezoidal ``int weight dx`` along sampled ``x``, starting at 0."""
    weight = np.asarray(weight, dtype=float)
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    np.cumsum(0.5 * (weight[1:] + weight[:-1]) * np.diff(x), out=out[1:])
    return out


def _sample(func: Callable, t: np.ndarray) -> np.ndarray:
    try:
        values = np.asarray(func(t), dtype=float)
        if values.shape != t.shape:
            values = np.broadcast_to(values, t.shape).astype(float)
    except (TypeError, ValueError):
        values = np.array([float(func(float(ti))) for ti in t])
    return values


def nested_convolution_integral(
    delta_u: Callable[[np.ndarray], np.ndarray],
    tc: float,
    t1: float,
    n_steps: int,
    u0: float = 1.0,
) -> float:
    """Evaluate ``int_0^t1 int_0^t exp(-(t-tau)/tc) dU(tau) (u0 + dU(t)) dU'(t) dtau dt``.

    The inner convolution ``g(t)`` obeys ``g' = -g/tc + dU`` and is advanced by
    the exact exponential update of that ODE with the input held at the left
    sample of each step (first order in the step).  The outer integral is a
    trapezoidal sum; ``dU'`` comes from central differences, one-sided at the
    ends.
    """
    if tc <= 0 or t1 <= 0:
        raise InputError("tc and t1 must be positive")
    if n_steps < 100:
        raise InputError("n_steps must be at least 100")
    t = np.linspace(0.0, t1, n_steps + 1)
    h = t1 / n_steps
    du = _sample(delta_u, t)
    if not np.all(np.isfinite(du)):
        raise InputError("dU samples are not finite")
    decay = math.exp(-h / tc)
    inner = lfilter([0.0, tc * (1.0 - decay)], [1.0, -decay], du)
    du_dot = np.gradient(du, h)
    integrand = inner * (u0 + du) * du_dot
    return float(np.trapezoid(integrand, dx=h))


def rk4_step(
    state: np.ndarray,
    deriv: Callable[[float, np.ndarray], np.ndarray],
    dt: float,
    t: float = 0.0,
) -> np.ndarray:
    """One classical Runge-Kutta step of ``x' = deriv(t, x)``."""
    if dt <= 0:
        raise InputError("dt must be positive")
    x = np.asarray(state, dtype=float)
    k1 = _checked(deriv(t, x), t)
    k2 = _checked(deriv(t + 0.5 * dt, x + 0.5 * dt * k1), t + 0.5 * dt)
    k3 = _checked(deriv(t + 0.5 * dt, x + 0.5 * dt * k2), t + 0.5 * dt)
    k4 = _checked(deriv(t + dt, x + dt * k3), t + dt)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _checked(k, t: float) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if not np.all(np.isfinite(k)):
        raise IntegrationError("non-finite derivative", t)
    return k
