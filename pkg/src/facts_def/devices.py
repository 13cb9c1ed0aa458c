"""Dynamic device models: classical generators, TCSC and STATCOM with their controllers."""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

OMEGA_S = 2.0 * math.pi * 60.0

TCSC_STRATEGIES = ("fixed", "algebraic", "lag", "damping_controller")
STATCOM_CONTROLS = ("constant_current", "pi_droop")
LOW_VOLTAGE_TRIP = 0.2


class TcscLimitWarning(UserWarning):
    """Compensation perturbation clamped to its limits."""


@dataclass
class Generator:
    """Classical machine: constant EMF magnitude behind transient reactance."""

    name: str
    bus: int
    H: float
    D: float
    xd_prime: float
    E_mag: float = 1.0
    delta: float = 0.0
    omega_dev: float = 0.0
    Pm: float = 0.0

    def __post_init__(self):
        if self.H <= 0 or self.xd_prime <= 0:
            raise ValueError(f"generator {self.name}: H and xd_prime must be positive")

    @property
    def emf(self) -> complex:
        return cmath.rect(self.E_mag, self.delta)


def electrical_power(emf, v_terminal, xd_prime):
    """Air-gap power of EMF(s) behind ``xd_prime``; works on scalars and arrays."""
    current = (emf - v_terminal) / (1j * xd_prime)
    return np.real(emf * np.conj(current))


def swing_rhs(omega_dev, pm, pe, h, d, omega_s=OMEGA_S):
    return omega_s * omega_dev, (pm - pe - d * omega_dev) / (2.0 * h)


def generator_derivs(gen: Generator, v_terminal: complex, omega_s: float = OMEGA_S) -> tuple[float, float]:
    """Swing equations ``(d delta/dt, d omega/dt)`` at terminal voltage ``v_terminal``."""
    pe = electrical_power(gen.emf, complex(v_terminal), gen.xd_prime)
    d_delta, d_omega = swing_rhs(gen.omega_dev, gen.Pm, pe, gen.H, gen.D, omega_s)
    return float(d_delta), float(d_omega)


# --- TCSC -------------------------------------------------------------------

@dataclass
class TcscDevice:
    branch: str
    b0: float
    kc0: float
    dkc: float = 0.0
    kc_limits: tuple[float, float] | None = None
    strategy: str = "fixed"

    def __post_init__(self):
        if self.strategy not in TCSC_STRATEGIES:
            raise ValueError(f"unknown TCSC strategy {self.strategy!r}")
        if self.kc_limits is None:
            self.kc_limits = (self.kc0 - 0.2, self.kc0 + 0.2)
        lo, hi = self.kc_limits
        if not lo <= self.kc0 <= hi or hi >= 1.0:
            raise ValueError(f"kc limits {self.kc_limits} must bracket kc0 and stay below 1")

    @property
    def kc(self) -> float:
        return self.kc0 + self.dkc

    def clamp(self, dkc: float) -> tuple[float, bool]:
        lo, hi = self.kc_limits
        clamped = min(max(dkc, lo - self.kc0), hi - self.kc0)
        return clamped, clamped != dkc


def tcsc_admittance(dev: TcscDevice) -> complex:
    """Series admittance ``j (1 - kc0 - dkc) b0``; out-of-range ``dkc`` is clamped."""
    dkc, clamped = dev.clamp(dev.dkc)
    if clamped:
        warnings.warn(f"TCSC on {dev.branch}: dkc {dev.dkc:+.4f} clamped to {dkc:+.4f}",
                      TcscLimitWarning, stacklevel=2)
    return 1j * (1.0 - dev.kc0 - dkc) * dev.b0


@dataclass
class LagController:
    """First-order lag ``dkc' = (-dkc + Kp dU) / Tc``."""

    Tc: float
    Kp: float
    state: float = 0.0

    def __post_init__(self):
        if self.Tc <= 0:
            raise ValueError("Tc must be positive")

    def rhs(self, state: float, du: float) -> float:
        return (-state + self.Kp * du) / self.Tc


def lag_step(ctrl: LagController, du: float, dt: float) -> float:
    """Exact update of the lag with ``du`` held over the step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    decay = math.exp(-dt / ctrl.Tc)
    ctrl.state = decay * ctrl.state + (1.0 - decay) * ctrl.Kp * du
    return ctrl.state


@dataclass
class DampingController:
    """Gain, washout ``sTw/(1+sTw)`` and lead-lag ``(1+sTd1)/(1+sTd2)`` in cascade.

    States: ``x_w`` is the washout's low-pass memory (its output is
    ``u - x_w``), ``x_ll`` the lead-lag's lag state.
    """

    Kp: float
    Tw: float
    Td1: float
    Td2: float
    x_w: float = 0.0
    x_ll: float = 0.0
    feedback: str = "L9-10@10"

    def __post_init__(self):
        if min(self.Tw, self.Td1, self.Td2) <= 0:
            raise ValueError("time constants must be positive")

    @property
    def lead_ratio(self) -> float:
        return self.Td1 / self.Td2

    def output(self, u: float, x_w: float | None = None, x_ll: float | None = None) -> float:
        x_w = self.x_w if x_w is None else x_w
        x_ll = self.x_ll if x_ll is None else x_ll
        r = self.lead_ratio
        return self.Kp * (r * (u - x_w) + (1.0 - r) * x_ll)

    def rhs(self, u: float, x_w: float, x_ll: float) -> tuple[float, float]:
        return (u - x_w) / self.Tw, (u - x_w - x_ll) / self.Td2

    def transfer(self, omega: float) -> complex:
        s = 1j * omega
        return self.Kp * (s * self.Tw / (1 + s * self.Tw)) * ((1 + s * self.Td1) / (1 + s * self.Td2))


@lru_cache(maxsize=64)
def _damping_zoh(tw: float, td2: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([[-1.0 / tw, 0.0], [-1.0 / td2, -1.0 / td2]])
    b = np.array([1.0 / tw, 1.0 / td2])
    aug = np.zeros((3, 3))
    aug[:2, :2] = a
    aug[:2, 2] = b
    phi = expm(aug * dt)
    return phi[:2, :2], phi[:2, 2]


def damping_controller_step(ctrl: DampingController, dp: float, dt: float) -> float:
    """Output for input ``dp`` at the current instant, then advance the states over ``dt``.

    The state update is the exact zero-order-hold discretisation of the
    two cascaded first-order blocks.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = ctrl.output(dp)
    phi, gamma = _damping_zoh(ctrl.Tw, ctrl.Td2, dt)
    ctrl.x_w, ctrl.x_ll = phi @ np.array([ctrl.x_w, ctrl.x_ll]) + gamma * dp
    return out


# --- STATCOM ----------------------------------------------------------------

@dataclass
class StatcomDevice:
    """Shunt converter; ``Iq`` is the q-axis current injected into the bus.

    With the d-axis on the bus voltage, the reactive power delivered to the
    network is ``Q = Id Vq - Iq Vd = -Iq Vd``: ``Iq > 0`` absorbs reactive
    power (lagging, inductive operation).
    """

    bus: int
    Iq: float = 0.0
    Iq0: float = 0.0
    control: str = "constant_current"
    pll_theta: float = 0.0
    tripped: bool = False

    def __post_init__(self):
        if self.control not in STATCOM_CONTROLS:
            raise ValueError(f"unknown STATCOM control {self.control!r}")


@dataclass
class PiDroopController:
    """PI regulator on ``(Qref - Q) + Kdroop (Vref - |V|)``.

    ``integ`` holds the running integral of the error; the integrator's
    initial condition is the steady current ``Iq0`` of the device.
    """

    Kp_q: float
    Ki_q: float
    Kdroop: float
    Qref: float
    Vref: float
    integ: float = 0.0

    @property
    def Kconst(self) -> float:
        return self.Qref + self.Kdroop * self.Vref

    def error(self, iq: float, vd: float, vq: float, vmag: float, id_: float = 0.0) -> float:
        q = id_ * vq - iq * vd
        return self.Qref - q + self.Kdroop * (self.Vref - vmag)

    def solve_iq(self, iq0: float, vd: float, vmag: float, integ: float | None = None) -> float:
        """Current solving ``Iq = Iq0 + Kp e(Iq) + Ki integ`` with ``Id = 0``.

        The error is affine in ``Iq`` (through ``Q = -Iq Vd``), so the
        algebraic loop closes in one division.
        """
        integ = self.integ if integ is None else integ
        num = iq0 + self.Kp_q * (self.Qref + self.Kdroop * (self.Vref - vmag)) + self.Ki_q * integ
        den = 1.0 - self.Kp_q * vd
        if abs(den) < 1e-12:
            raise ZeroDivisionError("PI loop gain Kp_q * Vd equals one; current is undetermined")
        return num / den


def dq_transform(v: complex, theta: float) -> tuple[float, float]:
    """Components of ``v`` in a frame whose d-axis sits at angle ``theta``."""
    z = complex(v) * cmath.exp(-1j * theta)
    return z.real, z.imag


def statcom_control_step(dev: StatcomDevice, ctrl: PiDroopController | None, v_bus: complex, dt: float) -> float:
    """Advance the STATCOM current regulator by ``dt`` at a frozen bus voltage."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    vmag = abs(complex(v_bus))
    if vmag < LOW_VOLTAGE_TRIP:
        dev.tripped = True
        dev.Iq = 0.0
        return 0.0
    if dev.tripped:
        return 0.0
    if dev.control == "constant_current" or ctrl is None:
        dev.Iq = dev.Iq0
        return dev.Iq
    dev.pll_theta = cmath.phase(complex(v_bus))
    vd, vq = dq_transform(v_bus, dev.pll_theta)
    dev.Iq = ctrl.solve_iq(dev.Iq0, vd, vmag)
    ctrl.integ += ctrl.error(dev.Iq, vd, vq, vmag) * dt
    return dev.Iq
