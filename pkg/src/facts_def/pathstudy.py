"""Two trajectories between the same voltage endpoints, and the energy integral along each.

Path I moves both voltage components linearly in time; path II uses powers
``k`` and ``n`` of ``alpha t``.  Both reach ``(Ux0 + 1, Uy0 + 1)`` at
``t1 = 1 / alpha``.  The lag-controlled compensator term is evaluated along
each; an algebraic control law serves as the path-independent control case.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .numerics import cumtrapz_product, nested_convolution_integral

KERNELS = ("lag", "algebraic")


class DomainError(ValueError):
    """Time outside ``[0, t1]``."""


class QuadratureError(ArithmeticError):
    """Step refinement did not reach the requested relative change."""


@dataclass(frozen=True)
class PathSpec:
    path_id: str = "I"
    alpha: float = 1.0
    k: int = 3
    n: int = 5
    Ux0: float = 0.8
    Uy0: float = 0.6

    def __post_init__(self):
        if self.path_id not in ("I", "II"):
            raise ValueError(f"path_id must be 'I' or 'II', got {self.path_id!r}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.k < 1 or self.n < 1:
            raise ValueError("exponents must be positive integers")

    @property
    def t1(self) -> float:
        return 1.0 / self.alpha

    @property
    def u0(self) -> float:
        return math.hypot(self.Ux0, self.Uy0)


@dataclass(frozen=True)
class PathValue:
    value: float
    tolerance: float
    n_steps: int


@dataclass(frozen=True)
class PathResult:
    alpha: float
    value_I: float
    value_II: float
    delta: float
    tol_I: float = 0.0
    tol_II: float = 0.0
    kernel: str = "lag"

    @property
    def tolerance(self) -> float:
        return max(self.tol_I, self.tol_II)


def _components(spec: PathSpec, t):
    s = spec.alpha * np.asarray(t, dtype=float)
    if spec.path_id == "I":
        return spec.Ux0 + s, spec.Uy0 + s
    return spec.Ux0 + s ** spec.k, spec.Uy0 + s ** spec.n


def path_point(spec: PathSpec, t: float) -> tuple[float, float, float]:
    """``(Ux, Uy, |U|)`` at time ``t``."""
    if not 0.0 <= t <= spec.t1 * (1.0 + 1e-12):
        raise DomainError(f"t = {t} outside [0, {spec.t1}]")
    ux, uy = _components(spec, t)
    return float(ux), float(uy), float(math.hypot(ux, uy))


def delta_u(spec: PathSpec):
    """Vectorised ``U(t) - U0`` along the path."""
    u0 = spec.u0

    def f(t):
        ux, uy = _components(spec, t)
        return np.hypot(ux, uy) - u0

    return f


def _lag_value(spec: PathSpec, tc: float, n_steps: int) -> float:
    return nested_convolution_integral(delta_u(spec), tc, spec.t1, n_steps, u0=spec.u0)


def eval_second_term(
    spec: PathSpec,
    tc: float = 0.1,
    prefactor: float = 1.0,
    n_per_unit: int = 10_000,
    rtol: float = 1e-6,
    max_doublings: int = 12,
) -> PathValue:
    """Lag-kernel term along the path, refined by step doubling.

    Starts at ``n_per_unit`` steps per unit time and doubles until two
    successive values differ by less than ``rtol`` relative.  The reported
    tolerance is that last difference (scaled by the prefactor), which for a
    first-order rule estimates the error of the returned value.
    """
    if tc <= 0:
        raise ValueError("Tc must be positive")
    if prefactor == 0:
        return PathValue(0.0, 0.0, 0)
    n = max(100, int(math.ceil(n_per_unit * spec.t1)))
    previous = _lag_value(spec, tc, n)
    for _ in range(max_doublings):
        n *= 2
        current = _lag_value(spec, tc, n)
        change = abs(current - previous)
        if change <= rtol * abs(current):
            return PathValue(prefactor * current, abs(prefactor) * change, n)
        previous = current
    raise QuadratureError(f"no convergence after {max_doublings} doublings (last change {change:.3e})")


def eval_algebraic_term(spec: PathSpec, tc: float = 0.1, prefactor: float = 1.0, n_per_unit: int = 10_000) -> PathValue:
    """Same term with the lag replaced by its zero-time-constant limit (``dkc = Kp dU``).

    The prefactor keeps its ``1/Tc`` normalisation, hence the factor ``tc``.
    The integral is a trapezoidal sum along the sampled path.
    """
    n = max(100, int(math.ceil(n_per_unit * spec.t1)))
    t = np.linspace(0.0, spec.t1, n + 1)
    du = delta_u(spec)(t)
    integral = cumtrapz_product(du * (spec.u0 + du), du)[-1]
    return PathValue(prefactor * tc * float(integral), 0.0, n)


def algebraic_closed_form(du_end: float, u0: float = 1.0, tc: float = 0.1, prefactor: float = 1.0) -> float:
    """``prefactor tc int_0^du_end x (u0 + x) dx``."""
    return prefactor * tc * (u0 * du_end ** 2 / 2.0 + du_end ** 3 / 3.0)


def _evaluate(args) -> PathResult:
    alpha, template, tc, prefactor, kernel = args
    values = []
    for path_id in ("I", "II"):
        spec = replace(template, path_id=path_id, alpha=alpha)
        if kernel == "lag":
            values.append(eval_second_term(spec, tc, prefactor))
        else:
            values.append(eval_algebraic_term(spec, tc, prefactor))
    v1, v2 = values
    return PathResult(alpha, v1.value, v2.value, v2.value - v1.value, v1.tolerance, v2.tolerance, kernel)


def alpha_sweep(
    alphas,
    spec_template: PathSpec | None = None,
    tc: float = 0.1,
    prefactor: float = 1.0,
    kernel: str = "lag",
    workers: int = 1,
) -> list[PathResult]:
    """One :class:`PathResult` per alpha, in input order."""
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    alphas = [float(a) for a in alphas]
    if any(not a > 0 for a in alphas):
        raise ValueError("all alpha values must be positive")
    template = spec_template or PathSpec()
    jobs = [(a, template, tc, prefactor, kernel) for a in alphas]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_evaluate, jobs))
    return [_evaluate(job) for job in jobs]


def write_csv(results: list[PathResult], path, tc: float, prefactor: float) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# Tc={tc!r} prefactor={prefactor!r}\n")
        writer = csv.writer(fh)
        writer.writerow(["alpha", "value_I", "value_II", "delta"])
        for r in results:
            writer.writerow([repr(r.alpha), repr(r.value_I), repr(r.value_II), repr(r.delta)])
