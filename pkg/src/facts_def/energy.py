"""Dissipating energy flow: terminal traces, device decompositions and dc-trend slopes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import linregress

from .numerics import cumtrapz_product, cumulative_def
from .simulator import Trajectory

CHANNELS = ("W_total", "W0", "W_stored", "W_pathdep")
DIRECTIONS = ("into_device", "into_network")


class AnalysisError(ValueError):
    """Window too short, no oscillation found, or similar."""


class ConsistencyError(RuntimeError):
    """Decomposed channels do not add up to the terminal measurement."""


@dataclass
class EnergyTrace:
    """Cumulative energy for one measurement point, with optional decomposition channels."""

    t: np.ndarray
    W_total: np.ndarray
    W0: np.ndarray | None = None
    W_stored: np.ndarray | None = None
    W_pathdep: np.ndarray | None = None
    direction: str = "into_device"
    name: str = ""

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")

    def channel(self, name: str) -> np.ndarray:
        if name not in CHANNELS:
            raise KeyError(f"unknown channel {name!r}")
        values = getattr(self, name)
        if values is None:
            raise KeyError(f"trace {self.name!r} has no channel {name}")
        return values

    def flipped(self) -> "EnergyTrace":
        """Same energy seen from the other side of the terminal."""
        neg = {c: (None if getattr(self, c) is None else -getattr(self, c)) for c in CHANNELS}
        other = "into_network" if self.direction == "into_device" else "into_device"
        return replace(self, direction=other, **neg)

    def consistency_error(self) -> float:
        """Worst ``|W_total - sum(channels)|`` relative to the peak-to-peak of ``W_total``."""
        parts = [getattr(self, c) for c in CHANNELS[1:]]
        if any(p is None for p in parts):
            raise KeyError(f"trace {self.name!r} is not decomposed")
        residual = np.max(np.abs(self.W_total - sum(parts)))
        span = np.ptp(self.W_total)
        return float(residual / span) if span > 0 else float(residual)

    def to_csv(self, path) -> None:
        present = [c for c in CHANNELS if getattr(self, c) is not None]
        table = np.column_stack([self.t] + [getattr(self, c) for c in present])
        header = f"# trace={self.name} direction={self.direction}\n" + ",".join(["t", *present])
        np.savetxt(path, table, delimiter=",", fmt="%.12e", header=header, comments="")


@dataclass
class SlopeVerdict:
    slope: float
    ci_halfwidth: float
    label: str
    threshold: float
    ripple: float
    period: float
    window: tuple[float, float]
    n_cycles: int

    def __post_init__(self):
        if self.label not in ("source", "sink", "neutral"):
            raise ValueError(f"unknown label {self.label!r}")


# --- measurement -----------------------------------------------------------

def def_terminal(traj: Trajectory, branch: str, end_bus: int, direction: str = "into_device") -> EnergyTrace:
    """Energy entering ``branch`` from ``end_bus``."""
    current = traj.branch_current(branch, end_bus)
    trace = EnergyTrace(traj.t, cumulative_def(current, traj.bus_voltage(end_bus)),
                        name=f"{branch}@{end_bus}")
    return trace if direction == "into_device" else trace.flipped()


def tcsc_channels(u: np.ndarray, dkc: np.ndarray, b0: float, kc0: float, u0: float | None = None):
    """Linear, quadratic and path-dependent parts of ``-b int U dU`` with ``b = (1 - kc) b0``.

    ``u`` is the magnitude of the voltage across the device and ``dkc`` the
    compensation perturbation at the same samples.
    """
    u = np.asarray(u, dtype=float)
    dkc = np.asarray(dkc, dtype=float)
    u0 = u[0] if u0 is None else u0
    du = u - u0
    scale = -b0 * (1.0 - kc0)
    w0 = scale * u0 * du
    w_stored = 0.5 * scale * du ** 2
    w_pathdep = b0 * cumtrapz_product(dkc * u, du)
    return w0, w_stored, w_pathdep


def def_tcsc_decompose(traj: Trajectory, tol: float = 1e-3) -> EnergyTrace:
    """TCSC energy measured at both terminals, split into its three channels."""
    dev = traj.tcsc
    if dev is None:
        raise KeyError("trajectory has no TCSC")
    br = traj.network.branch(dev.branch)
    total = def_terminal(traj, br.name, br.from_bus).W_total + def_terminal(traj, br.name, br.to_bus).W_total
    u = np.abs(traj.bus_voltage(br.from_bus) - traj.bus_voltage(br.to_bus))
    w0, w_stored, w_pathdep = tcsc_channels(u, traj.dkc, dev.b0, dev.kc0)
    trace = EnergyTrace(traj.t, total, w0, w_stored, w_pathdep, name="tcsc")
    _check(trace, tol)
    return trace


def statcom_dq(traj: Trajectory):
    """Bus voltage and into-device current in the controller frame: ``(Vd, Vq, Id, Iq, theta)``."""
    if traj.statcom_bus is None:
        raise KeyError("trajectory has no STATCOM")
    theta = traj.pll_theta
    rot = np.exp(-1j * theta)
    v = traj.bus_voltage(traj.statcom_bus) * rot
    i_in = -traj.statcom_current() * rot
    return v.real, v.imag, i_in.real, i_in.imag, theta


def def_statcom_decompose(traj: Trajectory, tol: float = 1e-3) -> EnergyTrace:
    """STATCOM energy at its bus, split into the steady-current and path-dependent channels.

    A frame that lags the voltage contributes ``(Id Vd + Iq Vq) d theta``;
    that term is booked with the path-dependent channel and vanishes when
    the d-axis sits on the voltage.
    """
    vd, vq, id_, iq, theta = statcom_dq(traj)
    v_bus = traj.bus_voltage(traj.statcom_bus)
    total = cumulative_def(-traj.statcom_current(), v_bus)
    iq0 = iq[0]
    id0 = id_[0]
    dvd, dvq = vd - vd[0], vq - vq[0]
    w0 = -iq0 * dvd + id0 * dvq
    w_pathdep = cumtrapz_product(id_ - id0, dvq) - cumtrapz_product(iq - iq0, dvd) \
        + cumtrapz_product(id_ * vd + iq * vq, theta)
    trace = EnergyTrace(traj.t, total, w0, np.zeros_like(w0), w_pathdep, name="statcom")
    _check(trace, tol)
    return trace


def _check(trace: EnergyTrace, tol: float) -> None:
    err = trace.consistency_error()
    if err > tol:
        raise ConsistencyError(f"{trace.name}: channels miss the terminal energy by {err:.2e} of its range")


def def_injection(traj: Trajectory, bus: int, device: str) -> EnergyTrace:
    """Energy injected into the network at ``bus`` by ``device``.

    ``device`` is a generator name, ``"load"``, ``"statcom"`` or ``"tcsc"``
    (for the series device ``bus`` selects one of its two terminals).
    """
    v = traj.bus_voltage(bus)
    if device == "load":
        current = traj.load_current(bus)
    elif device == "statcom":
        if traj.statcom_bus != bus:
            raise KeyError(f"no STATCOM at bus {bus}")
        current = traj.statcom_current()
    elif device == "tcsc":
        if traj.tcsc is None:
            raise KeyError("trajectory has no TCSC")
        return replace(def_terminal(traj, traj.tcsc.branch, bus).flipped(), name=f"tcsc@{bus}")
    else:
        gen = next((g for g in traj.network.generators if g.name == device), None)
        if gen is None:
            raise KeyError(f"unknown device {device!r}")
        if gen.bus != bus:
            raise KeyError(f"generator {device} is not at bus {bus}")
        current = traj.generator_current(device)
    return EnergyTrace(traj.t, cumulative_def(current, v), direction="into_network", name=f"{device}@{bus}")


def injection_traces(traj: Trajectory) -> list[EnergyTrace]:
    """Into-network traces of every device: generators, loads, STATCOM and both TCSC terminals."""
    traces = [def_injection(traj, g.bus, g.name) for g in traj.network.generators]
    load_buses = sorted({ld.bus for ld in traj.network.loads})
    if traj.load_step_current is not None:
        load_buses = sorted(set(load_buses) | {traj.bus_ids[k] for k in np.flatnonzero(traj.load_step_current)})
    traces += [def_injection(traj, b, "load") for b in load_buses]
    if traj.statcom_bus is not None:
        traces.append(def_injection(traj, traj.statcom_bus, "statcom"))
    if traj.tcsc is not None:
        br = traj.network.branch(traj.tcsc.branch)
        traces += [def_injection(traj, br.from_bus, "tcsc"), def_injection(traj, br.to_bus, "tcsc")]
    return traces


def total_injection(traj: Trajectory) -> EnergyTrace:
    """Sum of all device injections; in a lossless network this is energy stored in lines and shunts."""
    total = sum(tr.W_total for tr in injection_traces(traj))
    return EnergyTrace(traj.t, total, direction="into_network", name="all_devices")


# --- slope analysis --------------------------------------------------------

def analysis_window(traj: Trajectory, settle: float = 1.0) -> tuple[float, float]:
    """From ``settle`` seconds after the disturbance ends to the end of the record."""
    dist = traj.disturbance
    start = (dist.t_end if dist is not None else 0.0) + settle
    return float(start), float(traj.t[-1])


def upward_crossings(t: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Interpolated times where ``x`` crosses zero going up."""
    idx = np.flatnonzero((x[:-1] < 0.0) & (x[1:] >= 0.0))
    frac = -x[idx] / (x[idx + 1] - x[idx])
    return t[idx] + frac * (t[idx + 1] - t[idx])


def dominant_period(t: np.ndarray, signal: np.ndarray) -> float:
    """Mean spacing of upward zero crossings of the linearly detrended signal."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(signal, dtype=float)
    fit = np.polyfit(t - t[0], x, 1)
    x = x - np.polyval(fit, t - t[0])
    crossings = upward_crossings(t, x)
    if len(crossings) < 2:
        raise AnalysisError("fewer than two zero crossings: no oscillation to fit")
    return float((crossings[-1] - crossings[0]) / (len(crossings) - 1))


def _boxcar(t: np.ndarray, w: np.ndarray, period: float) -> np.ndarray:
    c = cumtrapz_product(w, t)
    half = 0.5 * period
    return (np.interp(t + half, t, c) - np.interp(t - half, t, c)) / period


def dc_trend(t: np.ndarray, w: np.ndarray, period: float) -> tuple[np.ndarray, np.ndarray]:
    """Cycle average of ``w`` (two passes of a one-period moving mean).

    Returns ``(trend, valid)``; samples closer than one period to either end
    are not fully supported and are flagged invalid.
    """
    trend = _boxcar(t, _boxcar(t, w, period), period)
    valid = (t >= t[0] + period - 1e-12) & (t <= t[-1] - period + 1e-12)
    return trend, valid


def slope_estimate(
    trace: EnergyTrace,
    window: tuple[float, float],
    period: float | None = None,
    reference: np.ndarray | None = None,
    channel: str = "W_pathdep",
    rel_threshold: float = 1e-2,
) -> SlopeVerdict:
    """Slope of the dc trend of ``channel`` over an integer number of cycles in ``window``.

    The cycle length is ``period`` if given, otherwise it is measured on
    ``reference`` (a signal sampled like the trace) inside the window.
    """
    t = trace.t
    w = trace.channel(channel)
    t_a, t_b = window
    if not t[0] <= t_a < t_b <= t[-1] + 1e-9:
        raise AnalysisError(f"window {window} outside the record [{t[0]}, {t[-1]}]")
    if period is None:
        if reference is None:
            raise AnalysisError("need a period or a reference signal")
        inside = (t >= t_a) & (t <= t_b)
        period = dominant_period(t[inside], np.asarray(reference)[inside])
    n_cycles = int(math.floor((t_b - t_a) / period + 1e-9))
    if n_cycles < 3:
        raise AnalysisError(f"window holds {n_cycles} cycles of {period:.3f} s; at least 3 are needed")
    t_b = t_a + n_cycles * period
    trend, valid = dc_trend(t, w, period)
    sel = valid & (t >= t_a) & (t <= t_b + 1e-9)
    if np.count_nonzero(sel) < 3:
        raise AnalysisError("window leaves no fully supported samples for the trend")
    fit = linregress(t[sel], trend[sel])
    ripple = 0.5 * float(np.ptp(w[sel] - trend[sel]))
    threshold = max(rel_threshold * ripple, 1e-9)
    slope = float(fit.slope)
    if slope > threshold:
        label = "sink"
    elif slope < -threshold:
        label = "source"
    else:
        label = "neutral"
    if trace.direction == "into_network" and label != "neutral":
        label = "source" if label == "sink" else "sink"
    return SlopeVerdict(slope, 1.96 * float(fit.stderr), label, threshold, ripple, float(period),
                        (float(t_a), float(t_b)), n_cycles)


@dataclass
class CycleCheck:
    """Channel value change over each closed cycle of the driving deviation."""

    crossings: np.ndarray
    increments: np.ndarray
    ratios: np.ndarray
    label: str = field(default="indeterminate")


def cycle_increments(
    t: np.ndarray,
    w: np.ndarray,
    deviation: np.ndarray,
    window: tuple[float, float] | None = None,
    independent_tol: float = 1e-3,
    dependent_tol: float = 1e-2,
    abs_floor: float = 1e-12,
) -> CycleCheck:
    """Closed-cycle test of path dependence.

    Cycles are delimited by upward zero crossings of ``deviation``, where
    the state returns to the same point.  Each increment of ``w`` is compared
    with the half range of ``w`` over that cycle.  All ratios below
    ``independent_tol`` read as path independent; all above
    ``dependent_tol`` with a common sign read as path dependent.  Spans
    below ``abs_floor`` count as an identically zero channel.
    """
    t = np.asarray(t, dtype=float)
    w = np.asarray(w, dtype=float)
    x = np.asarray(deviation, dtype=float)
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, w, x = t[sel], w[sel], x[sel]
    crossings = upward_crossings(t, x)
    if len(crossings) < 3:
        raise AnalysisError("fewer than two closed cycles in the window")
    at = np.interp(crossings, t, w)
    increments = np.diff(at)
    spans = np.array([0.5 * np.ptp(w[(t >= a) & (t <= b)]) for a, b in zip(crossings[:-1], crossings[1:])])
    ratios = np.abs(increments) / np.maximum(spans, abs_floor)
    if np.all(ratios < independent_tol):
        label = "path_independent"
    elif np.all(ratios > dependent_tol) and (np.all(increments > 0) or np.all(increments < 0)):
        label = "path_dependent"
    else:
        label = "indeterminate"
    return CycleCheck(crossings, increments, ratios, label)


def summary_block(values: dict) -> str:
    """``key=value`` lines, one per entry, floats in compact scientific form."""
    lines = []
    for key, value in values.items():
        if isinstance(value, float):
            value = f"{value:.6e}"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
