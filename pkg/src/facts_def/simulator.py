"""Fixed-step simulation of the classical-machine network with a TCSC and/or a STATCOM.

The network is linear once loads are frozen as admittances, so its inverse
``Z0`` is computed once.  Compensator modulation is a rank-one change of the
admittance matrix and is applied with the Sherman-Morrison formula; the
STATCOM is a current injection solved for its bus-voltage magnitude.
"""

from __future__ import annotations

import cmath
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .devices import (
    LOW_VOLTAGE_TRIP,
    DampingController,
    LagController,
    PiDroopController,
    TcscDevice,
)
from .network import Network, solve_power_flow
from .numerics import IntegrationError, rk4_step

DISTURBANCE_KINDS = ("pm_pulse", "pm_sine", "load_step", "qref_pulse", "none")


class InitializationError(RuntimeError):
    """Initial state is not an equilibrium."""


class AlgebraicLoopError(RuntimeError):
    """Device/network algebraic loop did not converge."""


@dataclass
class Disturbance:
    """Mode-exciting input.

    ``pm_pulse`` / ``pm_sine``: mechanical power of generator ``target``
    changes by ``magnitude * Pm0`` (rectangular pulse or sinusoid at
    ``frequency``).  ``load_step``: a constant-current load of ``magnitude``
    pu active power appears at bus ``target`` and stays.  ``qref_pulse``:
    the STATCOM reactive set-point moves by ``magnitude`` pu.
    """

    kind: str = "pm_pulse"
    target: str = "G1"
    magnitude: float = 0.05
    t_start: float = 1.0
    duration: float = 0.1
    frequency: float = 0.0

    def __post_init__(self):
        if self.kind not in DISTURBANCE_KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.kind != "none" and self.t_start <= 0:
            raise ValueError("disturbance t_start must be positive")
        if self.duration < 0:
            raise ValueError("disturbance duration must be non-negative")
        if self.kind == "pm_sine" and self.frequency <= 0:
            raise ValueError("pm_sine needs a positive frequency")

    @property
    def t_end(self) -> float:
        if self.kind in ("none",):
            return 0.0
        if self.kind == "load_step":
            return self.t_start
        return self.t_start + self.duration

    def value(self, t: float) -> float:
        """Disturbance amplitude at time ``t`` (0 when inactive)."""
        if self.kind == "none" or t < self.t_start:
            return 0.0
        if self.kind == "load_step":
            return self.magnitude
        if t >= self.t_start + self.duration:
            return 0.0
        if self.kind == "pm_sine":
            return self.magnitude * math.sin(2.0 * math.pi * self.frequency * (t - self.t_start))
        return self.magnitude


@dataclass
class TcscSettings:
    branch: str = "L8-9b"
    kc0: float = 0.3
    b0: float | None = None
    strategy: str = "fixed"
    Kp: float = 0.0
    Tc: float = 0.1
    Tw: float = 10.0
    Td1: float = 0.4867
    Td2: float = 0.0543
    feedback: str = "L9-10@10"
    dkc_limit: float = 0.2


@dataclass
class StatcomSettings:
    bus: int = 7
    control: str = "constant_current"
    q0: float = 1.0  # pu absorbed at steady state
    Kp_q: float = -0.2
    Ki_q: float = -5.0
    Kdroop: float = 0.0
    Qref: float | None = None  # None: steady delivered Q
    Vref: float | None = None  # None: steady |V|
    pll: str = "instant"
    T_pll: float = 0.02


@dataclass
class SimulationCase:
    network: Network
    tcsc: TcscSettings | None = None
    statcom: StatcomSettings | None = None
    disturbance: Disturbance = field(default_factory=Disturbance)
    duration: float = 25.0
    dt: float = 1e-3

    def __post_init__(self):
        if self.dt <= 0 or self.duration <= self.dt:
            raise ValueError("need dt > 0 and duration > dt")


@dataclass
class Event:
    t: float
    device: str
    message: str


@dataclass
class SimulatorState:
    """Everything fixed at initialisation plus the initial state vector."""

    case: SimulationCase
    network: Network
    v0: np.ndarray
    z0: np.ndarray
    y_load: np.ndarray
    gen_rows: np.ndarray
    xd: np.ndarray
    H: np.ndarray
    D: np.ndarray
    E_mag: np.ndarray
    Pm0: np.ndarray
    x0: np.ndarray
    layout: dict[str, slice]
    tcsc: TcscDevice | None = None
    u0: float = 0.0
    p_fb0: float = 0.0
    iq0: float = 0.0
    qref: float = 0.0
    vref: float = 0.0
    load_step_current: np.ndarray | None = None


def _feedback_branch(spec: str) -> tuple[str, int]:
    name, _, end = spec.partition("@")
    if not end:
        raise ValueError(f"feedback {spec!r} must look like '<branch>@<bus>'")
    return name, int(end)


def initialize(case: SimulationCase) -> SimulatorState:
    """Power flow, load freezing and back-solution of every dynamic state."""
    net = case.network.copy()
    tcsc = None
    if case.tcsc is not None:
        ts = case.tcsc
        net = net.with_tcsc(ts.branch, ts.kc0, ts.b0)
        br = net.branch(ts.branch)
        b0 = br.y_series.imag / (1.0 - ts.kc0)
        tcsc = TcscDevice(ts.branch, b0, ts.kc0, strategy=ts.strategy,
                          kc_limits=(ts.kc0 - ts.dkc_limit, ts.kc0 + ts.dkc_limit))
    extra_q = {}
    if case.statcom is not None:
        extra_q[case.statcom.bus] = -case.statcom.q0
    net.refresh_injections(extra_q)
    pf = solve_power_flow(net)
    v = pf.V
    idx = net.index

    y_load = net.load_admittances(v)
    gen_rows = np.array([idx[g.bus] for g in net.generators])
    if len(set(gen_rows.tolist())) != len(gen_rows):
        raise InitializationError("one generator per bus is supported")
    xd = np.array([g.xd_prime for g in net.generators])
    s_gen = pf.S[gen_rows] + np.array([sum(complex(ld.P, ld.Q) for ld in net.loads if ld.bus == g.bus)
                                       for g in net.generators]) \
        - 1j * np.array([extra_q.get(g.bus, 0.0) for g in net.generators])
    i_gen = np.conj(s_gen / v[gen_rows])
    emf = v[gen_rows] + 1j * xd * i_gen

    y_aug = net.ybus() + np.diag(y_load)
    y_aug[gen_rows, gen_rows] += 1.0 / (1j * xd)
    z0 = np.linalg.inv(y_aug)

    injections = np.zeros(net.n_bus, dtype=complex)
    iq0 = 0.0
    if case.statcom is not None:
        k = idx[case.statcom.bus]
        vm = abs(v[k])
        iq0 = case.statcom.q0 / vm
        injections[k] = 1j * iq0 * v[k] / vm
    injections[gen_rows] += emf / (1j * xd)
    v_check = z0 @ injections
    err = np.max(np.abs(v_check - v))
    if err > 1e-8:
        raise InitializationError(f"network solve does not reproduce the power flow (error {err:.2e} pu)")
    i_gen = (emf - v_check[gen_rows]) / (1j * xd)
    pm0 = np.real(emf * np.conj(i_gen))

    ng = len(gen_rows)
    layout = {"delta": slice(0, ng), "omega": slice(ng, 2 * ng)}
    n = 2 * ng
    if tcsc is not None and tcsc.strategy == "lag":
        layout["dkc"] = slice(n, n + 1)
        n += 1
    if tcsc is not None and tcsc.strategy == "damping_controller":
        layout["x_w"] = slice(n, n + 1)
        layout["x_ll"] = slice(n + 1, n + 2)
        n += 2
    if case.statcom is not None and case.statcom.control == "pi_droop":
        layout["integ"] = slice(n, n + 1)
        n += 1
        if case.statcom.pll == "first_order":
            layout["pll"] = slice(n, n + 1)
            n += 1
    x0 = np.zeros(n)
    x0[layout["delta"]] = np.angle(emf)
    if "pll" in layout:
        x0[layout["pll"]] = cmath.phase(v[idx[case.statcom.bus]])

    state = SimulatorState(
        case=case, network=net, v0=v_check, z0=z0, y_load=y_load, gen_rows=gen_rows, xd=xd,
        H=np.array([g.H for g in net.generators]), D=np.array([g.D for g in net.generators]),
        E_mag=np.abs(emf), Pm0=pm0, x0=x0, layout=layout, tcsc=tcsc, iq0=iq0,
    )
    if tcsc is not None:
        br = net.branch(tcsc.branch)
        state.u0 = abs(v_check[idx[br.from_bus]] - v_check[idx[br.to_bus]])
        if tcsc.strategy == "damping_controller":
            name, end = _feedback_branch(case.tcsc.feedback)
            state.p_fb0 = _branch_power(net, v_check, name, end)
    if case.statcom is not None:
        sc = case.statcom
        vs = abs(v_check[idx[sc.bus]])
        state.qref = -iq0 * vs if sc.Qref is None else sc.Qref
        state.vref = vs if sc.Vref is None else sc.Vref
    dist = case.disturbance
    if dist.kind == "load_step":
        k = idx[int(dist.target)]
        state.load_step_current = np.zeros(net.n_bus, dtype=complex)
        state.load_step_current[k] = -np.conj(dist.magnitude / v_check[k])

    model = _Model(state)
    deriv, _ = model.evaluate(0.0, x0, 0.0)
    worst = int(np.argmax(np.abs(deriv)))
    if abs(deriv[worst]) >= 1e-8:
        names = [f"{key}[{j}]" for key, sl in layout.items() for j in range(sl.stop - sl.start)]
        raise InitializationError(f"initial derivative of {names[worst]} is {deriv[worst]:.3e}")
    return state


def initial_derivative(state: SimulatorState) -> np.ndarray:
    """State derivative at the initial point with no disturbance applied."""
    return _Model(state).evaluate(0.0, state.x0, 0.0)[0]


def _branch_power(net: Network, v: np.ndarray, name: str, end: int) -> float:
    br = net.branch(name)
    idx = net.index
    i = br.end_current(v[idx[br.from_bus]], v[idx[br.to_bus]], end)
    return float((v[idx[end]] * np.conj(i)).real)


class _Model:
    """Algebraic solve and state derivatives for one initialised case."""

    def __init__(self, st: SimulatorState):
        self.st = st
        case = st.case
        net = st.network
        idx = net.index
        self.zg = st.z0[:, st.gen_rows] / (1j * st.xd)
        self.omega_s = 2.0 * math.pi * net.f_hz
        self.tcsc = st.tcsc
        self.ts = case.tcsc
        self.sc = case.statcom
        self.dist = case.disturbance
        self.dkc_guess = 0.0
        self.iq_guess = st.iq0
        self.u_guess = None
        self.clamped = False
        self.tripped = False
        if self.tcsc is not None:
            br = net.branch(self.tcsc.branch)
            self.ti, self.tk = idx[br.from_bus], idx[br.to_bus]
            self.z_a = st.z0[:, self.ti] - st.z0[:, self.tk]
            self.s_aa = self.z_a[self.ti] - self.z_a[self.tk]
            if self.tcsc.strategy == "lag":
                self.lag = LagController(self.ts.Tc, self.ts.Kp)
            if self.tcsc.strategy == "damping_controller":
                self.pod = DampingController(self.ts.Kp, self.ts.Tw, self.ts.Td1, self.ts.Td2,
                                             feedback=self.ts.feedback)
                name, end = _feedback_branch(self.ts.feedback)
                fb = net.branch(name)
                self.fb_end = idx[end]
                self.fb_other = idx[fb.to_bus if end == fb.from_bus else fb.from_bus]
                self.fb_y = fb.y_series
                self.fb_bsh = fb.b_shunt_half
        if self.sc is not None:
            self.s = idx[self.sc.bus]
            self.z_s = st.z0[:, self.s]
            if self.sc.control == "pi_droop":
                self.pi = PiDroopController(self.sc.Kp_q, self.sc.Ki_q, self.sc.Kdroop, st.qref, st.vref)

    # --- algebraic layer ---------------------------------------------------

    def _statcom_solve(self, vg_s: complex, z_ss: complex, integ: float, theta: float | None,
                       qref_shift: float) -> tuple[float, complex]:
        """Current ``Iq`` and the bus voltage it produces, given the open-circuit voltage."""
        st = self.st
        if self.tripped:
            return 0.0, vg_s
        if self.sc.control == "constant_current":
            # |U + w| = |vg| with w = -j z Iq0: a quadratic in U
            w = -1j * z_ss * st.iq0
            disc = w.real ** 2 - abs(w) ** 2 + abs(vg_s) ** 2
            if disc < 0:
                raise AlgebraicLoopError("no real STATCOM voltage solution")
            u = -w.real + math.sqrt(disc)
            return st.iq0, vg_s * u / (u + w)
        pi = self.pi
        num0 = st.iq0 + pi.Kp_q * (pi.Qref + qref_shift + pi.Kdroop * pi.Vref) + pi.Ki_q * integ
        if theta is None:
            # d-axis on the voltage: Vd = U, Iq = (num0 - Kp Kd U) / (1 - Kp U)
            kp, kd = pi.Kp_q, pi.Kdroop
            u = self.u_guess if self.u_guess is not None else abs(vg_s)
            target = abs(vg_s) ** 2
            for _ in range(50):
                den = 1.0 - kp * u
                iq = (num0 - kp * kd * u) / den
                diq = (-kp * kd * den + kp * (num0 - kp * kd * u)) / den ** 2
                c = u - 1j * z_ss * iq
                dc = 1.0 - 1j * z_ss * diq
                g = abs(c) ** 2 - target
                dg = 2.0 * (c.conjugate() * dc).real
                step = g / dg
                u -= step
                if abs(step) < 1e-14:
                    break
            else:
                raise AlgebraicLoopError("STATCOM voltage iteration did not converge")
            iq = (num0 - kp * kd * u) / (1.0 - kp * u)
            self.u_guess = u
            return iq, vg_s * u / (u - 1j * z_ss * iq)
        # lagging PLL: frame fixed within the stage, solve for Iq directly
        rot = cmath.exp(1j * theta)

        def law(iq):
            vs = vg_s + z_ss * 1j * iq * rot
            vd = (vs / rot).real
            return pi.solve_iq(st.iq0 + pi.Kp_q * qref_shift, vd, abs(vs), integ)

        iq = _fixed_point(law, self.iq_guess)
        return iq, vg_s + z_ss * 1j * iq * rot

    def _voltages(self, vg: np.ndarray, dkc: float, integ: float, theta, qref_shift: float):
        """Full bus voltages for compensation ``dkc``; returns ``(V, Iq)``."""
        zs = self.z_s if self.sc is not None else None
        if self.tcsc is not None and dkc != 0.0:
            dy = -1j * dkc * self.tcsc.b0
            f = dy / (1.0 + dy * self.s_aa)
            vg = vg - self.z_a * (f * (vg[self.ti] - vg[self.tk]))
            if zs is not None:
                zs = zs - self.z_a * (f * (zs[self.ti] - zs[self.tk]))
        if self.sc is None:
            return vg, 0.0
        iq, vs = self._statcom_solve(vg[self.s], zs[self.s], integ, theta, qref_shift)
        is_inj = (vs - vg[self.s]) / zs[self.s]
        return vg + zs * is_inj, iq

    def _feedback_power(self, v: np.ndarray) -> float:
        ve, vo = v[self.fb_end], v[self.fb_other]
        i = self.fb_y * (ve - vo) + 1j * self.fb_bsh * ve
        return (ve * i.conjugate()).real

    def evaluate(self, t: float, x: np.ndarray, d: float):
        """State derivative and algebraic snapshot at ``(t, x)`` with disturbance value ``d``."""
        st = self.st
        lay = st.layout
        delta = x[lay["delta"]]
        omega = x[lay["omega"]]
        emf = st.E_mag * np.exp(1j * delta)
        vg = self.zg @ emf
        kind = self.dist.kind
        if kind == "load_step" and d != 0.0:
            vg = vg + st.z0 @ st.load_step_current
        qref_shift = d if kind == "qref_pulse" else 0.0
        integ = x[lay["integ"]][0] if "integ" in lay else 0.0
        theta = x[lay["pll"]][0] if "pll" in lay else None

        snap = {}
        strategy = self.tcsc.strategy if self.tcsc is not None else None
        if strategy in (None, "fixed"):
            dkc = 0.0
            v, iq = self._voltages(vg, 0.0, integ, theta, qref_shift)
        elif strategy == "lag":
            dkc, clamped = self.tcsc.clamp(x[lay["dkc"]][0])
            snap["clamped"] = clamped
            v, iq = self._voltages(vg, dkc, integ, theta, qref_shift)
        else:
            cache = {}

            def law(dkc_try):
                v_try, iq_try = self._voltages(vg, dkc_try, integ, theta, qref_shift)
                if strategy == "algebraic":
                    raw = self.ts.Kp * (abs(v_try[self.ti] - v_try[self.tk]) - st.u0)
                else:
                    dp = self._feedback_power(v_try) - st.p_fb0
                    raw = self.pod.output(dp, x[lay["x_w"]][0], x[lay["x_ll"]][0])
                value, clamped = self.tcsc.clamp(raw)
                cache[dkc_try] = (v_try, iq_try, clamped)
                return value

            dkc = _fixed_point(law, self.dkc_guess)
            if dkc not in cache:
                law(dkc)
            v, iq, snap["clamped"] = cache[dkc]
            self.dkc_guess = dkc
        if self.sc is not None:
            self.iq_guess = iq

        vt = v[st.gen_rows]
        i_gen = (emf - vt) / (1j * st.xd)
        pe = np.real(emf * np.conj(i_gen))
        pm = st.Pm0.copy()
        if kind in ("pm_pulse", "pm_sine") and d != 0.0:
            g = [gen.name for gen in st.network.generators].index(self.dist.target)
            pm[g] += d * st.Pm0[g]

        out = np.empty_like(x)
        out[lay["delta"]] = self.omega_s * omega
        out[lay["omega"]] = (pm - pe - st.D * omega) / (2.0 * st.H)
        if strategy == "lag":
            du = abs(v[self.ti] - v[self.tk]) - st.u0
            out[lay["dkc"]] = self.lag.rhs(x[lay["dkc"]][0], du)
        elif strategy == "damping_controller":
            dp = self._feedback_power(v) - st.p_fb0
            out[lay["x_w"]], out[lay["x_ll"]] = self.pod.rhs(dp, x[lay["x_w"]][0], x[lay["x_ll"]][0])
        if "integ" in lay:
            vs = v[self.s]
            frame = cmath.phase(vs) if theta is None else theta
            vd = (vs * cmath.exp(-1j * frame)).real
            out[lay["integ"]] = 0.0 if self.tripped else self.pi.error(iq, vd, 0.0, abs(vs)) + qref_shift
            if theta is not None:
                err = (cmath.phase(vs) - theta + math.pi) % (2.0 * math.pi) - math.pi
                out[lay["pll"]] = err / self.sc.T_pll
        snap.update(v=v, dkc=dkc, iq=iq, pm=pm)
        return out, snap


def _fixed_point(law, x0: float, tol: float = 1e-14, max_iter: int = 60) -> float:
    """Solve ``x = law(x)`` by the secant method on ``law(x) - x``."""
    x1 = x0
    f1 = law(x1) - x1
    if abs(f1) <= tol:
        return x1
    x2 = x1 + f1
    for _ in range(max_iter):
        f2 = law(x2) - x2
        if abs(f2) <= tol * max(1.0, abs(x2)):
            return x2
        denom = f2 - f1
        if denom == 0.0:
            break
        x1, f1, x2 = x2, f2, x2 - f2 * (x2 - x1) / denom
    raise AlgebraicLoopError(f"algebraic loop did not converge near {x2!r}")


@dataclass
class Trajectory:
    """Uniformly sampled simulation record.

    Bus voltages ``V`` are indexed by bus position (``bus_ids``); device
    arrays are one value per sample.  Branch currents are derived on demand
    from ``V`` and the live branch admittances.
    """

    t: np.ndarray
    V: np.ndarray
    bus_ids: list[int]
    network: Network
    delta: np.ndarray
    omega: np.ndarray
    Pm: np.ndarray
    E_mag: np.ndarray
    y_load: np.ndarray
    dkc: np.ndarray
    x_w: np.ndarray
    x_ll: np.ndarray
    Iq: np.ndarray
    integ: np.ndarray
    pll_theta: np.ndarray
    tcsc: TcscDevice | None = None
    statcom_bus: int | None = None
    statcom_iq0: float = 0.0
    load_step_current: np.ndarray | None = None
    load_step_on: np.ndarray | None = None
    events: list[Event] = field(default_factory=list)
    disturbance: Disturbance | None = None
    feedback: str = "L9-10@10"

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def __len__(self) -> int:
        return len(self.t)

    def col(self, bus: int) -> int:
        try:
            return self.network.index[bus]
        except KeyError:
            raise KeyError(f"unknown bus {bus}") from None

    def bus_voltage(self, bus: int) -> np.ndarray:
        return self.V[:, self.col(bus)]

    def branch_admittance(self, name: str) -> np.ndarray | complex:
        br = self.network.branch(name)
        if self.tcsc is not None and name == self.tcsc.branch:
            return 1j * (1.0 - self.tcsc.kc0 - self.dkc) * self.tcsc.b0
        return br.y_series

    def branch_current(self, name: str, end_bus: int) -> np.ndarray:
        """Current flowing from ``end_bus`` into branch ``name`` at every sample."""
        br = self.network.branch(name)
        if end_bus not in (br.from_bus, br.to_bus):
            raise KeyError(f"bus {end_bus} is not an end of branch {name}")
        other = br.to_bus if end_bus == br.from_bus else br.from_bus
        ve, vo = self.bus_voltage(end_bus), self.bus_voltage(other)
        return self.branch_admittance(name) * (ve - vo) + 1j * br.b_shunt_half * ve

    def branch_power(self, name: str, end_bus: int) -> np.ndarray:
        s = self.bus_voltage(end_bus) * np.conj(self.branch_current(name, end_bus))
        return s.real

    def feedback_power(self) -> np.ndarray:
        name, end = _feedback_branch(self.feedback)
        return self.branch_power(name, end)

    def generator_current(self, name: str) -> np.ndarray:
        """Current injected by generator ``name`` into its bus."""
        k = [g.name for g in self.network.generators].index(name)
        gen = self.network.generators[k]
        emf = self.E_mag[k] * np.exp(1j * self.delta[:, k])
        return (emf - self.bus_voltage(gen.bus)) / (1j * gen.xd_prime)

    def load_current(self, bus: int) -> np.ndarray:
        """Current injected into the network by the loads at ``bus`` (negative of the drawn current)."""
        k = self.col(bus)
        current = -self.y_load[k] * self.V[:, k]
        if self.load_step_current is not None:
            current = current + self.load_step_current[k] * self.load_step_on
        return current

    def statcom_current(self) -> np.ndarray:
        """STATCOM current injected into its bus, ``j Iq`` in the device frame."""
        if self.statcom_bus is None:
            raise KeyError("trajectory has no STATCOM")
        return 1j * self.Iq * np.exp(1j * self.pll_theta)

    def to_csv(self, path_or_buffer) -> None:
        """Write every sample; column order is listed on the leading comment line."""
        columns, data = ["t"], [self.t]
        for k, bus in enumerate(self.bus_ids):
            columns += [f"bus{bus}.Vre", f"bus{bus}.Vim"]
            data += [self.V[:, k].real, self.V[:, k].imag]
        for br in self.network.branches:
            for end in (br.from_bus, br.to_bus):
                cur = self.branch_current(br.name, end)
                columns += [f"branch{br.name}@{end}.Ire", f"branch{br.name}@{end}.Iim"]
                data += [cur.real, cur.imag]
        for k, gen in enumerate(self.network.generators):
            columns += [f"dev.{gen.name}.delta", f"dev.{gen.name}.omega_dev", f"dev.{gen.name}.Pm"]
            data += [self.delta[:, k], self.omega[:, k], self.Pm[:, k]]
        if self.tcsc is not None:
            columns += ["dev.tcsc.dkc", "dev.tcsc.x_w", "dev.tcsc.x_ll"]
            data += [self.dkc, self.x_w, self.x_ll]
        if self.statcom_bus is not None:
            columns += ["dev.statcom.Iq", "dev.statcom.integ", "dev.statcom.pll_theta"]
            data += [self.Iq, self.integ, self.pll_theta]
        table = np.column_stack(data)
        own = isinstance(path_or_buffer, (str, bytes)) or hasattr(path_or_buffer, "__fspath__")
        handle = open(path_or_buffer, "w", newline="") if own else path_or_buffer
        try:
            handle.write("# columns: " + " ".join(columns) + "\n")
            handle.write(",".join(columns) + "\n")
            buf = io.StringIO()
            np.savetxt(buf, table, delimiter=",", fmt="%.12e")
            handle.write(buf.getvalue())
        finally:
            if own:
                handle.close()


def run(case: SimulationCase, state: SimulatorState | None = None) -> Trajectory:
    """Integrate ``case`` from its equilibrium and record every step."""
    st = state if state is not None else initialize(case)
    model = _Model(st)
    lay = st.layout
    dt = case.dt
    n_steps = int(round(case.duration / dt))
    n = n_steps + 1
    t = np.arange(n) * dt
    ng = len(st.gen_rows)
    nb = st.network.n_bus
    rec_v = np.empty((n, nb), dtype=complex)
    rec_x = np.empty((n, len(st.x0)))
    rec_dkc = np.zeros(n)
    rec_iq = np.full(n, st.iq0)
    rec_pm = np.empty((n, ng))
    rec_theta = np.zeros(n)
    step_on = np.zeros(n)
    events: list[Event] = []
    dist = case.disturbance

    x = st.x0.copy()
    first = {}

    def deriv(tt, xx):
        out, snap = model.evaluate(tt, xx, d_step)
        if not first:
            first.update(snap)
        return out

    was_clamped = False
    for k in range(n):
        d_step = dist.value(t[k] + 0.5 * dt)
        first.clear()
        if k < n_steps:
            try:
                x_next = rk4_step(x, deriv, dt, t[k])
            except (FloatingPointError, ZeroDivisionError, AlgebraicLoopError) as exc:
                raise IntegrationError(str(exc), float(t[k])) from exc
        else:
            deriv(t[k], x)
        snap = first
        rec_v[k] = snap["v"]
        rec_x[k] = x
        rec_dkc[k] = snap["dkc"]
        rec_iq[k] = snap["iq"]
        rec_pm[k] = snap["pm"]
        step_on[k] = 1.0 if (dist.kind == "load_step" and d_step != 0.0) else 0.0
        if case.statcom is not None:
            vs = snap["v"][model.s]
            rec_theta[k] = cmath.phase(vs) if "pll" not in lay else x[lay["pll"]][0]
            if not model.tripped and abs(vs) < LOW_VOLTAGE_TRIP:
                model.tripped = True
                events.append(Event(float(t[k]), "statcom", f"low-voltage trip at |V| = {abs(vs):.3f} pu"))
        clamped = bool(snap.get("clamped", False))
        if clamped and not was_clamped:
            events.append(Event(float(t[k]), "tcsc", f"dkc clamped at {snap['dkc']:+.4f}"))
        was_clamped = clamped
        if k < n_steps:
            x = x_next

    def column(key):
        return rec_x[:, lay[key].start] if key in lay else np.zeros(n)

    return Trajectory(
        t=t, V=rec_v, bus_ids=[b.id for b in st.network.buses], network=st.network,
        delta=rec_x[:, lay["delta"]], omega=rec_x[:, lay["omega"]], Pm=rec_pm,
        E_mag=st.E_mag.copy(), y_load=st.y_load.copy(),
        dkc=rec_dkc,
        x_w=column("x_w"), x_ll=column("x_ll"), Iq=rec_iq, integ=column("integ"), pll_theta=rec_theta,
        tcsc=st.tcsc, statcom_bus=case.statcom.bus if case.statcom is not None else None,
        statcom_iq0=st.iq0, load_step_current=st.load_step_current, load_step_on=step_on,
        events=events, disturbance=dist,
        feedback=case.tcsc.feedback if case.tcsc is not None else "L9-10@10",
    )
