"""Bus/branch network model, admittance matrix, power flow and the algebraic solve."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


class NetworkStructureError(ValueError):
    """Invalid topology: unknown endpoints, zero impedance, or a bad island."""


class PowerFlowError(RuntimeError):
    def __init__(self, message: str, mismatch: float = math.nan, iterations: int = 0):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


class NetworkSolveError(RuntimeError):
    """Singular augmented admittance matrix during time stepping."""


BUS_KINDS = ("slack", "PV", "PQ")
BRANCH_KINDS = ("line", "transformer", "tcsc")


@dataclass
class Bus:
    id: int
    kind: str
    base_kv: float = 1.0
    P_spec: float = 0.0
    Q_spec: float = 0.0
    V_set: float = 1.0
    angle_set: float = 0.0  # degrees, slack only

    def __post_init__(self):
        if self.kind not in BUS_KINDS:
            raise NetworkStructureError(f"bus {self.id}: unknown kind {self.kind!r}")
        if self.kind != "PQ" and self.V_set <= 0:
            raise NetworkStructureError(f"bus {self.id}: V_set must be positive")


@dataclass
class Branch:
    name: str
    from_bus: int
    to_bus: int
    y_series: complex
    b_shunt_half: float = 0.0
    kind: str = "line"

    def __post_init__(self):
        if self.kind not in BRANCH_KINDS:
            raise NetworkStructureError(f"branch {self.name}: unknown kind {self.kind!r}")
        if self.y_series == 0 or not np.isfinite(self.y_series):
            raise NetworkStructureError(f"branch {self.name}: zero-impedance or open series element")

    def end_current(self, v_from: complex, v_to: complex, end_bus: int) -> complex:
        """Current leaving ``end_bus`` into the branch."""
        if end_bus == self.from_bus:
            return self.y_series * (v_from - v_to) + 1j * self.b_shunt_half * v_from
        if end_bus == self.to_bus:
            return self.y_series * (v_to - v_from) + 1j * self.b_shunt_half * v_to
        raise KeyError(f"bus {end_bus} is not an end of branch {self.name}")


@dataclass
class GeneratorData:
    name: str
    bus: int
    P: float  # pu, system base
    H: float  # s, system base
    D: float  # pu, system base
    xd_prime: float  # pu, system base


@dataclass
class LoadData:
    name: str
    bus: int
    P: float
    Q: float


@dataclass
class ShuntData:
    name: str
    bus: int
    B: float  # pu susceptance, capacitive > 0


@dataclass
class PowerFlowSolution:
    V: np.ndarray
    mismatch: float
    iterations: int
    S: np.ndarray = field(repr=False, default=None)  # net complex injection per bus


def _rows(table):
    header, *rows = table
    return [dict(zip(header, row)) for row in rows]


@dataclass
class Network:
    base_mva: float
    f_hz: float
    buses: list[Bus]
    branches: list[Branch]
    generators: list[GeneratorData] = field(default_factory=list)
    loads: list[LoadData] = field(default_factory=list)
    shunts: list[ShuntData] = field(default_factory=list)
    lossless: bool = True

    def __post_init__(self):
        self.index = {bus.id: k for k, bus in enumerate(self.buses)}
        if len(self.index) != len(self.buses):
            raise NetworkStructureError("duplicate bus ids")
        names = [br.name for br in self.branches]
        if len(set(names)) != len(names):
            raise NetworkStructureError("duplicate branch names")
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in self.index:
                    raise NetworkStructureError(f"branch {br.name}: unknown bus {end}")
        for item in (*self.generators, *self.loads, *self.shunts):
            if item.bus not in self.index:
                raise NetworkStructureError(f"{item.name}: unknown bus {item.bus}")

    @classmethod
    def from_dataset(cls, data: dict, lossless: bool = True) -> "Network":
        """Build from a tabular dataset dict (MW/Mvar, machine-base generator data)."""
        base = float(data["base_mva"])
        buses = [
            Bus(int(r["id"]), r["kind"], float(r.get("base_kv", 1.0)), V_set=float(r.get("V_set", 1.0)),
                angle_set=float(r.get("angle_set", 0.0)))
            for r in _rows(data["buses"])
        ]
        branches = []
        for r in _rows(data["branches"]):
            resistance = 0.0 if lossless else float(r["R"])
            branches.append(Branch(
                name=str(r["name"]), from_bus=int(r["from"]), to_bus=int(r["to"]),
                y_series=1.0 / complex(resistance, float(r["X"])),
                b_shunt_half=0.5 * float(r.get("B", 0.0)), kind=r.get("kind", "line"),
            ))
        generators = []
        for r in _rows(data.get("generators", [["name"]])):
            ratio = float(r["S_n"]) / base
            generators.append(GeneratorData(
                name=str(r["name"]), bus=int(r["bus"]), P=float(r["P"]) / base,
                H=float(r["H"]) * ratio, D=float(r["D"]) * ratio, xd_prime=float(r["X_d_t"]) / ratio,
            ))
        loads = [LoadData(str(r["name"]), int(r["bus"]), float(r["P"]) / base, float(r["Q"]) / base)
                 for r in _rows(data.get("loads", [["name"]]))]
        shunts = [ShuntData(str(r["name"]), int(r["bus"]), float(r["Q"]) / base)
                  for r in _rows(data.get("shunts", [["name"]]))]
        net = cls(base, float(data.get("f", 60.0)), buses, branches, generators, loads, shunts, lossless)
        net.refresh_injections()
        return net

    def refresh_injections(self, extra_q: dict[int, float] | None = None) -> None:
        """Recompute bus P/Q specifications from generators, loads and extra Q injections."""
        extra_q = extra_q or {}
        for bus in self.buses:
            bus.P_spec = sum(g.P for g in self.generators if g.bus == bus.id) \
                - sum(ld.P for ld in self.loads if ld.bus == bus.id)
            bus.Q_spec = -sum(ld.Q for ld in self.loads if ld.bus == bus.id) + extra_q.get(bus.id, 0.0)

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def branch(self, name: str) -> Branch:
        for br in self.branches:
            if br.name == name:
                return br
        raise KeyError(f"unknown branch {name!r}")

    def generator(self, name: str) -> GeneratorData:
        for gen in self.generators:
            if gen.name == name:
                return gen
        raise KeyError(f"unknown generator {name!r}")

    def with_tcsc(self, name: str, kc0: float, b0: float | None = None) -> "Network":
        """Copy in which branch ``name`` becomes a series compensator ``j(1 - kc0) b0``.

        The branch charging moves to bus shunts at both ends so that the
        compensator terminal current is the pure series current.
        """
        net = self.copy()
        k = [br.name for br in net.branches].index(name)
        old = net.branches[k]
        if b0 is None:
            if abs(old.y_series.real) > 1e-12:
                raise NetworkStructureError(f"branch {name}: series compensator needs a lossless branch")
            b0 = old.y_series.imag
        if old.b_shunt_half:
            net.shunts.append(ShuntData(f"{name}@{old.from_bus}", old.from_bus, old.b_shunt_half))
            net.shunts.append(ShuntData(f"{name}@{old.to_bus}", old.to_bus, old.b_shunt_half))
        net.branches[k] = replace(old, y_series=1j * (1.0 - kc0) * b0, b_shunt_half=0.0, kind="tcsc")
        return net

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def ybus(self) -> np.ndarray:
        y = build_ybus(self.branches, self.n_bus, self.index)
        for sh in self.shunts:
            y[self.index[sh.bus], self.index[sh.bus]] += 1j * sh.B
        return y

    def load_admittances(self, v: np.ndarray) -> np.ndarray:
        """Constant-admittance equivalent of every load at voltage ``v`` (per bus)."""
        y = np.zeros(self.n_bus, dtype=complex)
        for ld in self.loads:
            k = self.index[ld.bus]
            y[k] += complex(ld.P, -ld.Q) / abs(v[k]) ** 2
        return y


def build_ybus(branches: list[Branch], n_bus: int, index: dict[int, int] | None = None) -> np.ndarray:
    """Dense bus admittance matrix of a pi-model branch list."""
    index = index if index is not None else {k: k for k in range(n_bus)}
    y = np.zeros((n_bus, n_bus), dtype=complex)
    rows, cols = [], []
    for br in branches:
        if br.from_bus not in index or br.to_bus not in index:
            raise NetworkStructureError(f"branch {br.name}: endpoint outside the bus set")
        if br.y_series == 0:
            raise NetworkStructureError(f"branch {br.name}: zero-impedance branch")
        f, t = index[br.from_bus], index[br.to_bus]
        y[f, f] += br.y_series + 1j * br.b_shunt_half
        y[t, t] += br.y_series + 1j * br.b_shunt_half
        y[f, t] -= br.y_series
        y[t, f] -= br.y_series
        rows.append(f)
        cols.append(t)
    if n_bus > 1:
        graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_bus, n_bus))
        n_islands, labels = connected_components(graph, directed=False)
        if n_islands > 1:
            ids = {v: k for k, v in index.items()}
            islands = [sorted(ids[k] for k in np.flatnonzero(labels == lab)) for lab in range(n_islands)]
            raise NetworkStructureError(f"network splits into islands {islands}")
    return y


def _mismatch(v, y, p_spec, q_spec, pvpq, pq):
    s = v * np.conj(y @ v)
    return np.concatenate([p_spec[pvpq] - s.real[pvpq], q_spec[pq] - s.imag[pq]])


def solve_power_flow(
    network: Network,
    tol: float = 1e-10,
    max_iter: int = 50,
    v_start: np.ndarray | None = None,
) -> PowerFlowSolution:
    """Full Newton-Raphson power flow in polar coordinates."""
    y = network.ybus()
    kinds = np.array([b.kind for b in network.buses])
    slack = np.flatnonzero(kinds == "slack")
    if len(slack) != 1:
        raise NetworkStructureError(f"need exactly one slack bus, found {len(slack)}")
    pv = np.flatnonzero(kinds == "PV")
    pq = np.flatnonzero(kinds == "PQ")
    pvpq = np.concatenate([pv, pq])
    p_spec = np.array([b.P_spec for b in network.buses])
    q_spec = np.array([b.Q_spec for b in network.buses])

    if v_start is None:
        vm = np.array([b.V_set if b.kind != "PQ" else 1.0 for b in network.buses])
        va = np.full(network.n_bus, math.radians(network.buses[slack[0]].angle_set))
    else:
        vm, va = np.abs(v_start).astype(float), np.angle(v_start)
        for k in (*slack, *pv):
            vm[k] = network.buses[k].V_set
        va[slack] = math.radians(network.buses[slack[0]].angle_set)
    v = vm * np.exp(1j * va)

    n_pvpq = len(pvpq)
    for it in range(max_iter + 1):
        f = _mismatch(v, y, p_spec, q_spec, pvpq, pq)
        mis = float(np.max(np.abs(f))) if f.size else 0.0
        if mis <= tol:
            return PowerFlowSolution(v, mis, it, v * np.conj(y @ v))
        if it == max_iter:
            break
        i_bus = y @ v
        v_norm = v / np.abs(v)
        ds_dvm = np.diag(v) @ np.conj(y @ np.diag(v_norm)) + np.diag(np.conj(i_bus) * v_norm)
        ds_dva = 1j * np.diag(v) @ np.conj(np.diag(i_bus) - y @ np.diag(v))
        jac = np.block([
            [ds_dva.real[np.ix_(pvpq, pvpq)], ds_dvm.real[np.ix_(pvpq, pq)]],
            [ds_dva.imag[np.ix_(pq, pvpq)], ds_dvm.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(jac, f)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular Jacobian at iteration {it}", mis, it) from exc
        va[pvpq] += dx[:n_pvpq]
        vm[pq] += dx[n_pvpq:]
        v = vm * np.exp(1j * va)
    raise PowerFlowError(f"power flow did not converge in {max_iter} iterations "
                         f"(final mismatch {mis:.3e} pu)", mis, max_iter)


def network_solve(
    internal_emfs: np.ndarray,
    device_injections: np.ndarray,
    ybus_aug: np.ndarray,
    gen_rows: np.ndarray,
    xd_prime: np.ndarray,
    t: float | None = None,
) -> np.ndarray:
    """Bus voltages from generator EMFs behind ``xd_prime`` plus device current injections.

    ``ybus_aug`` must already contain the generator internal admittances and
    the constant-admittance loads.
    """
    injections = np.array(device_injections, dtype=complex, copy=True)
    np.add.at(injections, np.asarray(gen_rows), np.asarray(internal_emfs) / (1j * np.asarray(xd_prime)))
    try:
        return np.linalg.solve(ybus_aug, injections)
    except np.linalg.LinAlgError as exc:
        when = "" if t is None else f" at t = {t:.6f} s"
        raise NetworkSolveError(f"singular augmented admittance matrix{when}") from exc
