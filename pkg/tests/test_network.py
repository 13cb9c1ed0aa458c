import math

import numpy as np
import pytest

from facts_def.datasets import load_dataset
from facts_def.network import (
    Branch,
    Bus,
    GeneratorData,
    Network,
    NetworkSolveError,
    NetworkStructureError,
    PowerFlowError,
    build_ybus,
    network_solve,
    solve_power_flow,
)


def two_bus(p=0.5, x=0.5):
    buses = [Bus(1, "slack", V_set=1.0), Bus(2, "PV", V_set=1.0, P_spec=-p)]
    return Network(100.0, 60.0, buses, [Branch("L", 1, 2, 1 / (1j * x))])


def test_single_line_ybus():
    y = build_ybus([Branch("L", 0, 1, -5j)], 2)
    assert np.array_equal(y, np.array([[-5j, 5j], [5j, -5j]]))


def test_tcsc_branch_admittance(kundur):
    b0 = kundur.branch("L8-9b").y_series.imag
    net = kundur.with_tcsc("L8-9b", 0.3)
    br = net.branch("L8-9b")
    assert br.kind == "tcsc"
    assert br.y_series == pytest.approx(1j * 0.7 * b0)
    assert br.b_shunt_half == 0.0
    # charging moved to bus shunts, so the matrix differs only by the series change
    diff = net.ybus() - kundur.ybus()
    dy = 1j * 0.7 * b0 - 1j * b0
    k8, k9 = kundur.index[8], kundur.index[9]
    assert diff[k8, k9] == pytest.approx(-dy)
    assert diff[k8, k8] == pytest.approx(dy)


def test_uncompensated_tcsc_equals_plain_line():
    plain = [Branch("a", 0, 1, -10j), Branch("b", 0, 1, -10j)]
    tcsc = [Branch("a", 0, 1, -10j), Branch("b", 0, 1, 1j * (1 - 0.0) * -10, kind="tcsc")]
    assert np.array_equal(build_ybus(plain, 2), build_ybus(tcsc, 2))


def test_ybus_row_sums_equal_shunts(kundur):
    y = kundur.ybus()
    assert np.allclose(y, y.T)
    shunt = np.zeros(kundur.n_bus)
    for br in kundur.branches:
        shunt[kundur.index[br.from_bus]] += br.b_shunt_half
        shunt[kundur.index[br.to_bus]] += br.b_shunt_half
    for sh in kundur.shunts:
        shunt[kundur.index[sh.bus]] += sh.B
    assert np.allclose(y.sum(axis=1), 1j * shunt, atol=1e-9)


def test_island_is_named():
    branches = [Branch("a", 0, 1, -5j), Branch("b", 2, 3, -5j)]
    with pytest.raises(NetworkStructureError, match=r"\[\[0, 1\], \[2, 3\]\]"):
        build_ybus(branches, 4)


def test_structural_errors():
    with pytest.raises(NetworkStructureError):
        Branch("z", 0, 1, 0j)
    with pytest.raises(NetworkStructureError):
        Bus(1, "PV", V_set=0.0)
    with pytest.raises(NetworkStructureError):
        Network(100.0, 60.0, [Bus(1, "slack")], [Branch("L", 1, 2, -5j)])


def test_lossless_flag_zeroes_resistance(kundur):
    assert all(br.y_series.real == 0 for br in kundur.branches)
    lossy = Network.from_dataset(load_dataset("kundur"), lossless=False)
    assert any(br.y_series.real != 0 for br in lossy.branches)


def test_slack_only_needs_no_iterations():
    net = Network(100.0, 60.0, [Bus(1, "slack", V_set=1.02)], [])
    sol = solve_power_flow(net)
    assert sol.iterations == 0
    assert sol.V[0] == pytest.approx(1.02)


def test_two_bus_transfer_angle():
    sol = solve_power_flow(two_bus())
    delta = math.degrees(np.angle(sol.V[0]) - np.angle(sol.V[1]))
    assert delta == pytest.approx(math.degrees(math.asin(0.25)), abs=1e-8)
    assert delta == pytest.approx(14.4775, abs=1e-4)
    assert np.abs(sol.V) == pytest.approx([1.0, 1.0])


def test_kundur_power_flow(kundur):
    sol = solve_power_flow(kundur)
    assert sol.mismatch <= 1e-8
    for bus in kundur.buses:
        if bus.kind != "PQ":
            assert abs(sol.V[kundur.index[bus.id]]) == pytest.approx(bus.V_set, abs=1e-12)
    assert np.all(np.abs(sol.V) > 0.9)


def test_power_flow_nonconvergence_reports_mismatch():
    # transfer beyond the static limit V^2/x = 2 has no solution
    with pytest.raises(PowerFlowError) as err:
        solve_power_flow(two_bus(p=3.0))
    assert err.value.mismatch > 1e-8
    assert "mismatch" in str(err.value)


def _thevenin_system():
    # generator (xd' = 0.2) behind bus 1, line x = 0.3 to bus 2
    y = build_ybus([Branch("L", 0, 1, 1 / 0.3j)], 2)
    y[0, 0] += 1 / 0.2j
    return y


def test_network_solve_zero_inputs():
    y = _thevenin_system()
    v = network_solve(np.zeros(1), np.zeros(2), y, np.array([0]), np.array([0.2]))
    assert np.all(v == 0)


def test_network_solve_thevenin_response():
    y = _thevenin_system()
    emf = np.array([1.0 + 0j])
    base = network_solve(emf, np.zeros(2), y, np.array([0]), np.array([0.2]))
    assert base == pytest.approx([1.0, 1.0])
    v = network_solve(emf, np.array([0, 0.1j]), y, np.array([0]), np.array([0.2]))
    # Thevenin impedance j0.5 at bus 2, j0.2 at bus 1
    assert v - base == pytest.approx([-0.02, -0.05])
    residual = y @ v - np.array([emf[0] / 0.2j, 0.1j])
    assert np.max(np.abs(residual)) <= 1e-10


def test_network_solve_singular_names_time():
    y = np.zeros((2, 2), dtype=complex)
    with pytest.raises(NetworkSolveError, match="t = 1.250000"):
        network_solve(np.zeros(0), np.zeros(2), y, np.zeros(0, dtype=int), np.zeros(0), t=1.25)


def test_network_solve_reproduces_power_flow(kundur):
    sol = solve_power_flow(kundur)
    y = kundur.ybus() + np.diag(kundur.load_admittances(sol.V))
    rows = np.array([kundur.index[g.bus] for g in kundur.generators])
    xd = np.array([g.xd_prime for g in kundur.generators])
    i_gen = np.conj(sol.S[rows] / sol.V[rows])
    emf = sol.V[rows] + 1j * xd * i_gen
    for k, g in zip(rows, xd):
        y[k, k] += 1 / (1j * g)
    v = network_solve(emf, np.zeros(kundur.n_bus), y, rows, xd)
    assert np.max(np.abs(v - sol.V)) <= 1e-8


def test_ybus_restored_bit_identical(kundur):
    net = kundur.with_tcsc("L8-9b", 0.3)
    before = net.ybus()
    br = net.branch("L8-9b")
    original = br.y_series
    br.y_series = 1j * (1 - 0.3 - 0.05) * original.imag / 0.7
    assert not np.array_equal(net.ybus(), before)
    br.y_series = original
    assert np.array_equal(net.ybus(), before)


def test_generator_data_from_machine_base(kundur):
    g1 = kundur.generator("G1")
    assert isinstance(g1, GeneratorData)
    assert g1.P == pytest.approx(7.0)
    assert g1.H == pytest.approx(58.5)
    assert g1.xd_prime == pytest.approx(0.3 / 9)
