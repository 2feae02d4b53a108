import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from freqcoord import netmodel as nm


def test_wscc_base_case_matches_gauss_seidel_oracle(case, oracle):
    net = case.network
    pf = nm.solve_power_flow(net, tolerance=1e-12)
    assert np.allclose(np.abs(pf.voltage), oracle["wscc_base_vm"], atol=1e-9)
    assert np.allclose(np.angle(pf.voltage), oracle["wscc_base_va"], atol=1e-9)


def test_wscc_published_values(case):
    # textbook solution of the 9-bus case
    pf = nm.solve_power_flow(case.network)
    vm = {4: 1.0258, 5: 0.9956, 6: 1.0127, 7: 1.0258, 8: 1.0159, 9: 1.0324}
    va = {2: 9.2800, 3: 4.6648, 4: -2.2168, 5: -3.9888, 6: -3.6874, 7: 3.7197, 8: 0.7275, 9: 1.9667}
    for b, v in vm.items():
        assert abs(abs(pf.at(b)[0]) - v) < 1e-4
    for b, a in va.items():
        assert abs(math.degrees(np.angle(pf.at(b)[0])) - a) < 1e-4
    slack = pf.at(1)[1]
    assert abs(slack.real - 0.7164) < 1e-4 and abs(slack.imag - 0.2705) < 1e-4


def test_with_wind_matches_oracle(grid, oracle):
    assert np.allclose(np.abs(grid.pf.voltage), oracle["wscc_wind_vm"], atol=1e-9)
    assert np.allclose(np.angle(grid.pf.voltage), oracle["wscc_wind_va"], atol=1e-9)
    assert grid.pf.iterations <= 10 and grid.pf.max_mismatch < 1e-8


def test_mismatch_oracle(grid):
    net = grid.network
    Y = nm.build_ybus(net.buses, net.branches)
    s = grid.pf.voltage * np.conj(Y @ grid.pf.voltage)
    for b, si in zip(net.buses, s):
        if b.kind == "pq":
            assert abs(si - complex(b.p_gen_setpoint - b.p_load, b.q_gen - b.q_load)) < 1e-10
        if b.kind == "pv":
            assert abs(si.real - (b.p_gen_setpoint - b.p_load)) < 1e-10


def test_two_bus_closed_form():
    # lossless line, slack 1.0 pu, load P at the far end with unity pf
    x, p = 0.2, 0.5
    net = nm.Network((nm.Bus(1, "slack", 1.0), nm.Bus(2, "pq", p_load=p)), (nm.Branch(1, 2, complex(0, x)),))
    pf = nm.solve_power_flow(net)
    v2 = pf.at(2)[0]
    # P = V1 V2 sin(d)/x, Q balance: V2^2 = V1 V2 cos(d)
    assert abs(abs(v2) * math.sin(-np.angle(v2)) / x - p) < 1e-9
    assert abs(abs(v2) ** 2 - abs(v2) * math.cos(np.angle(v2))) < 1e-9


def test_already_converged_takes_zero_iterations():
    net = nm.Network((nm.Bus(1, "slack", 1.0), nm.Bus(2, "pq")), (nm.Branch(1, 2, complex(0.01, 0.1)),))
    assert nm.solve_power_flow(net).iterations == 0


def test_nonconvergence_raises():
    net = nm.Network((nm.Bus(1, "slack", 1.0), nm.Bus(2, "pq", p_load=50.0)), (nm.Branch(1, 2, complex(0, 0.5)),))
    with pytest.raises(nm.PowerFlowError):
        nm.solve_power_flow(net)


def test_ybus_tap_and_symmetry(case):
    net = case.network
    Y = nm.build_ybus(net.buses, net.branches)
    assert np.allclose(Y, Y.T)
    br = (nm.Branch(1, 2, complex(0, 0.1), 0.0, 1.05),)
    Y2 = nm.build_ybus((nm.Bus(1, "slack"), nm.Bus(2, "pq")), br)
    y = 1 / complex(0, 0.1)
    assert np.allclose(Y2, [[y / 1.05**2, -y / 1.05], [-y / 1.05, y]])


@given(st.floats(0.1, 2.0), st.floats(-1.0, 1.0), st.floats(0.8, 1.2))
def test_load_admittance_draws_its_power(p, q, vm):
    y = nm.load_to_admittance(p, q, vm * np.exp(0.3j))
    s = vm**2 * np.conj(y)
    assert abs(s - complex(p, q)) < 1e-12


def test_network_validation():
    with pytest.raises(nm.NetworkError):
        nm.Network((nm.Bus(1, "pq"), nm.Bus(2, "pq")), ())
    with pytest.raises(nm.NetworkError):
        nm.Branch(1, 1, complex(0, 0.1))
    with pytest.raises(nm.NetworkError):
        nm.Bus(1, "load")


def test_events(grid):
    ns = grid.net_state
    y8 = ns.load_at(8)
    ns2 = nm.apply_event(ns, nm.LoadStep(8, 0.1, 1.0))
    assert ns2.load_at(8) == pytest.approx(1.1 * y8, rel=1e-15)
    assert ns.load_at(8) == y8
    ns3 = nm.apply_event(ns, nm.GeneratorTrip(2, 0.0))
    assert ns3.online == (True, True, False)
    with pytest.raises(nm.NetworkError):
        nm.apply_event(ns, nm.LoadStep(42, 0.1))


def test_case_parse_errors_name_the_line():
    text = "base_mva = 100\n[bus]\n1 slack 1.0 0 0 0 0 0\n[brnch]\n"
    with pytest.raises(nm.CaseFileError, match="line 4"):
        nm.parse_case(text)
    with pytest.raises(nm.CaseFileError, match="line 3"):
        nm.parse_case("[bus]\n# comment\n1 slack one 0 0 0 0 0\n")
    with pytest.raises(nm.CaseFileError, match="line 2"):
        nm.parse_case("[branch]\n1 2 0.0 0.1\n")


def test_case_file_round_trip(case):
    assert len(case.network.buses) == 9 and len(case.network.branches) == 9
    assert [g["bus"] for g in case.generators] == [1, 2, 3]
    assert case.windfarm["bus"] == 8
