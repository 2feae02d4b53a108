import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from freqcoord import machines as mc

SG = mc.SgParams(H=6.4, Xd=0.8958, Xq=0.8645, Xd_t=0.1198, Tdo_t=6.0)
EXC = mc.EXCITER_PRESETS["standard"]
GOV = mc.GOVERNOR_PRESETS["standard"]


def _equilibrium(s=complex(1.63, 0.066), v=1.025 * np.exp(0.16j)):
    return mc.sg_init_from_powerflow(v, s, SG, EXC, GOV), v


def test_init_gives_zero_derivatives():
    (sg, exc, gov, vref, pc), v = _equilibrium()
    e = replace(EXC, Vref=vref)
    g = replace(GOV, PC=pc)
    Id, Iq = mc.stator_currents(sg, v, SG)
    dx = mc.sg_derivatives(sg, exc, gov, mc.SgInputs(Id, Iq, abs(v)), SG, e, g)
    assert np.max(np.abs(dx)) < 1e-12


def test_terminal_power_matches_injection():
    s = complex(1.2, 0.3)
    (sg, exc, gov, vref, pc), v = _equilibrium(s)
    Id, Iq = mc.stator_currents(sg, v, SG)
    i = mc.terminal_current(sg.delta, Id, Iq)
    assert abs(v * np.conj(i) - s) < 1e-12
    assert pc == pytest.approx(s.real, abs=1e-12)


def test_swing_sign_and_hand_formula():
    (sg, exc, gov, vref, pc), v = _equilibrium()
    e = replace(EXC, Vref=vref)
    g = replace(GOV, PC=pc)
    Id, Iq = mc.stator_currents(sg, v, SG)
    # extra electrical load decelerates the rotor
    dx = mc.sg_derivatives(sg, exc, gov, mc.SgInputs(Id, Iq * 1.1, abs(v)), SG, e, g)
    te = sg.eq_t * Iq * 1.1 + (SG.Xq - SG.Xd_t) * Id * Iq * 1.1
    assert dx[1] == pytest.approx((gov.tm - te) * SG.omega_s / (2 * SG.H), rel=1e-12)
    assert dx[1] < 0


def test_governor_responds_to_underspeed_and_uc():
    (sg, exc, gov, vref, pc), v = _equilibrium()
    g = replace(GOV, PC=pc)
    e = replace(EXC, Vref=vref)
    Id, Iq = mc.stator_currents(sg, v, SG)
    slow = replace(sg, omega=sg.omega - 0.1)
    dx = mc.sg_derivatives(slow, exc, gov, mc.SgInputs(Id, Iq, abs(v)), SG, e, g)
    assert dx[6] == pytest.approx(GOV.K1 * (-0.1 / SG.omega_s) / GOV.T1, rel=1e-12)
    # a negative speed-reference offset is equivalent to underspeed
    dx_uc = mc.sg_derivatives(sg, exc, gov, mc.SgInputs(Id, Iq, abs(v), u_c=-0.1), SG, e, g)
    assert dx_uc[6] == pytest.approx(dx[6], rel=1e-12)


@given(st.floats(-5, 5), st.floats(0, 3), st.floats(0, 3), st.floats(0, 3))
def test_limiter_keeps_torque_demand_in_range(y2, pc, pmin, span):
    pmax = pmin + span
    y = mc.governor_limiter(y2, pc, pmin, pmax)
    assert pmin - 1e-12 <= pc - y <= pmax + 1e-12
    if pmin <= pc - y2 <= pmax:
        assert y == y2


def test_exciter_saturation_formula():
    assert mc.exciter_saturation(1.5, 0.0039, 1.555) == pytest.approx(0.0039 * math.exp(1.555 * 1.5))


def test_published_exciter_cannot_hold_equilibrium():
    with pytest.raises(mc.MachineInitError):
        mc.sg_init_from_powerflow(1.025, complex(1.63, 0.07), SG, mc.EXCITER_PRESETS["paper"], GOV)


def test_dispatch_outside_limits():
    with pytest.raises(mc.MachineInitError):
        mc.sg_init_from_powerflow(1.0, complex(1.5, 0.0), SG, EXC, replace(GOV, Pmax=1.0))


def test_parameter_validation():
    with pytest.raises(ValueError):
        mc.SgParams(H=0, Xd=1, Xq=1, Xd_t=0.2, Tdo_t=5)
    with pytest.raises(ValueError):
        mc.SgParams(H=3, Xd=0.1, Xq=1, Xd_t=0.2, Tdo_t=5)
    with pytest.raises(ValueError):
        mc.GovernorParams(T1=0, T2=0, T3=1, T4=1, K1=1)
    with pytest.raises(KeyError):
        mc.preset_name("nope")
    assert mc.preset_name("paper-appendix") == "paper"


@given(st.floats(-math.pi, math.pi), st.floats(0.5, 1.5), st.floats(0.8, 1.2), st.floats(-0.5, 0.5))
def test_stator_algebraics_satisfy_dq_equations(delta, eq, vm, va):
    sg = mc.SgState(delta, SG.omega_s, eq)
    v = vm * np.exp(1j * va)
    Id, Iq = mc.stator_currents(sg, v, SG)
    vdq = v * np.exp(-1j * (delta - math.pi / 2))
    # vq = E'q - Xd' Id ; vd = Xq Iq
    assert vdq.imag == pytest.approx(eq - SG.Xd_t * Id, abs=1e-12)
    assert vdq.real == pytest.approx(SG.Xq * Iq, abs=1e-12)
