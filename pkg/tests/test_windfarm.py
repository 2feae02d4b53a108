import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from freqcoord import windfarm as wf

P = wf.DFIG_PRESETS["standard"]


def test_mppt_calibration_matches_oracle(oracle):
    o = oracle["mppt"]
    assert wf.C_CAL == pytest.approx(o["c_cal"], rel=1e-14)
    assert wf.K_OPT == pytest.approx(o["k_opt"], rel=1e-14)
    assert wf.mppt_speed(11.0, P) == pytest.approx(o["omega_r_11"], rel=1e-14)
    assert wf.available_power(11.0, P) == pytest.approx(o["p_11"], rel=1e-12)
    assert wf.available_power(11.0, P) * P.farm_mva == pytest.approx(14.0, rel=1e-12)


@given(st.floats(6.0, 12.0), st.floats(0.6, 1.3))
def test_aero_peaks_on_the_mppt_curve(v, w):
    assert wf.aero_power(v, w, P) <= wf.available_power(v, P) + 1e-12
    w_opt = wf.mppt_speed(v, P)
    # the reference follows the available power up to the 1 pu converter rating
    expected = min(wf.available_power(v, P), 1.0)
    assert wf.mppt_reference(w_opt, P.k_opt) == pytest.approx(expected, rel=1e-12)


def test_aero_zero_wind_and_negative():
    assert wf.aero_power(0.0, 1.0, P) == 0.0
    with pytest.raises(ValueError):
        wf.aero_power(-1.0, 1.0, P)


def test_init_equilibrium():
    v = 1.0169 * np.exp(0.043j)
    s = complex(wf.available_power(11.0, P), 0.0)
    st0 = wf.dfig_init(s, v, 11.0, P)
    assert st0.omega_r == pytest.approx(1.1, rel=1e-12)
    dx, i_s, info = wf.dfig_derivatives(st0, v, wf.mppt_reference(st0.omega_r, P.k_opt), 0.0, P, 11.0)
    assert np.max(np.abs(dx)) < 1e-10
    assert v * np.conj(i_s) == pytest.approx(s, abs=1e-12)
    assert not info["saturated"]


def test_init_rejects_impossible_injection():
    with pytest.raises(wf.DfigInitError):
        wf.dfig_init(complex(0.9, 0), 1.0, 11.0, P)
    with pytest.raises(wf.DfigInitError):
        wf.dfig_init(complex(0.5, 0), 1.0, 11.0, P)
    with pytest.raises(wf.DfigInitError):
        wf.dfig_init(complex(-0.1, 0), 1.0, 11.0, P)


def test_zero_wind_zero_injection_rests():
    st0 = wf.dfig_init(0j, 1.0, 0.0, P)
    assert st0.omega_r == 1.0 and st0.pi_states == (0.0, 0.0, 0.0, 0.0)


def test_extra_power_command_decelerates_rotor():
    v = 1.0 + 0j
    s = complex(wf.available_power(11.0, P), 0.0)
    st0 = wf.dfig_init(s, v, 11.0, P)
    x = st0.vector()
    dt = 1e-4
    p_extra = 0.1
    for _ in range(5000):
        s_ = wf.DfigState(x[0], x[1], x[2], tuple(x[3:7]))
        dx, _, info = wf.dfig_derivatives(s_, v, wf.mppt_reference(x[0], P.k_opt) + p_extra, 0.0, P, 11.0)
        x = x + dt * dx
    assert x[0] < st0.omega_r
    assert info["P"] > s.real


def test_washout_step_matches_analytic_oracle(oracle):
    prm = wf.WashoutParams(K_w=10.0, T_w=5.0)
    dt = 1e-3
    state = wf.WashoutState()
    dp, state = wf.washout_delta_p(60.0, state, prm, dt)
    assert dp == 0.0
    t, out = 0.0, {}
    targets = {float(k): v for k, v in oracle["washout_step"].items()}
    while t < 5.0 - 1e-12:
        dp, state = wf.washout_delta_p(59.9, state, prm, dt)
        out[round(t, 6)] = dp
        t += dt
    for tk, ref in targets.items():
        got = out.get(round(tk, 6))
        if got is None:
            continue
        # the first sample sees a half-step of the low-pass, so compare with a dt-sized lag allowance
        assert got == pytest.approx(ref, rel=5e-4)
    assert out[0.0] > 0


def test_washout_converges_to_second_order():
    prm = wf.WashoutParams(K_w=10.0, T_w=5.0)
    exact = 10.0 * (0.1 / 60) * math.exp(-2.0 / 5.0)

    def run(dt):
        st_ = wf.WashoutState(0.0, -0.1 / 60)
        for _ in range(int(round(2.0 / dt))):
            dp, st_ = wf.washout_delta_p(59.9, st_, prm, dt)
        return dp

    e1, e2 = abs(run(0.02) - exact), abs(run(0.01) - exact)
    assert 3.5 < e1 / e2 < 4.5


@given(st.lists(st.floats(59.0, 61.0), min_size=1, max_size=50))
def test_washout_zero_dc_gain(seq):
    prm = wf.WashoutParams()
    state = wf.WashoutState()
    for f in seq:
        _, state = wf.washout_delta_p(f, state, prm, 0.01)
    for _ in range(20000):
        dp, state = wf.washout_delta_p(60.0, state, prm, 0.01)
    assert abs(dp) < 1e-6


@given(st.lists(st.floats(59.0, 61.0), min_size=1, max_size=30))
def test_infinite_deadband_blocks_everything(seq):
    prm = wf.WashoutParams(deadband=math.inf)
    state = wf.WashoutState()
    for f in seq:
        dp, state = wf.washout_delta_p(f, state, prm, 0.01)
        assert dp == 0.0


def test_under_frequency_gives_positive_support():
    dp, _ = wf.washout_delta_p(59.9, wf.WashoutState(), wf.WashoutParams(), 0.01)
    assert dp > 0
    dp, _ = wf.washout_delta_p(60.1, wf.WashoutState(), wf.WashoutParams(), 0.01)
    assert dp < 0


def test_parameter_validation():
    with pytest.raises(ValueError):
        wf.WashoutParams(T_w=0)
    with pytest.raises(ValueError):
        wf.WashoutParams(K_w=-1)
    with pytest.raises(ValueError):
        wf.WashoutParams(source="rotor")
    with pytest.raises(ValueError):
        wf.DfigParams(H_D=0)
