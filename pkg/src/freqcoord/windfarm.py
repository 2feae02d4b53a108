"""Reduced-order DFIG wind turbine: MPPT tracking, PI power/current cascade,
two-axis rotor-flux dynamics and the washout inertial-support loop.

Per-unit on the turbine base; rotor speed ``omega_r`` in pu of synchronous
speed. Complex quantities (internal voltage, stator current, bus voltage) are
expressed in the synchronously rotating network frame. The farm is an
aggregate of ``n_turbines`` identical machines.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

OMEGA_B = 2.0 * math.pi * 60.0

# operating point the aerodynamic model is calibrated to: 5 x 3.6 MVA at 11 m/s -> 14 MW
V_RATED = 12.0
OMEGA_RATED = 1.2
P_CAL_PU = 14.0 / (5 * 3.6)
C_CAL = P_CAL_PU / (11.0 / V_RATED) ** 3
K_OPT = C_CAL / OMEGA_RATED**3

STATE_NAMES = ("omega_r", "ed_t", "eq_t", "pi_p", "pi_q", "pi_id", "pi_iq")
N_STATES = len(STATE_NAMES)

(D_HD, D_XM, D_XS, D_XR, D_RS, D_RR, D_KP1, D_KP2, D_KP3, D_KP4, D_KI1, D_KI2, D_KI3, D_KI4,
 D_WB, D_KOPT, D_VRMAX, D_CCAL, D_VRATED, D_WRATED, D_VWIND) = range(21)
N_PARAMS = 21


class DfigInitError(ValueError):
    """Requested injection cannot be held at equilibrium."""


@dataclass(frozen=True)
class DfigParams:
    H_D: float = 1.23
    Xm: float = 3.27
    Xs: float = 3.37
    Xr: float = 3.47
    Rs: float = 0.005
    Rr: float = 0.0055
    K_P: float = 0.398
    K_I: float = 0.066
    K_P1: float = 1.0
    K_P2: float = 1.0
    K_P3: float = 1.0
    K_P4: float = 1.0
    K_I1: float = 5.0
    K_I2: float = 5.0
    K_I3: float = 5.0
    K_I4: float = 5.0
    n_turbines: int = 5
    mva_base: float = 3.6
    k_opt: float = K_OPT
    c_cal: float = C_CAL
    v_rated: float = V_RATED
    omega_rated: float = OMEGA_RATED
    Qref: float = 0.0
    vr_max: float = 1.0
    omega_b: float = OMEGA_B

    def __post_init__(self):
        if not self.H_D > 0:
            raise ValueError("H_D must be positive")
        if not (self.Xm > 0 and self.Xs > 0 and self.Xr > 0):
            raise ValueError("reactances must be positive")
        if self.n_turbines < 1:
            raise ValueError("need at least one turbine")

    @property
    def x_transient(self) -> float:
        return self.Xs - self.Xm**2 / self.Xr

    @property
    def t_open(self) -> float:
        return self.Xr / (self.omega_b * self.Rr)

    @property
    def farm_mva(self) -> float:
        return self.n_turbines * self.mva_base

    def packed(self, v_wind: float) -> np.ndarray:
        return np.array([self.H_D, self.Xm, self.Xs, self.Xr, self.Rs, self.Rr,
                         self.K_P1, self.K_P2, self.K_P3, self.K_P4, self.K_I1, self.K_I2, self.K_I3, self.K_I4,
                         self.omega_b, self.k_opt, self.vr_max, self.c_cal, self.v_rated, self.omega_rated,
                         v_wind], dtype=float)


# the published parameter list gives Xm = 0.007, which leaves the rotor almost uncoupled from
# the stator (power loop gain ~0.002); kept for transparency only.
DFIG_PRESETS = {
    "standard": DfigParams(),
    "paper": DfigParams(Xm=0.007),
}


@dataclass(frozen=True)
class WashoutParams:
    K_w: float = 10.0
    T_w: float = 5.0
    deadband: float = 0.0
    f_nominal: float = 60.0
    tau_meas: float = 0.02
    source: str = "bus"

    def __post_init__(self):
        if not self.T_w > 0:
            raise ValueError("T_w must be positive")
        if self.K_w < 0:
            raise ValueError("K_w must be non-negative")
        if self.source not in ("bus", "coi"):
            raise ValueError("source must be 'bus' or 'coi'")


@dataclass(frozen=True)
class WashoutState:
    x: float = 0.0
    u_prev: float = 0.0


@dataclass(frozen=True)
class DfigState:
    omega_r: float
    ed_t: float
    eq_t: float
    pi_states: tuple[float, float, float, float]
    washout_state: float = 0.0
    meas_state: float = 0.0

    def vector(self) -> np.ndarray:
        return np.array([self.omega_r, self.ed_t, self.eq_t, *self.pi_states])


# ----------------------------------------------------------------------------
# kernels


@njit(cache=True)
def mppt_reference(omega_r, k_opt):
    p = k_opt * omega_r**3
    return min(max(p, 0.0), 1.0)


@njit(cache=True)
def cp_norm(x):
    """Normalised power coefficient vs normalised tip-speed ratio, peak 1 at x = 1."""
    if x <= 0.0 or x >= math.sqrt(3.0):
        return 0.0
    return 0.5 * (3.0 * x - x**3)


@njit(cache=True)
def _aero(v_wind, omega_r, c_cal, v_rated, omega_rated):
    if v_wind <= 0.0:
        return 0.0
    vr = v_wind / v_rated
    return c_cal * vr**3 * cp_norm((omega_r / omega_rated) / vr)


@njit(cache=True)
def deadband_input(df_pu, deadband_hz, f_nominal):
    if abs(df_pu) * f_nominal < deadband_hz:
        return 0.0
    return df_pu


@njit(cache=True)
def _dfig_core(x, v, p_cmd, q_cmd, p, out):
    """Derivatives of the 7 core states; returns (stator current, P, Q, saturated)."""
    omega_r = x[0]
    e = complex(x[1], x[2])
    xm, xs, xr, wb = p[D_XM], p[D_XS], p[D_XR], p[D_WB]
    xt = xs - xm * xm / xr
    t_open = xr / (wb * p[D_RR])
    g = wb * xm / xr
    i_s = (e - v) / complex(p[D_RS], xt)
    s_out = v * i_s.conjugate()
    pe, qe = s_out.real, s_out.imag

    vmag = abs(v)
    rot = v.conjugate() / vmag
    i_r = (-1j * e / xm + (xm / xr) * i_s) * rot

    e_p = p_cmd - pe
    e_q = q_cmd - qe
    ird_ref = p[D_KP1] * e_p + x[3]
    irq_ref = -(p[D_KP2] * e_q + x[4])
    e_d = ird_ref - i_r.real
    e_qi = irq_ref - i_r.imag
    v_pi = complex(p[D_KP3] * e_d + x[5], p[D_KP4] * e_qi + x[6]) * rot.conjugate()
    slip = 1.0 - omega_r
    v_r = v_pi + slip * (xr / xm) * e
    sat = 0.0
    vr_abs = abs(v_r)
    if vr_abs > p[D_VRMAX]:
        v_r *= p[D_VRMAX] / vr_abs
        sat = 1.0

    de = -(e + 1j * (xs - xt) * i_s) / t_open - 1j * slip * wb * e + 1j * g * v_r
    p_aero = _aero(p[D_VWIND], omega_r, p[D_CCAL], p[D_VRATED], p[D_WRATED])
    out[0] = (p_aero - pe) / omega_r / (2.0 * p[D_HD])
    out[1] = de.real
    out[2] = de.imag
    out[3] = p[D_KI1] * e_p
    out[4] = p[D_KI2] * e_q
    out[5] = p[D_KI3] * e_d
    out[6] = p[D_KI4] * e_qi
    return i_s, pe, qe, sat


# ----------------------------------------------------------------------------
# public API


def aero_power(v_wind: float, omega_r: float, params: DfigParams) -> float:
    """Mechanical power per turbine (pu), cubic in wind speed, peaking on the MPPT speed."""
    if v_wind < 0:
        raise ValueError("negative wind speed")
    return _aero(float(v_wind), float(omega_r), params.c_cal, params.v_rated, params.omega_rated)


def mppt_speed(v_wind: float, params: DfigParams) -> float:
    """Rotor speed at the optimal tip-speed ratio."""
    return params.omega_rated * v_wind / params.v_rated


def available_power(v_wind: float, params: DfigParams) -> float:
    return aero_power(v_wind, mppt_speed(v_wind, params), params)


def washout_delta_p(f_input_hz: float, state: WashoutState, params: WashoutParams, dt: float):
    """One trapezoidal step of ``dP = -K_w * T_w s / (1 + T_w s)`` on the pu frequency error.

    ``state`` holds the low-pass internal value and the previous (deadbanded)
    input sample. Under-frequency gives a positive ``dP`` (extra injection).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = deadband_input((f_input_hz - params.f_nominal) / params.f_nominal, params.deadband, params.f_nominal)
    a = dt / (2.0 * params.T_w)
    x = (state.x * (1.0 - a) + a * (state.u_prev + u)) / (1.0 + a)
    return -params.K_w * (u - x), WashoutState(x, u)


def dfig_derivatives(state: DfigState, bus_voltage: complex, p_cmd: float, q_cmd: float,
                     params: DfigParams, v_wind: float):
    """Core derivative vector and stator current injection (turbine base).

    Returns ``(dx, i_stator, info)`` with ``info`` holding the stator ``P``, ``Q``
    and a ``saturated`` flag for the rotor-voltage ceiling.
    """
    if abs(bus_voltage) == 0:
        raise ValueError("zero bus voltage")
    out = np.empty(N_STATES)
    i_s, pe, qe, sat = _dfig_core(state.vector(), complex(bus_voltage), float(p_cmd), float(q_cmd),
                                  params.packed(v_wind), out)
    return out, i_s, {"P": pe, "Q": qe, "saturated": bool(sat)}


def dfig_init(pf_injection: complex, v_bus: complex, v_wind: float, params: DfigParams) -> DfigState:
    """Equilibrium states for a turbine injecting ``pf_injection`` (turbine base) at ``v_bus``."""
    s = complex(pf_injection)
    v = complex(v_bus)
    if abs(v) == 0:
        raise DfigInitError("zero bus voltage")
    if s == 0 and v_wind == 0:
        return DfigState(1.0, v.real, v.imag, (0.0, 0.0, 0.0, 0.0), 0.0, cmath.phase(v))
    p_avail = available_power(v_wind, params)
    if s.real > p_avail * (1 + 1e-9):
        raise DfigInitError(f"injection {s.real:.4f} pu exceeds available aero power {p_avail:.4f} pu")
    if s.real <= 0:
        raise DfigInitError("MPPT operation needs a positive active injection")
    omega_r = (s.real / params.k_opt) ** (1.0 / 3.0)
    p_aero = aero_power(v_wind, omega_r, params)
    if abs(p_aero - s.real) > 1e-9 * max(1.0, s.real):
        raise DfigInitError(f"injection {s.real:.6f} pu is not the MPPT equilibrium at {v_wind} m/s "
                            f"(aero {p_aero:.6f} pu)")
    xt = params.x_transient
    i_s = np.conj(s / v)
    e = v + complex(params.Rs, xt) * i_s
    g = params.omega_b * params.Xm / params.Xr
    v_pi = (e + 1j * (params.Xs - xt) * i_s) / params.t_open / (1j * g)
    slip = 1.0 - omega_r
    if abs(v_pi + slip * params.Xr / params.Xm * e) > params.vr_max:
        raise DfigInitError("equilibrium rotor voltage exceeds the converter ceiling")
    rot = np.conj(v) / abs(v)
    i_r = (-1j * e / params.Xm + params.Xm / params.Xr * i_s) * rot
    v_pi_v = v_pi * rot
    return DfigState(omega_r, e.real, e.imag, (i_r.real, -i_r.imag, v_pi_v.real, v_pi_v.imag),
                     0.0, cmath.phase(v))
