"""One-axis synchronous generator with IEEE Type-1 exciter and IEESGO governor.

All quantities are per-unit on the machine base except ``omega``/``omega_s``
(electrical rad/s) and time constants (s). The coordination input ``u_c``
enters the governor speed error in rad/s, i.e. the speed reference becomes
``omega_s - u_c``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

OMEGA_S_60 = 2.0 * math.pi * 60.0

STATE_NAMES = ("delta", "omega", "eq_t", "efd", "vr", "rf", "y1", "y3", "tm")
N_STATES = len(STATE_NAMES)

# layout of the packed parameter row consumed by the kernels
(P_H, P_XD, P_XQ, P_XDT, P_TDO, P_TFW, P_WS, P_KA, P_TA, P_KE, P_TE, P_KF, P_TF,
 P_SEA, P_SEB, P_VREF, P_T1, P_T2, P_T3, P_T4, P_K1, P_PC, P_PMIN, P_PMAX, P_MVA) = range(25)
N_PARAMS = 25


class MachineInitError(ValueError):
    """Power-flow operating point cannot be held by the machine at equilibrium."""


@dataclass(frozen=True)
class SgParams:
    H: float
    Xd: float
    Xq: float
    Xd_t: float
    Tdo_t: float
    Xq_t: float | None = None
    T_fw: float = 0.0
    mva_base: float = 100.0
    omega_s: float = OMEGA_S_60

    def __post_init__(self):
        if not self.H > 0:
            raise ValueError("H must be positive")
        if not self.Tdo_t > 0:
            raise ValueError("Tdo_t must be positive")
        if not self.Xd >= self.Xd_t > 0:
            raise ValueError("need Xd >= Xd_t > 0")


@dataclass(frozen=True)
class SgState:
    delta: float
    omega: float
    eq_t: float


@dataclass(frozen=True)
class ExciterParams:
    KA: float
    TA: float
    KE: float
    TE: float
    KF: float
    TF: float
    se_a: float = 0.0039
    se_b: float = 1.555
    Vref: float = 1.0
    efd_ceiling: float = 5.0

    def __post_init__(self):
        if not (self.TA > 0 and self.TE > 0 and self.TF > 0):
            raise ValueError("exciter time constants must be positive")


@dataclass(frozen=True)
class ExciterState:
    efd: float
    vr: float
    rf: float


@dataclass(frozen=True)
class GovernorParams:
    T1: float
    T2: float
    T3: float
    T4: float
    K1: float
    PC: float = 0.0
    Pmin: float = 0.0
    Pmax: float = 10.0

    def __post_init__(self):
        if not (self.T1 > 0 and self.T3 > 0 and self.T4 > 0):
            raise ValueError("T1, T3, T4 must be positive")
        if self.Pmin > self.Pmax:
            raise ValueError("Pmin > Pmax")


@dataclass(frozen=True)
class GovernorState:
    y1: float
    y3: float
    tm: float


@dataclass(frozen=True)
class SgInputs:
    Id: float
    Iq: float
    Vt: float
    u_c: float = 0.0


# `paper` carries the published constants verbatim; KA=0 leaves no voltage
# regulation, so an equilibrium with VR != 0 cannot be initialised from it.
EXCITER_PRESETS = {
    "standard": ExciterParams(KA=20.0, TA=0.2, KE=1.0, TE=0.314, KF=0.063, TF=0.35),
    "paper": ExciterParams(KA=0.0, TA=20.0, KE=-5.0, TE=1.0, KF=0.314, TF=0.063),
}

# the published governor set (T4 = 12 s) has a growing ~0.035 Hz mode on this grid
# with frequency-independent loads; `standard` is a damped reheat-style set.
GOVERNOR_PRESETS = {
    "standard": GovernorParams(T1=0.2, T2=1.5, T3=5.0, T4=0.3, K1=20.0),
    "paper": GovernorParams(T1=1.0, T2=0.3, T3=5.0, T4=12.0, K1=30.0),
}

PRESET_ALIASES = {"standard-wscc": "standard", "paper-appendix": "paper"}


def preset_name(name: str) -> str:
    name = PRESET_ALIASES.get(name, name)
    if name not in EXCITER_PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(EXCITER_PRESETS) + sorted(PRESET_ALIASES)}")
    return name


# ----------------------------------------------------------------------------
# kernels


@njit(cache=True)
def governor_limiter(y2i, PC, Pmin, Pmax):
    """Algebraic torque-demand clamp: ``PC - y2`` is kept inside ``[Pmin, Pmax]``."""
    if Pmin > PC - y2i:
        return PC - Pmin
    if Pmax < PC - y2i:
        return PC - Pmax
    return y2i


@njit(cache=True)
def exciter_saturation(efd, se_a, se_b):
    return se_a * math.exp(se_b * abs(efd))


@njit(cache=True)
def _sg_rhs(x, Id, Iq, Vt, uc, p, out):
    omega, eq, efd, vr, rf, y1, y3, tm = x[1], x[2], x[3], x[4], x[5], x[6], x[7], x[8]
    ws = p[P_WS]
    te = eq * Iq + (p[P_XQ] - p[P_XDT]) * Id * Iq
    out[0] = omega - ws
    out[1] = (tm - te - p[P_TFW]) * ws / (2.0 * p[P_H])
    out[2] = (-eq - (p[P_XD] - p[P_XDT]) * Id + efd) / p[P_TDO]
    se = exciter_saturation(efd, p[P_SEA], p[P_SEB])
    kf_tf = p[P_KF] / p[P_TF]
    out[3] = (-(p[P_KE] + se) * efd + vr) / p[P_TE]
    out[4] = (-vr + p[P_KA] * (rf - kf_tf * efd + (p[P_VREF] - Vt))) / p[P_TA]
    out[5] = (-rf + kf_tf * efd) / p[P_TF]
    out[6] = (-y1 + p[P_K1] * (omega - ws + uc) / ws) / p[P_T1]
    out[7] = (-y3 + y1) / p[P_T3]
    r = p[P_T2] / p[P_T3]
    y2 = governor_limiter((1.0 - r) * y3 + r * y1, p[P_PC], p[P_PMIN], p[P_PMAX])
    out[8] = (-tm + p[P_PC] - y2) / p[P_T4]


@njit(cache=True)
def _stator(delta, eq, vre, vim, xdt, xq):
    s, c = math.sin(delta), math.cos(delta)
    vd = vre * s - vim * c
    vq = vre * c + vim * s
    return (eq - vq) / xdt, vd / xq


# ----------------------------------------------------------------------------
# public API


def pack_params(sg: SgParams, exc: ExciterParams, gov: GovernorParams) -> np.ndarray:
    p = np.zeros(N_PARAMS)
    p[[P_H, P_XD, P_XQ, P_XDT, P_TDO, P_TFW, P_WS, P_MVA]] = (
        sg.H, sg.Xd, sg.Xq, sg.Xd_t, sg.Tdo_t, sg.T_fw, sg.omega_s, sg.mva_base)
    p[[P_KA, P_TA, P_KE, P_TE, P_KF, P_TF, P_SEA, P_SEB, P_VREF]] = (
        exc.KA, exc.TA, exc.KE, exc.TE, exc.KF, exc.TF, exc.se_a, exc.se_b, exc.Vref)
    p[[P_T1, P_T2, P_T3, P_T4, P_K1, P_PC, P_PMIN, P_PMAX]] = (
        gov.T1, gov.T2, gov.T3, gov.T4, gov.K1, gov.PC, gov.Pmin, gov.Pmax)
    return p


def stator_currents(state: SgState, bus_voltage: complex, params: SgParams) -> tuple[float, float]:
    """Resistance-free one-axis stator algebraics, returning (Id, Iq)."""
    if abs(bus_voltage) == 0:
        raise ValueError("zero bus voltage")
    v = complex(bus_voltage)
    return _stator(state.delta, state.eq_t, v.real, v.imag, params.Xd_t, params.Xq)


def terminal_current(delta: float, Id: float, Iq: float) -> complex:
    """dq stator current rotated into the network frame (machine base)."""
    return complex(Id, Iq) * np.exp(1j * (delta - math.pi / 2))


def state_vector(sg: SgState, exc: ExciterState, gov: GovernorState) -> np.ndarray:
    return np.array([sg.delta, sg.omega, sg.eq_t, exc.efd, exc.vr, exc.rf, gov.y1, gov.y3, gov.tm])


def sg_derivatives(sg: SgState, exc: ExciterState, gov: GovernorState, inputs: SgInputs,
                   params: SgParams, exc_params: ExciterParams, gov_params: GovernorParams) -> np.ndarray:
    """Time derivatives of (delta, omega, eq_t, efd, vr, rf, y1, y3, tm)."""
    out = np.empty(N_STATES)
    _sg_rhs(state_vector(sg, exc, gov), inputs.Id, inputs.Iq, inputs.Vt, inputs.u_c,
            pack_params(params, exc_params, gov_params), out)
    return out


def sg_init_from_powerflow(v_bus: complex, s_gen: complex, params: SgParams,
                           exc_params: ExciterParams, gov_params: GovernorParams):
    """Back-solve an equilibrium from the bus voltage and generator injection.

    ``s_gen`` is on the machine base. Returns ``(SgState, ExciterState,
    GovernorState, Vref, PC)``; the exciter and governor parameter sets are
    expected to be re-created with the returned ``Vref`` and ``PC``.
    """
    v = complex(v_bus)
    if abs(v) == 0:
        raise MachineInitError("zero terminal voltage")
    i = np.conj(complex(s_gen) / v)
    delta = float(np.angle(v + 1j * params.Xq * i))
    rot = np.exp(-1j * (delta - math.pi / 2))
    idq, vdq = i * rot, v * rot
    Id, Iq = idq.real, idq.imag
    eq = vdq.imag + params.Xd_t * Id
    efd = eq + (params.Xd - params.Xd_t) * Id
    if not 0.0 <= efd <= exc_params.efd_ceiling:
        raise MachineInitError(f"required Efd = {efd:.4f} outside [0, {exc_params.efd_ceiling}]")
    vr = (exc_params.KE + exciter_saturation(efd, exc_params.se_a, exc_params.se_b)) * efd
    rf = exc_params.KF / exc_params.TF * efd
    if exc_params.KA == 0:
        if abs(vr) > 1e-12:
            raise MachineInitError("KA = 0 cannot hold the regulator output needed for equilibrium")
        vref = exc_params.Vref
    else:
        vref = abs(v) + vr / exc_params.KA
    te = eq * Iq + (params.Xq - params.Xd_t) * Id * Iq
    tm = te + params.T_fw
    pc = tm
    if not gov_params.Pmin <= pc <= gov_params.Pmax:
        raise MachineInitError(f"dispatch {pc:.4f} pu outside governor limits [{gov_params.Pmin}, {gov_params.Pmax}]")
    return (SgState(delta, params.omega_s, eq), ExciterState(efd, vr, rf), GovernorState(0.0, 0.0, tm),
            vref, pc)


@dataclass(frozen=True)
class SgUnit:
    """A generator with its controls, parameters finalised at the equilibrium."""

    bus: int
    params: SgParams
    exciter: ExciterParams
    governor: GovernorParams
    x0: np.ndarray

    def packed(self) -> np.ndarray:
        return pack_params(self.params, self.exciter, self.governor)


def init_unit(bus: int, v_bus: complex, s_gen_system: complex, base_mva: float, params: SgParams,
              exc_params: ExciterParams, gov_params: GovernorParams) -> SgUnit:
    s_mach = complex(s_gen_system) * base_mva / params.mva_base
    sg, exc, gov, vref, pc = sg_init_from_powerflow(v_bus, s_mach, params, exc_params, gov_params)
    return SgUnit(bus, params, replace(exc_params, Vref=vref), replace(gov_params, PC=pc),
                  state_vector(sg, exc, gov))
