"""Coupled time-domain simulation of generators, wind farm and network.

The network is algebraic: at every derivative evaluation the bus voltages are
obtained from one real linear solve (loads as constant admittance, machines
as voltage-dependent current injections). Integration is fixed-step, either
trapezoidal (chord iteration with a frozen Jacobian) or classical RK4.
"""
from __future__ import annotations

import cmath
import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit

from . import machines as mc
from . import windfarm as wf
from .netmodel import (Case, GeneratorTrip, LoadStep, NetworkState, PowerFlowSolution, apply_event, build_ybus,
                       initial_network_state, solve_power_flow)

MODES = ("none", "inertial", "coordinated")

# control vector layout
(C_DPGATE, C_UCGATE, C_FSS, C_UCCLAMP, C_UCRATE, C_UCTAU, C_WSRC, C_FNOM, C_KW, C_TW, C_DB, C_TAU, C_DF,
 C_RATIO, C_QREF, C_BASE) = range(16)
N_CTRL = 16

N_AUX_FIXED = 9
(A_FCOI, A_WCOI, A_POUT, A_DP, A_PAERO, A_UCMD, A_VRSAT, A_QOUT, A_FBUS) = range(N_AUX_FIXED)


class SimulationError(RuntimeError):
    """Numerical failure during integration (non-finite state, no convergence)."""


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    t_end: float = 20.0
    integrator: str = "trapezoidal"
    events: tuple = ()
    controller_mode: str = "none"
    coordination: object = None
    record_every: int = 1
    tol: float = 1e-10
    max_iter: int = 20
    uc_clamp: float = 0.01
    uc_rate: float = 1.0
    uc_tau: float = 0.01
    f_ss_target: float | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.integrator not in ("trapezoidal", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.controller_mode not in MODES:
            raise ValueError(f"controller_mode must be one of {MODES}")
        if self.controller_mode == "coordinated" and self.coordination is None:
            raise ValueError("coordinated mode needs a trained network")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        times = [e.t for e in self.events]
        if any(t < 0 for t in times) or times != sorted(times):
            raise ValueError("events must have t >= 0 and be sorted by time")


@dataclass(frozen=True)
class FarmUnit:
    bus: int
    params: wf.DfigParams
    v_wind: float
    state: wf.DfigState


@dataclass
class Grid:
    """An initialised system: power flow, generator units and the wind farm."""

    case: Case
    pf: PowerFlowSolution
    units: list
    farm: FarmUnit | None
    washout: wf.WashoutParams
    net_state: NetworkState
    preset: str = "standard"

    @property
    def network(self):
        return self.case.network

    @property
    def omega_s(self) -> float:
        return 2 * math.pi * self.network.f_nominal

    @property
    def n_sg(self) -> int:
        return len(self.units)

    @property
    def n_states(self) -> int:
        return mc.N_STATES * self.n_sg + 9 + 2

    @property
    def off_farm(self) -> int:
        return mc.N_STATES * self.n_sg

    @property
    def i_washout(self) -> int:
        return self.off_farm + 7

    @property
    def i_meas(self) -> int:
        return self.off_farm + 8

    @property
    def i_area(self) -> int:
        return self.off_farm + 9

    @property
    def i_uc(self) -> int:
        return self.off_farm + 10

    def x0(self) -> np.ndarray:
        x = np.zeros(self.n_states)
        for i, u in enumerate(self.units):
            x[i * mc.N_STATES:(i + 1) * mc.N_STATES] = u.x0
        if self.farm is not None:
            x[self.off_farm:self.off_farm + 7] = self.farm.state.vector()
            x[self.i_washout] = self.farm.state.washout_state
            x[self.i_meas] = self.farm.state.meas_state
        return x

    def state_names(self) -> list[str]:
        names = [f"{n}_sg{i + 1}" for i in range(self.n_sg) for n in mc.STATE_NAMES]
        names += [f"{n}_wt" for n in wf.STATE_NAMES] + ["washout_wt", "meas_wt", "area", "uc"]
        return names

    def total_generation_mw(self) -> float:
        base = self.network.base_mva
        return float(sum(b.p_gen_setpoint for b in self.network.buses if b.kind == "pq") * base
                     + sum(self.pf.injection[self.network.index[u.bus]].real for u in self.units) * base)

    def farm_mw(self) -> float:
        if self.farm is None:
            return 0.0
        return self.network.buses[self.network.index[self.farm.bus]].p_gen_setpoint * self.network.base_mva


def build_grid(case: Case, preset: str = "standard", v_wind: float | None = None,
               washout: wf.WashoutParams | None = None, dfig: wf.DfigParams | None = None,
               freq_sensitivity: float = 0.0, pf_tolerance: float = 1e-12,
               governor: dict | None = None, exciter: dict | None = None) -> Grid:
    """Dispatch the wind farm, solve the power flow and initialise all devices at rest.

    ``governor`` and ``exciter`` are field overrides applied on top of the preset.
    """
    preset = mc.preset_name(preset)
    gov_base = replace(mc.GOVERNOR_PRESETS[preset], **(governor or {}))
    exc_base = replace(mc.EXCITER_PRESETS[preset], **(exciter or {}))
    net = case.network
    base = net.base_mva
    washout = washout or wf.WashoutParams(f_nominal=net.f_nominal)
    farm_bus = int(case.windfarm["bus"]) if case.windfarm else None
    if farm_bus is not None:
        if dfig is None:
            dfig = replace(wf.DFIG_PRESETS[preset],
                           n_turbines=int(case.windfarm.get("n_turbines", 5)),
                           mva_base=case.windfarm.get("mva_per_turbine", 3.6))
        v_wind = case.windfarm.get("v_wind", 11.0) if v_wind is None else v_wind
        p_farm = wf.available_power(v_wind, dfig) * dfig.farm_mva / base
        bus = net.buses[net.index[farm_bus]]
        net = net.with_bus(farm_bus, p_gen_setpoint=p_farm, q_gen=dfig.Qref * dfig.farm_mva / base)
        case = replace(case, network=net)
    pf = solve_power_flow(net, tolerance=pf_tolerance, max_iter=10)

    units = []
    for rec in case.generators:
        i = net.index[rec["bus"]]
        bus = net.buses[i]
        params = mc.SgParams(H=rec["H"], Xd=rec["Xd"], Xq=rec["Xq"], Xd_t=rec["Xd_t"], Tdo_t=rec["Tdo_t"],
                             mva_base=rec["mva"], omega_s=2 * math.pi * net.f_nominal)
        gov = gov_base if governor and "Pmax" in governor else replace(gov_base, Pmax=rec["pmax"] * base / rec["mva"])
        s_gen = pf.injection[i] + complex(bus.p_load, bus.q_load)
        units.append(mc.init_unit(rec["bus"], pf.voltage[i], s_gen, base, params,
                                  exc_base, gov))
    farm = None
    if farm_bus is not None:
        i = net.index[farm_bus]
        bus = net.buses[i]
        s_dev = complex(bus.p_gen_setpoint, bus.q_gen) * base / dfig.farm_mva
        farm = FarmUnit(farm_bus, dfig, v_wind, wf.dfig_init(s_dev, pf.voltage[i], v_wind, dfig))
    ns = initial_network_state(net, pf, len(units), freq_sensitivity)
    return Grid(case, pf, units, farm, washout, ns, preset)


def droop_steady_state(grid: Grid, events) -> float:
    """Steady-state frequency (Hz) predicted from aggregate governor droop and the disturbance size."""
    base = grid.network.base_mva
    dp = 0.0
    gain = 0.0
    online = [True] * grid.n_sg
    for ev in events:
        if isinstance(ev, LoadStep):
            b = grid.network.buses[grid.network.index[ev.bus]]
            dp += ev.fraction * b.p_load
        elif isinstance(ev, GeneratorTrip):
            dp += grid.pf.injection[grid.network.index[grid.units[ev.unit].bus]].real
            online[ev.unit] = False
    for u, on in zip(grid.units, online):
        if on:
            gain += u.governor.K1 * u.params.mva_base / base
    f0 = grid.network.f_nominal
    return f0 * (1.0 - dp / gain) if gain > 0 else f0


# ----------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _wrap(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@njit(cache=True)
def _mlp_eval(inp, W1, b1, W2, b2, xlo, xhi, ylo, yhi):
    n_in = inp.shape[0]
    z = np.empty(n_in)
    for k in range(n_in):
        half = 0.5 * (xhi[k] - xlo[k])
        z[k] = (inp[k] - 0.5 * (xhi[k] + xlo[k])) / half if half > 0 else 0.0
    h = np.tanh(W1 @ z + b1)
    y = W2 @ h + b2
    return 0.5 * (yhi[0] + ylo[0]) + 0.5 * (yhi[0] - ylo[0]) * y[0]


@njit(cache=True)
def _system_rhs(x, m, dx, aux):
    sgp, sg_bus, online, ybase, yload, dfp, farm_bus, ctrl, W1, b1, W2, b2, xlo, xhi, ylo, yhi = m
    n_sg = sgp.shape[0]
    nb = yload.shape[0]
    ns = 9
    off = ns * n_sg
    ws = sgp[0, mc.P_WS]

    hs = 0.0
    hw = 0.0
    for i in range(n_sg):
        if online[i] > 0:
            w = sgp[i, mc.P_H] * sgp[i, mc.P_MVA]
            hs += w
            hw += w * x[ns * i + 1]
    w_coi = hw / hs
    f_coi = w_coi / (2.0 * math.pi)

    A = ybase.copy()
    rhs = np.zeros(2 * nb)
    if ctrl[C_DF] != 0.0:
        scale = ctrl[C_DF] * (w_coi / ws - 1.0)
        for k in range(nb):
            g, b = yload[k].real * scale, yload[k].imag * scale
            A[k, k] += g
            A[k, nb + k] -= b
            A[nb + k, k] += b
            A[nb + k, nb + k] += g
    for i in range(n_sg):
        if online[i] <= 0:
            continue
        k = sg_bus[i]
        r = sgp[i, mc.P_MVA] / ctrl[C_BASE]
        d = x[ns * i]
        eq = x[ns * i + 2]
        s, c = math.sin(d), math.cos(d)
        a = 1.0 / sgp[i, mc.P_XDT]
        q = 1.0 / sgp[i, mc.P_XQ]
        A[k, k] -= r * (-c * s * a + s * c * q)
        A[k, nb + k] -= r * (-s * s * a - c * c * q)
        A[nb + k, k] -= r * (s * s * q + c * c * a)
        A[nb + k, nb + k] -= r * (-c * s * q + c * s * a)
        rhs[k] += r * eq * s * a
        rhs[nb + k] -= r * eq * c * a
    fb = farm_bus[0]
    if fb >= 0:
        xt = dfp[wf.D_XS] - dfp[wf.D_XM] ** 2 / dfp[wf.D_XR]
        yd = ctrl[C_RATIO] / complex(dfp[wf.D_RS], xt)
        ie = yd * complex(x[off + 1], x[off + 2])
        rhs[fb] += ie.real
        rhs[nb + fb] += ie.imag
    v = np.linalg.solve(A, rhs)

    for i in range(n_sg):
        j = ns * i
        if online[i] <= 0:
            for q in range(ns):
                dx[j + q] = 0.0
            continue
        k = sg_bus[i]
        vre, vim = v[k], v[nb + k]
        Id, Iq = mc._stator(x[j], x[j + 2], vre, vim, sgp[i, mc.P_XDT], sgp[i, mc.P_XQ])
        mc._sg_rhs(x[j:j + ns], Id, Iq, math.sqrt(vre * vre + vim * vim), x[off + 10] * ws, sgp[i], dx[j:j + ns])
        aux[N_AUX_FIXED + nb + i] = x[j + 2] * Iq + (sgp[i, mc.P_XQ] - sgp[i, mc.P_XDT]) * Id * Iq

    p_out = 0.0
    dp = 0.0
    p_aero = 0.0
    sat = 0.0
    q_out = 0.0
    f_bus = ctrl[C_FNOM]
    if fb >= 0:
        vf = complex(v[fb], v[nb + fb])
        th = math.atan2(vf.imag, vf.real)
        dth = _wrap(th - x[off + 8]) / ctrl[C_TAU]
        dx[off + 8] = dth
        f_bus = ctrl[C_FNOM] * (1.0 + dth / ws)
        if ctrl[C_WSRC] > 0:
            df = w_coi / ws - 1.0
        else:
            df = dth / ws
        if abs(df) * ctrl[C_FNOM] < ctrl[C_DB]:
            df = 0.0
        hp = df - x[off + 7]
        dx[off + 7] = hp / ctrl[C_TW]
        dp = -ctrl[C_KW] * hp * ctrl[C_DPGATE]
        p_cmd = wf.mppt_reference(x[off], dfp[wf.D_KOPT]) + dp
        i_s, pe, qe, sat = wf._dfig_core(x[off:off + 7], vf, p_cmd, ctrl[C_QREF], dfp, dx[off:off + 7])
        p_out = pe * ctrl[C_RATIO]
        q_out = qe * ctrl[C_RATIO]
        p_aero = wf._aero(dfp[wf.D_VWIND], x[off], dfp[wf.D_CCAL], dfp[wf.D_VRATED], dfp[wf.D_WRATED])
    else:
        for q in range(9):
            dx[off + q] = 0.0

    dx[off + 9] = max(0.0, ctrl[C_FSS] - f_coi)

    ucmd = 0.0
    if ctrl[C_UCGATE] > 0:
        inp = np.empty(n_sg + 2)
        inp[0] = p_out
        for i in range(n_sg):
            inp[1 + i] = x[ns * i + 1] / ws
        inp[n_sg + 1] = x[off + 9]
        ucmd = _mlp_eval(inp, W1, b1, W2, b2, xlo, xhi, ylo, yhi)
        lim = ctrl[C_UCCLAMP]
        ucmd = min(max(ucmd, -lim), lim)
    rate = (ucmd - x[off + 10]) / ctrl[C_UCTAU]
    dx[off + 10] = min(max(rate, -ctrl[C_UCRATE]), ctrl[C_UCRATE])

    aux[A_FCOI] = f_coi
    aux[A_WCOI] = w_coi / ws
    aux[A_POUT] = p_out
    aux[A_DP] = dp
    aux[A_PAERO] = p_aero
    aux[A_UCMD] = ucmd
    aux[A_VRSAT] = sat
    aux[A_QOUT] = q_out
    aux[A_FBUS] = f_bus
    for k in range(nb):
        aux[N_AUX_FIXED + k] = math.sqrt(v[k] ** 2 + v[nb + k] ** 2)


@njit(cache=True)
def _trap_segment(x, f, aux, m, dt, n_steps, Minv, tol, max_iter, rec_every, step0, rec_x, rec_aux, rec_pos):
    """Advance ``n_steps`` trapezoidal steps in place.

    Returns ``(steps_done, rec_pos, status, iters_max)``; status 1 means the
    chord iteration stalled and the Jacobian should be refreshed, status 2
    means a non-finite state was produced.
    """
    n = x.shape[0]
    f_new = np.empty(n)
    aux_new = np.empty(aux.shape[0])
    r = np.empty(n)
    iters_max = 0
    for k in range(n_steps):
        xn = x + dt * f
        converged = False
        it = 0
        while it < max_iter:
            it += 1
            _system_rhs(xn, m, f_new, aux_new)
            for q in range(n):
                r[q] = xn[q] - x[q] - 0.5 * dt * (f[q] + f_new[q])
            delta = Minv @ r
            xn -= delta
            err = 0.0
            for q in range(n):
                a = abs(delta[q])
                if a > err:
                    err = a
            if not err < 1e30:
                return k, rec_pos, 2, it
            if err < tol:
                converged = True
                break
        if not converged:
            return k, rec_pos, 1, it
        if it > iters_max:
            iters_max = it
        _system_rhs(xn, m, f, aux)
        x[:] = xn
        if (step0 + k + 1) % rec_every == 0:
            rec_x[rec_pos] = x
            rec_aux[rec_pos] = aux
            rec_pos += 1
    return n_steps, rec_pos, 0, iters_max


@njit(cache=True)
def _rk4_segment(x, f, aux, m, dt, n_steps, rec_every, step0, rec_x, rec_aux, rec_pos):
    n = x.shape[0]
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    scratch = np.empty(aux.shape[0])
    for k in range(n_steps):
        _system_rhs(x + 0.5 * dt * f, m, k2, scratch)
        _system_rhs(x + 0.5 * dt * k2, m, k3, scratch)
        _system_rhs(x + dt * k3, m, k4, scratch)
        x += dt / 6.0 * (f + 2.0 * k2 + 2.0 * k3 + k4)
        for q in range(n):
            if not abs(x[q]) < 1e30:
                return k, rec_pos, 2
        _system_rhs(x, m, f, aux)
        if (step0 + k + 1) % rec_every == 0:
            rec_x[rec_pos] = x
            rec_aux[rec_pos] = aux
            rec_pos += 1
    return n_steps, rec_pos, 0


# ----------------------------------------------------------------------------
# assembly


def _real_form(Y: np.ndarray) -> np.ndarray:
    G, B = Y.real, Y.imag
    return np.ascontiguousarray(np.block([[G, -B], [B, G]]))


def _null_mlp(n_in: int):
    z = np.zeros
    return (z((1, n_in)), z(1), z((1, 1)), z(1), z(n_in), z(n_in), z(1), z(1))


def _pack(grid: Grid, ns: NetworkState, cfg: SimConfig, f_ss: float):
    net = grid.network
    base = net.base_mva
    Y = build_ybus(net.buses, net.branches) + np.diag(ns.load_admittance)
    ctrl = np.zeros(N_CTRL)
    if grid.farm is not None:
        dfig = grid.farm.params
        ratio = dfig.farm_mva / base
        k = net.index[grid.farm.bus]
        Y[k, k] += ratio / complex(dfig.Rs, dfig.x_transient)
        dfp = dfig.packed(grid.farm.v_wind)
        farm_bus = np.array([k], dtype=np.int64)
        ctrl[C_RATIO] = ratio
        ctrl[C_QREF] = dfig.Qref
    else:
        dfp = wf.DfigParams().packed(0.0)
        farm_bus = np.array([-1], dtype=np.int64)
    wo = grid.washout
    ctrl[C_DPGATE] = 1.0 if cfg.controller_mode in ("inertial", "coordinated") else 0.0
    ctrl[C_UCGATE] = 1.0 if cfg.controller_mode == "coordinated" else 0.0
    ctrl[C_FSS] = f_ss
    ctrl[C_UCCLAMP] = cfg.uc_clamp
    ctrl[C_UCRATE] = cfg.uc_rate
    ctrl[C_UCTAU] = cfg.uc_tau
    ctrl[C_WSRC] = 1.0 if wo.source == "coi" else 0.0
    ctrl[C_FNOM] = net.f_nominal
    ctrl[C_KW] = wo.K_w
    ctrl[C_TW] = wo.T_w
    ctrl[C_DB] = wo.deadband
    ctrl[C_TAU] = wo.tau_meas
    ctrl[C_DF] = ns.freq_sensitivity
    ctrl[C_BASE] = base
    sgp = np.ascontiguousarray(np.array([u.packed() for u in grid.units]))
    sg_bus = np.array([net.index[u.bus] for u in grid.units], dtype=np.int64)
    online = np.array([1.0 if o else 0.0 for o in ns.online])
    n_in = grid.n_sg + 2
    if cfg.controller_mode == "coordinated":
        mlp_arrays = cfg.coordination.kernel_arrays()
        if mlp_arrays[0].shape[1] != n_in:
            raise ValueError(f"coordination network expects {mlp_arrays[0].shape[1]} inputs, system provides {n_in}")
    else:
        mlp_arrays = _null_mlp(n_in)
    return (sgp, sg_bus, online, _real_form(Y), np.ascontiguousarray(ns.load_admittance), dfp, farm_bus, ctrl,
            *(np.ascontiguousarray(a, dtype=float) for a in mlp_arrays))


def evaluate(grid: Grid, x: np.ndarray, cfg: SimConfig | None = None, ns: NetworkState | None = None,
             f_ss: float | None = None):
    """One derivative evaluation: returns ``(dx, aux)``."""
    cfg = cfg or SimConfig()
    m = _pack(grid, ns or grid.net_state, cfg, grid.network.f_nominal if f_ss is None else f_ss)
    dx = np.empty(grid.n_states)
    aux = np.empty(N_AUX_FIXED + len(grid.network.buses) + grid.n_sg)
    _system_rhs(np.asarray(x, dtype=float), m, dx, aux)
    return dx, aux


def network_solution(grid: Grid, x: np.ndarray, ns: NetworkState | None = None) -> np.ndarray:
    """Complex bus voltages consistent with state ``x`` (for power-balance checks)."""
    m = _pack(grid, ns or grid.net_state, SimConfig(), grid.network.f_nominal)
    A = m[3].copy()
    nb = len(grid.network.buses)
    rhs = np.zeros(2 * nb)
    for i, u in enumerate(grid.units):
        if not (ns or grid.net_state).online[i]:
            continue
        k = grid.network.index[u.bus]
        j = i * mc.N_STATES
        d, eq = x[j], x[j + 2]
        r = u.params.mva_base / grid.network.base_mva
        s, c = math.sin(d), math.cos(d)
        a, q = 1 / u.params.Xd_t, 1 / u.params.Xq
        A[k, k] -= r * (-c * s * a + s * c * q)
        A[k, nb + k] -= r * (-s * s * a - c * c * q)
        A[nb + k, k] -= r * (s * s * q + c * c * a)
        A[nb + k, nb + k] -= r * (-c * s * q + c * s * a)
        rhs[k] += r * eq * s * a
        rhs[nb + k] -= r * eq * c * a
    if grid.farm is not None:
        k = grid.network.index[grid.farm.bus]
        p = grid.farm.params
        ie = p.farm_mva / grid.network.base_mva / complex(p.Rs, p.x_transient) * complex(
            x[grid.off_farm + 1], x[grid.off_farm + 2])
        rhs[k] += ie.real
        rhs[nb + k] += ie.imag
    v = np.linalg.solve(A, rhs)
    return v[:nb] + 1j * v[nb:]


def _jacobian(x, m, n_aux):
    n = x.shape[0]
    f0 = np.empty(n)
    aux = np.empty(n_aux)
    _system_rhs(x, m, f0, aux)
    J = np.empty((n, n))
    fp = np.empty(n)
    for k in range(n):
        h = 1e-7 * max(1.0, abs(x[k]))
        xp = x.copy()
        xp[k] += h
        _system_rhs(xp, m, fp, aux)
        J[:, k] = (fp - f0) / h
    return J


# ----------------------------------------------------------------------------
# traces


@dataclass
class SimTrace:
    t: np.ndarray
    columns: dict
    x_final: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def to_csv(self, path) -> None:
        names = list(self.columns)
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with tmp.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s"] + names)
            cols = [self.columns[n] for n in names]
            for i, t in enumerate(self.t):
                w.writerow([repr(float(t))] + [repr(float(c[i])) for c in cols])
        tmp.replace(path)

    @classmethod
    def from_csv(cls, path) -> "SimTrace":
        with Path(path).open() as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], np.array(rows[1:], dtype=float)
        cols = {n: body[:, i] for i, n in enumerate(head) if n != "t_s"}
        return cls(body[:, head.index("t_s")], cols, np.empty(0))


def _columns(grid: Grid, rec_x: np.ndarray, rec_aux: np.ndarray) -> dict:
    ws = grid.omega_s
    f0 = grid.network.f_nominal
    nb = len(grid.network.buses)
    cols = {}
    for i in range(grid.n_sg):
        j = i * mc.N_STATES
        tag = f"sg{i + 1}"
        cols[f"delta_{tag}_rad"] = rec_x[:, j]
        cols[f"omega_{tag}_pu"] = rec_x[:, j + 1] / ws
        cols[f"f_{tag}_hz"] = rec_x[:, j + 1] / ws * f0
        cols[f"eqt_{tag}_pu"] = rec_x[:, j + 2]
        cols[f"efd_{tag}_pu"] = rec_x[:, j + 3]
        cols[f"tm_{tag}_pu"] = rec_x[:, j + 8]
        cols[f"te_{tag}_pu"] = rec_aux[:, N_AUX_FIXED + nb + i]
    for k, bus in enumerate(grid.network.buses):
        cols[f"v_bus{bus.id}_pu"] = rec_aux[:, N_AUX_FIXED + k]
    if grid.farm is not None:
        cols["omega_r_pu"] = rec_x[:, grid.off_farm]
        cols["p_out_pu"] = rec_aux[:, A_POUT]
        cols["p_out_mw"] = rec_aux[:, A_POUT] * grid.network.base_mva
        cols["q_out_pu"] = rec_aux[:, A_QOUT]
        cols["dp_turbine_pu"] = rec_aux[:, A_DP]
        cols["dp_pu"] = rec_aux[:, A_DP] * grid.farm.params.farm_mva / grid.network.base_mva
        cols["p_aero_pu"] = rec_aux[:, A_PAERO] * grid.farm.params.farm_mva / grid.network.base_mva
        cols["f_bus_wt_hz"] = rec_aux[:, A_FBUS]
        cols["vr_sat"] = rec_aux[:, A_VRSAT]
    cols["omega_coi_pu"] = rec_aux[:, A_WCOI]
    cols["f_coi_hz"] = rec_aux[:, A_FCOI]
    cols["uc_pu"] = rec_x[:, grid.i_uc]
    cols["uc_cmd_pu"] = rec_aux[:, A_UCMD]
    cols["e_hzs"] = rec_x[:, grid.i_area]
    return cols


def run_scenario(grid: Grid, cfg: SimConfig) -> SimTrace:
    """Integrate the coupled system from its equilibrium through the configured events.

    Events are snapped to the nearest step boundary and applied before the
    step that starts there; the sample at that time reflects the post-event
    algebraic solution.
    """
    dt = cfg.dt
    n_total = int(round(cfg.t_end / dt))
    f_ss = cfg.f_ss_target if cfg.f_ss_target is not None else droop_steady_state(grid, cfg.events)
    n_aux = N_AUX_FIXED + len(grid.network.buses) + grid.n_sg
    n_rec = n_total // cfg.record_every + 1
    rec_x = np.empty((n_rec, grid.n_states))
    rec_aux = np.empty((n_rec, n_aux))

    pending = sorted(((int(round(e.t / dt)), i, e) for i, e in enumerate(cfg.events)), key=lambda z: (z[0], z[1]))
    ns = grid.net_state
    step = 0
    while pending and pending[0][0] <= 0:
        ns = apply_event(ns, pending.pop(0)[2])
    if not any(ns.online):
        raise SimulationError("no synchronous generator left online at t = 0.0000 s")
    m = _pack(grid, ns, cfg, f_ss)
    x = grid.x0()
    f = np.empty_like(x)
    aux = np.empty(n_aux)
    _system_rhs(x, m, f, aux)
    rec_x[0], rec_aux[0] = x, aux
    pos = 1
    Minv = None
    iters_max = 0

    def fail(msg):
        raise SimulationError(f"{msg} at t = {step * dt:.4f} s")

    def iteration_matrix():
        J = _jacobian(x, m, n_aux)
        return np.ascontiguousarray(np.linalg.inv(np.eye(len(x)) - 0.5 * dt * J))

    fresh = False
    while step < n_total:
        seg_end = min(pending[0][0] if pending else n_total, n_total)
        if cfg.integrator == "trapezoidal":
            if Minv is None:
                Minv, fresh = iteration_matrix(), True
            done, pos, status, its = _trap_segment(x, f, aux, m, dt, seg_end - step, Minv, cfg.tol, cfg.max_iter,
                                                   cfg.record_every, step, rec_x, rec_aux, pos)
            iters_max = max(iters_max, its)
            step += done
            if done > 0:
                fresh = False
            if status == 1:
                if fresh:
                    fail("implicit iteration did not converge")
                Minv = None
                continue
        else:
            done, pos, status = _rk4_segment(x, f, aux, m, dt, seg_end - step, cfg.record_every, step,
                                             rec_x, rec_aux, pos)
            step += done
        if status == 2 or not np.all(np.isfinite(x)):
            fail("non-finite state")
        if pending and pending[0][0] <= step:
            while pending and pending[0][0] <= step:
                ns = apply_event(ns, pending.pop(0)[2])
            if not any(ns.online):
                fail("no synchronous generator left online")
            m = _pack(grid, ns, cfg, f_ss)
            _system_rhs(x, m, f, aux)
            if step % cfg.record_every == 0:
                rec_aux[pos - 1] = aux
            Minv = None

    t = np.arange(pos) * dt * cfg.record_every
    meta = {"dt": dt, "integrator": cfg.integrator, "mode": cfg.controller_mode, "f_ss_target": f_ss,
            "max_iterations": iters_max, "record_every": cfg.record_every}
    return SimTrace(t, _columns(grid, rec_x[:pos], rec_aux[:pos]), x.copy(), meta)


# ----------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Metrics:
    f_nadir: float
    t_nadir: float
    rocof: float
    f_ss: float
    area_s: float
    rocof_window: float = 0.5

    def as_row(self) -> dict:
        return {"f_nadir_hz": self.f_nadir, "t_nadir_s": self.t_nadir, "rocof_hz_per_s": self.rocof,
                "f_ss_hz": self.f_ss, "area_s_hzs": self.area_s, "rocof_window_s": self.rocof_window}


def coi_frequency(omegas, H, mva_base) -> float:
    """Inertia-weighted mean speed: sum(H*S*w) / sum(H*S)."""
    w = np.asarray(omegas, dtype=float)
    weights = np.asarray(H, dtype=float) * np.asarray(mva_base, dtype=float)
    if w.size == 0:
        raise ValueError("no machines online")
    return float(np.sum(weights * w) / np.sum(weights))


def running_area_error(t, f_coi, f_ss_target) -> np.ndarray:
    """Cumulative trapezoidal integral of the shortfall below ``f_ss_target`` (Hz*s)."""
    t = np.asarray(t, dtype=float)
    short = np.maximum(0.0, f_ss_target - np.asarray(f_coi, dtype=float))
    if np.any(np.diff(t) <= 0):
        raise ValueError("time samples must be strictly increasing")
    e = np.zeros_like(t)
    e[1:] = np.cumsum(0.5 * (short[1:] + short[:-1]) * np.diff(t))
    return e


def compute_metrics(trace, t_event: float = 0.0, rocof_window: float = 0.5, tail_fraction: float = 0.1) -> Metrics:
    """Nadir, RoCoF (most negative centred slope over a sliding window), tail-mean steady state, area S."""
    t = np.asarray(trace.t if hasattr(trace, "t") else trace[0], dtype=float)
    f = np.asarray(trace["f_coi_hz"] if hasattr(trace, "columns") else trace[1], dtype=float)
    dt = t[1] - t[0]
    post = t >= t_event - 1e-12
    tp, fp = t[post], f[post]
    half = int(round(0.5 * rocof_window / dt))
    if half < 1 or len(tp) < 2 * half + 1:
        raise ValueError("trace too short for the RoCoF window")
    n_tail = max(1, int(round(tail_fraction * len(t))))
    f_ss = float(np.mean(f[-n_tail:]))
    i_nadir = int(np.argmin(fp))
    slopes = (fp[2 * half:] - fp[:-2 * half]) / (tp[2 * half:] - tp[:-2 * half])
    area = running_area_error(tp, fp, f_ss)[-1]
    return Metrics(float(fp[i_nadir]), float(tp[i_nadir]), float(np.min(slopes)), f_ss, float(area), rocof_window)
