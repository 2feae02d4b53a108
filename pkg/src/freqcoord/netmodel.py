"""Network data, nodal admittance assembly, Newton-Raphson power flow and load events."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

BUS_KINDS = ("slack", "pv", "pq")


class NetworkError(ValueError):
    """Invalid network topology or data."""


class PowerFlowError(RuntimeError):
    """Newton-Raphson failed (divergence, singular Jacobian, iteration cap)."""


class CaseFileError(ValueError):
    """Malformed case file. The message names the offending line."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    voltage_magnitude: float = 1.0
    voltage_angle: float = 0.0
    p_load: float = 0.0
    q_load: float = 0.0
    p_gen_setpoint: float = 0.0
    q_gen: float = 0.0

    def __post_init__(self):
        if self.kind not in BUS_KINDS:
            raise NetworkError(f"bus {self.id}: unknown kind {self.kind!r}")
        if not self.voltage_magnitude > 0:
            raise NetworkError(f"bus {self.id}: voltage magnitude must be positive")


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    series_impedance: complex
    shunt_susceptance: float = 0.0
    tap_ratio: float = 1.0

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise NetworkError(f"branch {self.from_bus}-{self.to_bus}: from and to bus coincide")
        if self.series_impedance == 0:
            raise NetworkError(f"branch {self.from_bus}-{self.to_bus}: zero series impedance")
        if not self.tap_ratio > 0:
            raise NetworkError(f"branch {self.from_bus}-{self.to_bus}: tap ratio must be positive")


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 100.0
    f_nominal: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        bus_index(self.buses)
        n_slack = sum(b.kind == "slack" for b in self.buses)
        if n_slack != 1:
            raise NetworkError(f"exactly one slack bus required, found {n_slack}")

    @property
    def index(self) -> dict[int, int]:
        return bus_index(self.buses)

    def with_bus(self, bus_id: int, **changes) -> "Network":
        """Copy of the network with fields of one bus replaced."""
        idx = self.index[bus_id]
        buses = list(self.buses)
        buses[idx] = replace(buses[idx], **changes)
        return replace(self, buses=tuple(buses))


@dataclass(frozen=True)
class PowerFlowSolution:
    bus_ids: tuple[int, ...]
    voltage: np.ndarray
    injection: np.ndarray
    iterations: int
    max_mismatch: float

    def at(self, bus_id: int) -> tuple[complex, complex]:
        """(complex voltage, complex net injection) at one bus."""
        i = self.bus_ids.index(bus_id)
        return complex(self.voltage[i]), complex(self.injection[i])


def bus_index(buses) -> dict[int, int]:
    index = {}
    for i, b in enumerate(buses):
        if b.id in index:
            raise NetworkError(f"duplicate bus id {b.id}")
        index[b.id] = i
    return index


def build_ybus(buses, branches) -> np.ndarray:
    """Dense nodal admittance matrix of the branch network (loads excluded).

    Off-nominal taps sit on the from side, ideal transformer ratio ``tap:1``.
    """
    index = bus_index(buses)
    n = len(index)
    Y = np.zeros((n, n), dtype=complex)
    for br in branches:
        try:
            f, t = index[br.from_bus], index[br.to_bus]
        except KeyError as exc:
            raise NetworkError(f"branch {br.from_bus}-{br.to_bus} references unknown bus {exc.args[0]}") from None
        y = 1.0 / br.series_impedance
        ysh = 0.5j * br.shunt_susceptance
        a = br.tap_ratio
        Y[f, f] += (y + ysh) / a**2
        Y[t, t] += y + ysh
        Y[f, t] -= y / a
        Y[t, f] -= y / a
    return Y


def _mismatch(V, Y, s_spec, pv, pq):
    s_calc = V * np.conj(Y @ V)
    ds = s_calc - s_spec
    return np.concatenate([ds.real[pv], ds.real[pq], ds.imag[pq]]), s_calc


def solve_power_flow(network: Network, tolerance: float = 1e-10, max_iter: int = 10) -> PowerFlowSolution:
    """Polar Newton-Raphson from a flat start (PV magnitudes held at their setpoints)."""
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    buses = network.buses
    Y = build_ybus(buses, network.branches)
    kinds = np.array([b.kind for b in buses])
    slack = np.flatnonzero(kinds == "slack")
    pv = np.flatnonzero(kinds == "pv")
    pq = np.flatnonzero(kinds == "pq")
    pvpq = np.concatenate([pv, pq])

    vm = np.ones(len(buses))
    va = np.zeros(len(buses))
    for i in np.concatenate([slack, pv]):
        vm[i] = buses[i].voltage_magnitude
    va[slack] = buses[slack[0]].voltage_angle
    s_spec = np.array([complex(b.p_gen_setpoint - b.p_load, b.q_gen - b.q_load) for b in buses])

    V = vm * np.exp(1j * va)
    F, _ = _mismatch(V, Y, s_spec, pv, pq)
    err = np.max(np.abs(F)) if F.size else 0.0
    it = 0
    npv, npq = len(pv), len(pq)
    while err > tolerance:
        if it >= max_iter:
            raise PowerFlowError(f"no convergence in {max_iter} iterations (mismatch {err:.3e})")
        it += 1
        I = Y @ V
        dS_dva = 1j * np.diag(V) @ np.conj(np.diag(I) - Y @ np.diag(V))
        dS_dvm = np.diag(V) @ np.conj(Y @ np.diag(V / np.abs(V))) + np.conj(np.diag(I)) @ np.diag(V / np.abs(V))
        J = np.block([
            [dS_dva.real[np.ix_(pvpq, pvpq)], dS_dvm.real[np.ix_(pvpq, pq)]],
            [dS_dva.imag[np.ix_(pq, pvpq)], dS_dvm.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            raise PowerFlowError(f"singular Jacobian at iteration {it}") from None
        va[pvpq] += dx[: npv + npq]
        vm[pq] += dx[npv + npq:]
        if not np.all(np.isfinite(vm)) or np.any(vm <= 0):
            raise PowerFlowError(f"voltage collapse at iteration {it}")
        V = vm * np.exp(1j * va)
        F, _ = _mismatch(V, Y, s_spec, pv, pq)
        err = np.max(np.abs(F)) if F.size else 0.0
        if not np.isfinite(err):
            raise PowerFlowError(f"diverged at iteration {it}")
    injection = V * np.conj(Y @ V)
    return PowerFlowSolution(tuple(b.id for b in buses), V, injection, it, float(err))


def load_to_admittance(p_load: float, q_load: float, v_solved) -> complex:
    """Constant-impedance equivalent of a (p, q) load drawn at voltage ``v_solved``."""
    vmag = abs(v_solved)
    if vmag == 0:
        raise ValueError("zero voltage")
    return complex(p_load, -q_load) / vmag**2


# ----------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class LoadStep:
    bus: int
    fraction: float
    t: float = 0.0


@dataclass(frozen=True)
class GeneratorTrip:
    unit: int
    t: float = 0.0


@dataclass(frozen=True)
class NetworkState:
    """Time-varying part of the grid: per-bus load admittances and unit status."""

    bus_ids: tuple[int, ...]
    load_admittance: np.ndarray
    online: tuple[bool, ...] = ()
    freq_sensitivity: float = 0.0

    def load_at(self, bus_id: int) -> complex:
        return complex(self.load_admittance[self.bus_ids.index(bus_id)])


def initial_network_state(network: Network, pf: PowerFlowSolution, n_units: int,
                          freq_sensitivity: float = 0.0) -> NetworkState:
    y = np.array([load_to_admittance(b.p_load, b.q_load, v) if (b.p_load or b.q_load) else 0j
                  for b, v in zip(network.buses, pf.voltage)])
    return NetworkState(pf.bus_ids, y, (True,) * n_units, freq_sensitivity)


def apply_event(state: NetworkState, event) -> NetworkState:
    if isinstance(event, LoadStep):
        if event.bus not in state.bus_ids:
            raise NetworkError(f"load step on unknown bus {event.bus}")
        y = state.load_admittance.copy()
        y[state.bus_ids.index(event.bus)] *= 1.0 + event.fraction
        return replace(state, load_admittance=y)
    if isinstance(event, GeneratorTrip):
        if not 0 <= event.unit < len(state.online):
            raise NetworkError(f"trip of unknown unit {event.unit}")
        online = list(state.online)
        online[event.unit] = False
        return replace(state, online=tuple(online))
    raise TypeError(f"unsupported event {event!r}")


# ----------------------------------------------------------------------------
# case file


@dataclass
class Case:
    network: Network
    generators: list[dict] = field(default_factory=list)
    windfarm: dict = field(default_factory=dict)
    source: str = ""


_BUS_COLS = ("id", "kind", "vm", "va_deg", "p_load", "q_load", "p_gen", "q_gen")
_BRANCH_COLS = ("from", "to", "r", "x", "b", "tap")
_GEN_COLS = ("bus", "H", "Xd", "Xd_t", "Xq", "Tdo_t", "mva", "pmax")
_SECTIONS = {"bus", "branch", "generator", "windfarm"}


def _num(tok, lineno):
    try:
        return float(tok)
    except ValueError:
        raise CaseFileError(f"line {lineno}: expected a number, got {tok!r}") from None


def parse_case(text: str, source: str = "<string>") -> Case:
    """Parse the sectioned case format (``[bus]``, ``[branch]``, ``[generator]``, ``[windfarm]``)."""
    header: dict[str, float] = {}
    buses, branches, gens, farm = [], [], [], {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            name = line.strip("[]").strip().lower()
            if not line.endswith("]") or name not in _SECTIONS:
                raise CaseFileError(f"line {lineno}: bad section header {raw.strip()!r}")
            section = name
            continue
        if "=" in line and section in (None, "windfarm"):
            key, _, val = (s.strip() for s in line.partition("="))
            (header if section is None else farm)[key] = _num(val, lineno)
            continue
        toks = line.split()
        if section == "bus":
            if len(toks) != len(_BUS_COLS):
                raise CaseFileError(f"line {lineno}: bus record needs {len(_BUS_COLS)} fields")
            vals = [_num(t, lineno) for i, t in enumerate(toks) if i != 1]
            try:
                buses.append(Bus(int(vals[0]), toks[1].lower(), vals[1], np.deg2rad(vals[2]),
                                 vals[3], vals[4], vals[5], vals[6]))
            except NetworkError as exc:
                raise CaseFileError(f"line {lineno}: {exc}") from None
        elif section == "branch":
            if len(toks) != len(_BRANCH_COLS):
                raise CaseFileError(f"line {lineno}: branch record needs {len(_BRANCH_COLS)} fields")
            f, t, r, x, b, tap = (_num(s, lineno) for s in toks)
            try:
                branches.append(Branch(int(f), int(t), complex(r, x), b, tap))
            except NetworkError as exc:
                raise CaseFileError(f"line {lineno}: {exc}") from None
        elif section == "generator":
            if len(toks) != len(_GEN_COLS):
                raise CaseFileError(f"line {lineno}: generator record needs {len(_GEN_COLS)} fields")
            rec = dict(zip(_GEN_COLS, (_num(s, lineno) for s in toks)))
            rec["bus"] = int(rec["bus"])
            gens.append(rec)
        else:
            raise CaseFileError(f"line {lineno}: record outside a known section")
    try:
        net = Network(tuple(buses), tuple(branches), header.get("base_mva", 100.0), header.get("f_nominal", 60.0))
        build_ybus(net.buses, net.branches)
    except NetworkError as exc:
        raise CaseFileError(f"{source}: {exc}") from None
    return Case(net, gens, farm, source)


def read_case(path) -> Case:
    path = Path(path)
    return parse_case(path.read_text(), str(path))


def default_case_path() -> Path:
    return Path(__file__).parent / "data" / "wscc9.case"
