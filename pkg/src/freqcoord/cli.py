"""Command-line front end: power flow, simulation, dataset generation, training, comparison.

Exit codes: 0 success, 1 numerical failure, 2 configuration or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import coordnet as cn
from . import machines as mc
from . import sim
from . import windfarm as wf
from .netmodel import (CaseFileError, GeneratorTrip, LoadStep, NetworkError, PowerFlowError, default_case_path,
                       read_case)
from .svgplot import write_chart

REFERENCE_NADIR_IMPROVEMENT_PCT = 22.0
REFERENCE_ROCOF_IMPROVEMENT_PCT = 29.5
REFERENCE_ROCOF_BASE = -0.0567
REFERENCE_ROCOF_COORD = -0.04


class ConfigError(ValueError):
    pass


DEFAULT_SCENARIO = {
    "case": None,
    "preset": "standard",
    "v_wind": None,
    "freq_sensitivity": 0.0,
    "overrides": {},
    "events": [{"type": "load_step", "bus": 8, "fraction": 0.1, "t": 1.0}],
    "sim": {"dt": 0.001, "t_end": 60.0, "integrator": "trapezoidal", "record_every": 1},
    "controller_mode": "inertial",
    "weights": None,
    "dataset": {"fractions": [0.05, 0.10, 0.15], "alpha": 1.0, "n_samples": 50000},
    "train": {"learning_rate": 0.01, "batch_size": 64, "max_epochs": 500, "early_stop_patience": 50,
              "n_hidden": 10},
}


@dataclass
class Scenario:
    case_path: Path
    preset: str
    v_wind: float | None
    freq_sensitivity: float
    overrides: dict
    events: tuple
    sim: dict
    controller_mode: str
    weights: Path | None
    dataset: dict
    train: dict
    base_dir: Path

    def grid(self) -> sim.Grid:
        ov = self.overrides
        washout = wf.WashoutParams(**ov.get("washout", {}))
        dfig = None
        if "dfig" in ov:
            dfig = replace(wf.DFIG_PRESETS[mc.preset_name(self.preset)], **ov["dfig"])
        return sim.build_grid(read_case(self.case_path), self.preset, self.v_wind, washout, dfig,
                              self.freq_sensitivity, governor=ov.get("governor"), exciter=ov.get("exciter"))

    def sim_config(self, mode: str | None = None, coordination=None) -> sim.SimConfig:
        return sim.SimConfig(events=self.events, controller_mode=mode or self.controller_mode,
                             coordination=coordination, **self.sim)

    @property
    def t_event(self) -> float:
        return self.events[0].t if self.events else 0.0


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _parse_event(d: dict):
    kind = d.get("type")
    if kind == "load_step":
        return LoadStep(int(d["bus"]), float(d["fraction"]), float(d.get("t", 0.0)))
    if kind == "generator_trip":
        return GeneratorTrip(int(d["unit"]), float(d.get("t", 0.0)))
    raise ConfigError(f"unknown event type {kind!r}")


def load_scenario(path: str | None = None, preset: str | None = None) -> Scenario:
    """Layer a JSON scenario file (optional) over the built-in defaults."""
    raw = DEFAULT_SCENARIO
    base_dir = Path.cwd()
    if path is not None:
        p = Path(path)
        try:
            user = json.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigError(f"scenario file not found: {p}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{p}: top level must be an object")
        unknown = set(user) - set(DEFAULT_SCENARIO)
        if unknown:
            raise ConfigError(f"{p}: unknown keys {sorted(unknown)}")
        raw = _merge(DEFAULT_SCENARIO, user)
        base_dir = p.resolve().parent
    if preset is not None:
        raw = dict(raw, preset=preset)
    try:
        mc.preset_name(raw["preset"])
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None

    def resolve(v):
        if v is None:
            return None
        q = Path(v)
        return q if q.is_absolute() else base_dir / q

    case_path = resolve(raw["case"]) or default_case_path()
    if not case_path.exists():
        raise ConfigError(f"case file not found: {case_path}")
    try:
        events = tuple(sorted((_parse_event(e) for e in raw["events"]), key=lambda e: e.t))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad event entry: {exc}") from None
    return Scenario(case_path, raw["preset"], raw["v_wind"], float(raw["freq_sensitivity"]), raw["overrides"],
                    events, dict(raw["sim"]), raw["controller_mode"], resolve(raw["weights"]),
                    dict(raw["dataset"]), dict(raw["train"]), base_dir)


# ----------------------------------------------------------------------------
# outputs


def _write_csv(path: Path, header, rows) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    os.replace(tmp, path)


def write_metrics(path: Path, metrics: dict) -> None:
    """One row per mode."""
    keys = list(next(iter(metrics.values())).as_row())
    _write_csv(path, ["mode"] + keys, [[mode] + [m.as_row()[k] for k in keys] for mode, m in metrics.items()])


def frequency_chart(path: Path, trace: sim.SimTrace, title: str) -> None:
    series = {c.replace("f_", "").replace("_hz", "").upper(): (trace.t, trace[c])
              for c in trace.columns if c.startswith("f_sg")}
    series["COI"] = (trace.t, trace["f_coi_hz"])
    write_chart(path, series, title, "time (s)", "frequency (Hz)")


@dataclass
class ComparisonReport:
    metrics: dict
    nadir_improvement_pct: float
    rocof_improvement_pct: float
    area_improvement_pct: float
    uc_final: float
    f_nominal: float = 60.0
    baseline: str = "inertial"

    def rows(self):
        yield ["nadir_deviation", self.nadir_improvement_pct, REFERENCE_NADIR_IMPROVEMENT_PCT]
        yield ["rocof", self.rocof_improvement_pct, REFERENCE_ROCOF_IMPROVEMENT_PCT]
        yield ["area_s", self.area_improvement_pct, float("nan")]
        yield ["uc_final_pu", self.uc_final, float("nan")]


def improvements(base: sim.Metrics, new: sim.Metrics, f_nominal: float):
    """Percent improvements of ``new`` over ``base``: nadir deviation, |RoCoF| and area S."""
    dev = f_nominal - base.f_nadir
    nadir = 100.0 * ((f_nominal - base.f_nadir) - (f_nominal - new.f_nadir)) / abs(dev) if dev else 0.0
    rocof = 100.0 * (abs(base.rocof) - abs(new.rocof)) / abs(base.rocof) if base.rocof else 0.0
    area = 100.0 * (base.area_s - new.area_s) / base.area_s if base.area_s else 0.0
    return nadir, rocof, area


def run_comparison(sc: Scenario, mlp: cn.Mlp, grid: sim.Grid | None = None):
    """Simulate none / inertial / coordinated back to back."""
    grid = grid or sc.grid()
    traces, metrics = {}, {}
    for mode in sim.MODES:
        tr = sim.run_scenario(grid, sc.sim_config(mode, mlp if mode == "coordinated" else None))
        traces[mode] = tr
        metrics[mode] = sim.compute_metrics(tr, sc.t_event)
    f0 = grid.network.f_nominal
    nad, roc, area = improvements(metrics["inertial"], metrics["coordinated"], f0)
    return ComparisonReport(metrics, nad, roc, area, float(traces["coordinated"]["uc_pu"][-1]), f0), traces


# ----------------------------------------------------------------------------
# commands


def _out(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def cmd_powerflow(args) -> int:
    sc = load_scenario(args.scenario, args.preset)
    grid = sc.grid()
    pf = grid.pf
    out = _out(args)
    print(f"converged in {pf.iterations} iterations, max mismatch {pf.max_mismatch:.3e} pu")
    print(f"{'bus':>4} {'|V| pu':>9} {'angle deg':>10} {'P inj MW':>10} {'Q inj Mvar':>11}")
    rows = []
    base = grid.network.base_mva
    for bid, v, s in zip(pf.bus_ids, pf.voltage, pf.injection):
        ang = math.degrees(np.angle(v))
        print(f"{bid:>4} {abs(v):9.5f} {ang:10.4f} {s.real * base:10.3f} {s.imag * base:11.3f}")
        rows.append([bid, float(abs(v)), float(ang), float(s.real * base), float(s.imag * base)])
    _write_csv(out / "powerflow.csv", ["bus", "vm_pu", "va_deg", "p_inj_mw", "q_inj_mvar"], rows)
    return 0


def _load_mlp(sc: Scenario, args) -> cn.Mlp:
    path = Path(args.weights) if getattr(args, "weights", None) else sc.weights
    if path is None:
        raise ConfigError("coordinated mode needs a weights file (--weights or scenario 'weights')")
    if not path.exists():
        raise ConfigError(f"weights file not found: {path}")
    return cn.load_weights(path)


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario, args.preset)
    mode = args.mode or sc.controller_mode
    mlp = _load_mlp(sc, args) if mode == "coordinated" else None
    grid = sc.grid()
    out = _out(args)
    tr = sim.run_scenario(grid, sc.sim_config(mode, mlp))
    m = sim.compute_metrics(tr, sc.t_event)
    tr.to_csv(out / f"trace_{mode}.csv")
    write_metrics(out / f"metrics_{mode}.csv", {mode: m})
    frequency_chart(out / f"frequency_{mode}.svg", tr, f"Generator frequencies ({mode})")
    print(f"mode={mode} nadir={m.f_nadir:.5f} Hz at {m.t_nadir:.3f} s  rocof={m.rocof:.5f} Hz/s  "
          f"f_ss={m.f_ss:.5f} Hz  S={m.area_s:.5f} Hz*s  (window {m.rocof_window} s)")
    return 0


def dataset_traces(sc: Scenario, grid: sim.Grid | None = None):
    """Inertial-mode runs over the configured sweep of load-step sizes."""
    grid = grid or sc.grid()
    if not sc.events or not isinstance(sc.events[0], LoadStep):
        raise ConfigError("dataset sweep needs a load-step event to scale")
    ev = sc.events[0]
    traces = []
    for frac in sc.dataset["fractions"]:
        events = (LoadStep(ev.bus, float(frac), ev.t),) + sc.events[1:]
        cfg = sim.SimConfig(events=events, controller_mode="inertial", **sc.sim)
        traces.append(sim.run_scenario(grid, cfg))
    return traces


def cmd_gen_dataset(args) -> int:
    sc = load_scenario(args.scenario, args.preset)
    alpha = sc.dataset["alpha"] if args.alpha is None else args.alpha
    n = sc.dataset["n_samples"] if args.n_samples is None else args.n_samples
    if n < 1:
        raise ConfigError("n_samples must be positive")
    out = _out(args)
    ds = cn.generate_dataset(dataset_traces(sc), alpha, n)
    cn.write_dataset(ds, out / "dataset.csv")
    print(f"wrote {len(ds)} samples (alpha={alpha}) to {out / 'dataset.csv'}")
    return 0


def train_config(sc: Scenario, args) -> cn.TrainConfig:
    t = dict(sc.train)
    if getattr(args, "epochs", None) is not None:
        t["max_epochs"] = args.epochs
    names = {f.name for f in fields(cn.TrainConfig)}
    unknown = set(t) - names
    if unknown:
        raise ConfigError(f"unknown training keys {sorted(unknown)}")
    t["rng_seed"] = args.seed
    if "split_ratios" in t:
        t["split_ratios"] = tuple(t["split_ratios"])
    return cn.TrainConfig(**t)


def train_and_save(ds: cn.Dataset, cfg: cn.TrainConfig, out: Path):
    mlp0 = cn.init_mlp(ds.inputs.shape[1], cfg.n_hidden, ds.targets.shape[1], cfg.rng_seed)
    mlp, rep = cn.train(mlp0, ds, cfg)
    cn.save_weights(mlp, out / "weights.json")
    _write_csv(out / "train_report.csv", ["epoch", "train_mse", "val_mse", "test_mse"],
               [[r["epoch"], r["train_mse"], r["val_mse"], r["test_mse"]] for r in rep.rows()])
    _write_csv(out / "train_summary.csv", ["quantity", "value"],
               [["best_epoch", rep.best_epoch], ["r_train", rep.r_train], ["r_val", rep.r_val],
                ["r_test", rep.r_test], ["r_all", rep.r_all]] + [[k, v] for k, v in rep.final.items()])
    ep = np.arange(len(rep.train_mse))
    write_chart(out / "mse.svg", {"train": (ep, rep.train_mse), "validation": (ep, rep.val_mse),
                                  "test": (ep, rep.test_mse)},
                f"MSE per epoch (best {rep.best_epoch})", "epoch", "log10 MSE", log_y=True)
    pred = cn.mlp_forward(mlp, ds.inputs)[:, 0]
    write_chart(out / "regression.svg", {f"all, R={rep.r_all:.5f}": (ds.targets[:, 0], pred),
                                         "y = x": (ds.targets[:, 0], ds.targets[:, 0])},
                "Regression: output vs target", "target", "output", markers=True)
    return mlp, rep


def cmd_train(args) -> int:
    sc = load_scenario(args.scenario, args.preset)
    out = _out(args)
    path = Path(args.dataset) if args.dataset else out / "dataset.csv"
    if not path.exists():
        raise ConfigError(f"dataset not found: {path}")
    try:
        ds = cn.read_dataset(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _, rep = train_and_save(ds, train_config(sc, args), out)
    print(f"best epoch {rep.best_epoch}: test MSE {rep.final['test_mse']:.3e}, "
          f"R train/val/test/all = {rep.r_train:.5f}/{rep.r_val:.5f}/{rep.r_test:.5f}/{rep.r_all:.5f}")
    return 0


def write_comparison(out: Path, rep: ComparisonReport, traces) -> None:
    write_metrics(out / "metrics.csv", rep.metrics)
    _write_csv(out / "comparison.csv", ["quantity", "improvement_pct_vs_inertial", "reference_pct"],
               list(rep.rows()))
    series = {mode: (tr.t, tr["f_coi_hz"]) for mode, tr in traces.items()}
    write_chart(out / "compare_frequency.svg", series, "COI frequency", "time (s)", "frequency (Hz)")
    tc = traces["coordinated"]
    write_chart(out / "uc.svg", {"u_c": (tc.t, tc["uc_pu"])}, "Coordination signal", "time (s)", "u_c (pu)")
    for mode, tr in traces.items():
        tr.to_csv(out / f"trace_{mode}.csv")


def cmd_compare(args) -> int:
    sc = load_scenario(args.scenario, args.preset)
    mlp = _load_mlp(sc, args)
    out = _out(args)
    rep, traces = run_comparison(sc, mlp)
    write_comparison(out, rep, traces)
    print(format_report(rep))
    return 0


def format_report(rep: ComparisonReport) -> str:
    lines = [f"{'mode':<12} {'nadir Hz':>10} {'t_nadir s':>10} {'RoCoF Hz/s':>11} {'f_ss Hz':>10} {'S Hz*s':>9}"]
    for mode, m in rep.metrics.items():
        lines.append(f"{mode:<12} {m.f_nadir:10.5f} {m.t_nadir:10.3f} {m.rocof:11.5f} {m.f_ss:10.5f} {m.area_s:9.5f}")
    lines.append(f"coordinated vs inertial: nadir deviation {rep.nadir_improvement_pct:+.1f}% "
                 f"(reference {REFERENCE_NADIR_IMPROVEMENT_PCT}%), |RoCoF| {rep.rocof_improvement_pct:+.1f}% "
                 f"(reference {REFERENCE_ROCOF_IMPROVEMENT_PCT}%), area S {rep.area_improvement_pct:+.1f}%, "
                 f"u_c(t_end) = {rep.uc_final:.2e} pu")
    return "\n".join(lines)


@dataclass
class SweepResult:
    alpha: float
    mlp: cn.Mlp
    report: cn.TrainReport
    comparison: ComparisonReport
    traces: dict


def select_alpha(results) -> SweepResult:
    """Lowest validation MSE in target units; ties go to the smaller alpha.

    Scaled-space errors are identical across alpha (min-max scaling removes
    the gain), so the comparison is made on unscaled outputs.
    """
    return min(results, key=lambda r: (r.report.final["val_mse"], r.alpha))


def run_pipeline(sc: Scenario, out: Path, seed: int = 0, alphas=(0.5, 1.0, 2.0), epochs: int | None = None,
                 log=print) -> SweepResult:
    """Dataset sweep, training and comparison for each alpha; writes the selected run to ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    grid = sc.grid()
    traces = dataset_traces(sc, grid)
    n = sc.dataset["n_samples"]
    cfg = train_config(sc, argparse.Namespace(epochs=epochs, seed=seed))
    results = []
    for alpha in alphas:
        sub = out / f"alpha_{alpha:g}"
        sub.mkdir(exist_ok=True)
        ds = cn.generate_dataset(traces, alpha, n)
        cn.write_dataset(ds, sub / "dataset.csv")
        mlp, rep = train_and_save(ds, cfg, sub)
        comp, tr = run_comparison(sc, mlp, grid)
        write_comparison(sub, comp, tr)
        log(f"alpha={alpha:g}: best epoch {rep.best_epoch}, R_all {rep.r_all:.5f}")
        log(format_report(comp))
        results.append(SweepResult(alpha, mlp, rep, comp, tr))
    best = select_alpha(results)
    cn.save_weights(best.mlp, out / "weights.json")
    write_comparison(out, best.comparison, best.traces)
    _write_csv(out / "alpha_sweep.csv", ["alpha", "nadir_pct", "rocof_pct", "area_pct", "uc_final_pu", "selected"],
               [[r.alpha, r.comparison.nadir_improvement_pct, r.comparison.rocof_improvement_pct,
                 r.comparison.area_improvement_pct, r.comparison.uc_final, int(r is best)] for r in results])
    log(f"selected alpha = {best.alpha:g}")
    return best


# ----------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    def global_flags(parser, suppress):
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        parser.add_argument("--scenario", default=d(None), help="JSON scenario file layered over the defaults")
        parser.add_argument("--out", default=d("out"), help="output directory (default: out)")
        parser.add_argument("--seed", type=int, default=d(0), help="training / split seed")
        parser.add_argument("--preset", default=d(None),
                            help="parameter preset: standard, paper (aliases standard-wscc, paper-appendix)")

    # flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, suppress=True)
    p = argparse.ArgumentParser(prog="freqcoord", description=__doc__.splitlines()[0])
    global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("powerflow", parents=[common], help="solve and print the load flow")
    s = sub.add_parser("simulate", parents=[common], help="run one scenario and write trace/metrics/plot")
    s.add_argument("--mode", choices=sim.MODES)
    s.add_argument("--weights")
    g = sub.add_parser("gen-dataset", parents=[common], help="inertial sweep -> training dataset CSV")
    g.add_argument("--alpha", type=float)
    g.add_argument("--n-samples", type=int, dest="n_samples")
    t = sub.add_parser("train", parents=[common], help="train the coordination network")
    t.add_argument("--dataset")
    t.add_argument("--epochs", type=int)
    c = sub.add_parser("compare", parents=[common], help="none / inertial / coordinated comparison")
    c.add_argument("--weights")
    return p


COMMANDS = {"powerflow": cmd_powerflow, "simulate": cmd_simulate, "gen-dataset": cmd_gen_dataset,
            "train": cmd_train, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (PowerFlowError, sim.SimulationError, cn.TrainingDiverged, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, CaseFileError, NetworkError, cn.WeightsFileError, mc.MachineInitError, wf.DfigInitError,
            ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
