"""Recompute the independent oracle values and freeze them to tests/data/oracles.json."""
import cmath
import json
import random
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]

sys.path.insert(0, str(ROOT / "tests"))
import oracles  # noqa: E402

BR = [(1, 4, 0.0, 0.0576, 0.0, 0), (4, 5, 0.010, 0.085, 0.176, 0), (5, 7, 0.032, 0.161, 0.306, 0),
      (4, 6, 0.017, 0.092, 0.158, 0), (6, 9, 0.039, 0.170, 0.358, 0), (7, 8, 0.0085, 0.072, 0.149, 0),
      (3, 9, 0.0, 0.0586, 0.0, 0), (8, 9, 0.0119, 0.1008, 0.209, 0), (2, 7, 0.0, 0.0625, 0.0, 0)]


def wscc_powerflow(p_wind=0.14):
    Y = oracles.ybus_loops(9, [(i - 1, j - 1, r, x, b, t) for i, j, r, x, b, t in BR])
    kinds = ["slack", "pv", "pv", "pq", "pq", "pq", "pq", "pq", "pq"]
    vm = [1.04, 1.025, 1.025] + [1.0] * 6
    p = [0, 1.63, 0.85, 0, -1.25, -0.9, 0, -1.0 + p_wind, 0]
    q = [0, 0, 0, 0, -0.5, -0.3, 0, -0.35, 0]
    V = oracles.gauss_seidel(Y, kinds, vm, p, q)
    return V


def main():
    out = {}
    V = wscc_powerflow()
    out["wscc_wind_vm"] = [abs(v) for v in V]
    out["wscc_wind_va"] = [cmath.phase(v) for v in V]
    V0 = wscc_powerflow(0.0)
    out["wscc_base_vm"] = [abs(v) for v in V0]
    out["wscc_base_va"] = [cmath.phase(v) for v in V0]
    out["washout_step"] = {str(t): oracles.washout_step(10.0, 5.0, -0.1 / 60, t) for t in (0.5, 1.0, 2.0, 5.0)}
    out["mppt"] = oracles.mppt_calibration()
    rng = random.Random(7)
    xs = [rng.uniform(-2, 2) for _ in range(200)]
    ys = [0.7 * x - 0.3 + rng.gauss(0, 0.4) for x in xs]
    out["pearson"] = {"x": xs, "y": ys, "r": oracles.pearson(xs, ys)}
    W1 = [[rng.uniform(-1, 1) for _ in range(4)] for _ in range(3)]
    b1 = [rng.uniform(-1, 1) for _ in range(3)]
    W2 = [[rng.uniform(-1, 1) for _ in range(3)] for _ in range(2)]
    b2 = [rng.uniform(-1, 1) for _ in range(2)]
    xs4 = [[rng.uniform(-1, 1) for _ in range(4)] for _ in range(5)]
    out["mlp"] = {"W1": W1, "b1": b1, "W2": W2, "b2": b2, "x": xs4,
                  "y": [oracles.mlp_loops(W1, b1, W2, b2, x) for x in xs4]}
    P = [[rng.uniform(-1, 1) for _ in range(3)] for _ in range(6)]
    T = [[rng.uniform(-1, 1) for _ in range(3)] for _ in range(6)]
    out["mse"] = {"p": P, "t": T, "c": oracles.mse_loops(P, T)}
    out["smib_period"] = oracles.smib_period(3.0, 0.5, 1.1, 1.0, 0.4)
    path = ROOT / "tests" / "data" / "oracles.json"
    path.write_text(json.dumps(out, indent=1) + "\n")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
