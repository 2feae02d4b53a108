"""Dataset sweep -> training -> none/inertial/coordinated comparison, for alpha in {0.5, 1, 2}.

    python3 scripts/run_pipeline.py --out runs/pipeline [--seed 0] [--epochs 500]
"""
import argparse
import time
from pathlib import Path

from freqcoord.cli import load_scenario, run_pipeline

HERE = Path(__file__).parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scenario", default=str(HERE / "scenarios" / "wscc9_load_step.json"))
    ap.add_argument("--out", default="runs/pipeline")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.5, 1.0, 2.0])
    args = ap.parse_args()
    t0 = time.perf_counter()
    run_pipeline(load_scenario(args.scenario), Path(args.out), args.seed, tuple(args.alphas), args.epochs)
    print(f"pipeline finished in {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
