"""Ablation battery on the shipped default benchmark (rotated two-moons).

Writes per-mode artifacts and ablation.csv under --out and prints the table.

    python scripts/run_default_benchmark.py --out runs/default_ablation
"""
import argparse
from pathlib import Path

from crodobo.config import RunConfig
from crodobo.runner import ablate

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "default_benchmark.yaml"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(CONFIG))
    ap.add_argument("--out", default="runs/default_ablation")
    args = ap.parse_args()
    cfg = RunConfig.load(args.config)
    header, rows = ablate(cfg, args.out)
    print(f"{header[0]:16s} {'online':>8s} {'one-pass':>9s}")
    for r in rows:
        print(f"{r[0]:16s} {r[1]:8.2f} {r[2]:9.2f}")


if __name__ == "__main__":
    main()
