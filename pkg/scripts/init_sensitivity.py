"""How much the default benchmark depends on the network initialisation seed.

For each init seed, runs crodobo / single / single w/o entropy / source_only
over the configured stream seeds and prints the mean online accuracy (%).
Self-training on the rotated moons either locks onto the rotated structure or
reinforces the source boundary, and which one happens depends on the start.

    python scripts/init_sensitivity.py --init-seeds 0 1 2 3 4
"""
import argparse
from pathlib import Path

import numpy as np

from crodobo.config import RunConfig
from crodobo.runner import run_battery

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "default_benchmark.yaml"
MODES = {
    "crodobo": {"mode": "crodobo"},
    "single": {"mode": "single"},
    "single w/o ent": {"mode": "single", "hyperparams.use_entropy": False},
    "source_only": {"mode": "source_only"},
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(CONFIG))
    ap.add_argument("--init-seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--distinct-init", action="store_true")
    args = ap.parse_args()
    cfg = RunConfig.load(args.config)
    if args.distinct_init:
        cfg = cfg.with_overrides(**{"hyperparams.distinct_init": True})
    data = cfg.load_data()
    seeds = cfg.stream_seeds or [cfg.seed("stream")]
    table = {name: [] for name in MODES}
    print("init  " + "  ".join(f"{n:>14s}" for n in MODES))
    for s in args.init_seeds:
        row = []
        for name, changes in MODES.items():
            sub = cfg.with_overrides(**{**changes, "seeds.init": s})
            res = run_battery(sub, seeds, data=data)
            v = 100 * float(np.mean([r.report.online_average for r in res]))
            table[name].append(v)
            row.append(v)
        print(f"{s:4d}  " + "  ".join(f"{v:14.2f}" for v in row))
    print("mean  " + "  ".join(f"{np.mean(v):14.2f}" for v in table.values()))


if __name__ == "__main__":
    main()
