"""Command-line front end.

    crodobo run --config run.yaml [--out DIR] [--seeds 0,1,2] [--save-model F] [--load-model F]
    crodobo sweep --config run.yaml --param tau --values 0.5,0.6,0.7
    crodobo ablate --config run.yaml
    crodobo gradcheck [--instances 20] [--eps 1e-5]
    crodobo gen-data (--config run.yaml | --generator blobs --set c=3 --set d=2) --out DIR

Exit codes: 0 success, 1 configuration/input error, 2 runtime contract violation.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from crodobo import gradcheck as GC
from crodobo import runner
from crodobo.config import DEFAULT_BENCHMARK, ConfigError, RunConfig
from crodobo.data import BurnedError, DataError, save_csv, write_matrix
from crodobo.engine import EngineError
from crodobo.losses import LossError
from crodobo.metrics import MetricsError
from crodobo.net import NetworkError

log = logging.getLogger("crodobo")

CONFIG_ERROR = 1
CONTRACT_ERROR = 2


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _load(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "distinct_init", False):
        cfg = cfg.with_overrides(**{"hyperparams.distinct_init": True})
    return cfg


def _print_table(header, rows):
    def fmt(v):
        return f"{v:.4f}" if isinstance(v, float) else str(v)
    cells = [[str(h) for h in header]] + [[fmt(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    for r in cells:
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)))


def cmd_run(args) -> int:
    cfg = _load(args)
    seeds = runner.stream_seeds_of(cfg, _int_list(args.seeds) if args.seeds else None)
    results = runner.run_battery(cfg, seeds, cfg.output_dir, save_model=args.save_model,
                                 load_model=args.load_model)
    for r in results:
        print(f"stream {r.stream_seed}: online {100 * r.report.online_average:.2f}  "
              f"one-pass {100 * r.report.one_pass_overall:.2f}  "
              f"(class avg {100 * r.report.one_pass_class_average:.2f})  "
              f"trace {r.manifest['trace_sha256'][:12]}")
    print(f"artifacts in {cfg.output_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if args.param not in runner.SWEEP_PARAMS:
        print(f"error: unknown sweep parameter {args.param!r}; expected one of "
              f"{sorted(runner.SWEEP_PARAMS)}", file=sys.stderr)
        return CONFIG_ERROR
    values = [v for v in (args.values or "").split(",") if v.strip()]
    if not values:
        print("warning: empty value list, nothing to sweep", file=sys.stderr)
        return 0
    try:
        cast = runner.SWEEP_PARAMS[args.param][1]
        values = [cast(v) for v in values]
    except ValueError as e:
        print(f"error: bad sweep value: {e}", file=sys.stderr)
        return CONFIG_ERROR
    seeds = _int_list(args.seeds) if args.seeds else None
    header, rows = runner.sweep(cfg, args.param, values, cfg.output_dir, seeds)
    _print_table(header, rows)
    print(f"table written to {Path(cfg.output_dir) / f'sweep_{args.param}.csv'}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load(args)
    seeds = _int_list(args.seeds) if args.seeds else None
    header, rows = runner.ablate(cfg, cfg.output_dir, seeds, args.continual_warmup)
    _print_table(header, rows)
    return 0


def cmd_gradcheck(args) -> int:
    tol = GC.tolerance_for(args.eps)
    print(f"central differences, step {args.eps:g}, {args.instances} instances per loss")
    if args.eps > GC.DEFAULT_STEP:
        print(f"tolerance loosened to {tol:.0e} for step {args.eps:g} "
              f"(default {GC.DEFAULT_TOL:.0e} at step {GC.DEFAULT_STEP:g})")
    else:
        print(f"tolerance {tol:.0e}")
    errors = GC.run_all(args.instances, args.eps)
    ok = True
    print(f"{'loss':10s}  {'max rel error':>14s}  status")
    for loss, e in errors.items():
        passed = e < tol
        ok &= passed
        print(f"{loss:10s}  {e:14.3e}  {'ok' if passed else 'FAIL'}")
    return 0 if ok else 1


def cmd_gen_data(args) -> int:
    if args.config:
        cfg = RunConfig.load(args.config)
    else:
        params = {}
        for item in args.set or []:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            params[k] = yaml.safe_load(v)
        cfg = RunConfig.from_dict({"dataset": {"generator": args.generator, "params": params}})
    source, target = cfg.load_data()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(out / "source.csv", source)
    save_csv(out / "target.csv", target)
    if args.binary:
        write_matrix(out / "source.bin", source.features)
        write_matrix(out / "target.bin", target.features)
    print(f"wrote {len(source)} source and {len(target)} target rows to {out}")
    return 0


def cmd_default_config(args) -> int:
    sys.stdout.write(DEFAULT_BENCHMARK)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crodobo", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="stream the target set once per stream seed")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seeds", help="comma-separated stream seeds (overrides the config)")
    p.add_argument("--distinct-init", action="store_true",
                   help="initialise each learner from its own seed")
    p.add_argument("--save-model")
    p.add_argument("--load-model")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="repeat a run over values of one hyperparameter")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True)
    p.add_argument("--values", default="")
    p.add_argument("--out")
    p.add_argument("--seeds")
    p.add_argument("--distinct-init", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="compare modes and removed loss terms")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seeds")
    p.add_argument("--distinct-init", action="store_true")
    p.add_argument("--continual-warmup", type=int, default=200,
                   help="source warm-up steps for continual mode when the config has none")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--eps", type=float, default=GC.DEFAULT_STEP,
                   help="finite-difference step")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-data", help="write a synthetic dataset pair as CSV")
    p.add_argument("--config")
    p.add_argument("--generator", default="two_moons", choices=["two_moons", "blobs"])
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    p.add_argument("--binary", action="store_true", help="also write raw matrix files")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("default-config", help="print the shipped benchmark config")
    p.set_defaults(func=cmd_default_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return CONFIG_ERROR
    except (BurnedError, EngineError, NetworkError, MetricsError, LossError) as e:
        print(f"contract violation: {type(e).__name__}: {e}", file=sys.stderr)
        return CONTRACT_ERROR


if __name__ == "__main__":
    sys.exit(main())
