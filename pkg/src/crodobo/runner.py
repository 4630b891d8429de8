"""Experiment orchestration shared by the CLI, scripts and tests."""
from __future__ import annotations

import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np

import crodobo
from crodobo import metrics as M
from crodobo.config import RunConfig
from crodobo.data import TargetStream
from crodobo.engine import build_ensemble, run_online
from crodobo.net import load_networks, save_networks

log = logging.getLogger(__name__)

# the variance convention is spelled out in every table header
VAR_HEADER = "var (population, 1/n)"

ARTIFACTS = ("manifest.json", "trace.jsonl", "report.json", "report.csv",
             "per_query_accuracy.csv")


@dataclass
class RunResult:
    config: RunConfig
    stream_seed: int
    trace: M.RunTrace
    report: M.MetricsReport
    manifest: dict


def _manifest(cfg: RunConfig, source, target, trace) -> dict:
    return {
        "manifest_version": 1,
        "config": cfg.to_dict(),
        "seeds": dict(cfg.seeds),
        "config_key": cfg.key(),
        "versions": {"crodobo": crodobo.__version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "datasets": {"source_sha256": source.digest(), "target_sha256": target.digest(),
                     "n_source": len(source), "n_target": len(target)},
        "trace_sha256": trace.digest(),
    }


def run_config(cfg: RunConfig, stream_seed: int | None = None, data=None,
               load_model=None, audit_path=None, label="") -> RunResult:
    """One streamed pass over the target set under ``cfg``."""
    if stream_seed is not None:
        cfg = cfg.with_overrides(**{"seeds.stream": int(stream_seed)})
        cfg.stream_seeds = None
    source, target = data if data is not None else cfg.load_data()
    spec = cfg.network_spec(source.dim, source.num_classes)
    hp = cfg.hp()
    ensemble = None
    if load_model is not None:
        nets = load_networks(load_model)
        ensemble = build_ensemble(spec, len(nets), cfg.seed("init"), cfg.seed("augment"),
                                  cfg.adam(), nets=nets)
    stream = TargetStream(target, cfg.query_size, cfg.seed("stream"), audit_path=audit_path)
    trace = run_online(source, stream, hp, spec, cfg.seed("init"),
                       bootstrap_seed=cfg.seed("bootstrap"),
                       augment_seed=cfg.seed("augment"), adam=cfg.adam(),
                       weak_policy=cfg.weak_policy(), strong_policy=cfg.strong_policy(),
                       batch_size=cfg.query_size, ensemble=ensemble)
    report = M.build_report(trace, target, config_key=cfg.key(),
                            label=label or f"stream{cfg.seed('stream')}")
    manifest = _manifest(cfg, source, target, trace)
    trace.manifest = manifest
    return RunResult(cfg, cfg.seed("stream"), trace, report, manifest)


def write_artifacts(out_dir, result: RunResult, save_model=None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(result.manifest, indent=2, sort_keys=True))
    result.trace.write_jsonl(out / "trace.jsonl")
    (out / "report.json").write_text(json.dumps(result.report.to_dict(), indent=2))
    M.write_report_csv(out / "report.csv", [result.report])
    M.write_per_query_csv(out / "per_query_accuracy.csv", result.trace)
    if save_model is not None:
        save_networks(save_model, [l.net for l in result.trace.ensemble.learners])


def stream_seeds_of(cfg: RunConfig, override=None) -> list[int]:
    if override:
        return list(override)
    if cfg.stream_seeds:
        return list(cfg.stream_seeds)
    return [cfg.seed("stream")]


def run_battery(cfg: RunConfig, seeds, out_dir=None, data=None, save_model=None,
                load_model=None) -> list[RunResult]:
    """Run once per stream seed. With several seeds, artifacts go to
    ``out_dir/stream_<seed>/`` and a seed table to ``out_dir/seeds.csv``."""
    data = data if data is not None else cfg.load_data()
    results = []
    for s in seeds:
        sub = None
        if out_dir is not None:
            sub = Path(out_dir) if len(seeds) == 1 else Path(out_dir) / f"stream_{s}"
            sub.mkdir(parents=True, exist_ok=True)
        res = run_config(cfg, s, data=data, load_model=load_model,
                         audit_path=None if sub is None else sub / "audit.jsonl")
        log.info("stream seed %s: online %.4f one-pass %.4f", s,
                 res.report.online_average, res.report.one_pass_overall)
        if sub is not None:
            write_artifacts(sub, res, save_model if len(seeds) == 1 else None)
        results.append(res)
    if out_dir is not None and len(seeds) > 1:
        write_seed_table(Path(out_dir) / "seeds.csv", results)
        M.write_report_csv(Path(out_dir) / "report.csv", [r.report for r in results])
    return results


def write_seed_table(path, results) -> None:
    """Per-seed online/one-pass accuracy (%) with mean and population variance."""
    reports = [r.report for r in results]
    header = ["metric"] + [f"rand {r.stream_seed}" for r in results] + ["mean", VAR_HEADER]
    rows = []
    for name, attr in (("Online", "online_average"), ("One-pass", "one_pass_overall"),
                       ("One-pass (class avg)", "one_pass_class_average")):
        vals = [100 * getattr(r, attr) for r in reports]
        mean, var = M.mean_var(vals)
        rows.append([name] + vals + [mean, var])
    M.write_table(path, header, rows)


SWEEP_PARAMS = {
    "tau": ("hyperparams.tau", float),
    "lambda": ("hyperparams.lambda", float),
    "steps_per_query": ("hyperparams.steps_per_query", int),
    "query_size": ("query_size", int),
}


def sweep(cfg: RunConfig, param: str, values, out_dir=None, seeds=None):
    """One battery per value; returns the table rows (Online / One-pass)."""
    if param not in SWEEP_PARAMS:
        raise KeyError(param)
    path, cast = SWEEP_PARAMS[param]
    seeds = stream_seeds_of(cfg, seeds)
    data = cfg.load_data()
    per_value = []
    for v in values:
        sub_cfg = cfg.with_overrides(**{path: cast(v)})
        sub_dir = None if out_dir is None else Path(out_dir) / f"{param}_{v}"
        results = run_battery(sub_cfg, seeds, sub_dir, data=data)
        per_value.append(results)
    header = [f"Metric/{param}"] + [str(v) for v in values] + ["mean", VAR_HEADER]
    rows = []
    for name, attr in (("Online", "online_average"), ("One-pass", "one_pass_overall"),
                       ("One-pass (class avg)", "one_pass_class_average")):
        vals = [100 * float(np.mean([getattr(r.report, attr) for r in res]))
                for res in per_value]
        mean, var = M.mean_var(vals)
        rows.append([name] + vals + [mean, var])
    if out_dir is not None:
        M.write_table(Path(out_dir) / f"sweep_{param}.csv", header, rows)
    return header, rows


ABLATIONS = (
    ("crodobo", {"mode": "crodobo"}),
    ("single", {"mode": "single"}),
    ("single w/o ent", {"mode": "single", "hyperparams.use_entropy": False}),
    ("single w/o div", {"mode": "single", "hyperparams.use_diversity": False}),
    ("source_only", {"mode": "source_only"}),
    ("continual", {"mode": "continual"}),
)
LOSS_COLUMNS = ("exchange", "entropy", "diversity")


def _active_terms(cfg: RunConfig) -> set[str]:
    if cfg.mode == "source_only":
        return set()
    h = cfg.hyperparams
    active = set()
    for term, flag in (("exchange", "use_exchange"), ("entropy", "use_entropy"),
                       ("diversity", "use_diversity")):
        if h.get(flag, True):
            active.add(term)
    return active


def ablate(cfg: RunConfig, out_dir=None, seeds=None, continual_warmup=200):
    """Run the mode/term battery on one dataset; returns table header and rows."""
    seeds = stream_seeds_of(cfg, seeds)
    data = cfg.load_data()
    header = ["method", "online", "one_pass", "one_pass_class_avg", *LOSS_COLUMNS]
    rows = []
    for name, changes in ABLATIONS:
        changes = dict(changes)
        if changes["mode"] == "continual" and not cfg.hyperparams.get("warmup_steps"):
            changes["hyperparams.warmup_steps"] = continual_warmup
        sub_cfg = cfg.with_overrides(**changes)
        sub_dir = None if out_dir is None else Path(out_dir) / name.replace(" ", "_").replace("/", "")
        results = run_battery(sub_cfg, seeds, sub_dir, data=data)
        reps = [r.report for r in results]
        active = _active_terms(sub_cfg)
        row = [name,
               100 * float(np.mean([r.online_average for r in reps])),
               100 * float(np.mean([r.one_pass_overall for r in reps])),
               100 * float(np.mean([r.one_pass_class_average for r in reps]))]
        for term in LOSS_COLUMNS:
            row.append(float(np.mean([r.mean_losses.get(term, 0.0) for r in reps]))
                       if term in active else "")
        rows.append(row)
    if out_dir is not None:
        M.write_table(Path(out_dir) / "ablation.csv", header, rows)
    return header, rows
