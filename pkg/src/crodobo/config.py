"""Run configuration: a YAML key-value tree with a ``schema_version`` field.

Validation errors carry the line of the offending key, e.g.::

    run.yaml:14: hyperparams.tau = 1.5 is out of range; expected 0 < tau <= 1

Schema (version 1)::

    schema_version: 1
    mode: crodobo                 # crodobo | single | source_only | continual
    query_size: 64
    dataset:
      generator: two_moons        # two_moons | blobs | csv
      params: {...}               # generator keyword arguments
      source_path / target_path / label_column / num_classes   # csv only
    model: {hidden_dims: [128, 256], batch_norm_eps: 1.0e-5,
            batch_norm_momentum: 0.1, dtype: float64}
    optimizer: {learning_rate: 8.0e-4, beta1: 0.9, beta2: 0.999, epsilon: 1.0e-8}
    hyperparams: {tau: 0.95, lambda: 0.4, steps_per_query: 1, num_learners: 2,
                  warmup_steps: 0, distinct_init: false, parallel: false,
                  joint_batch_norm: true, use_exchange: true,
                  use_entropy: true, use_diversity: true}
    augment:
      weak: {kind: jitter, sigma: 0.01, feature_scale: 1.0}
      strong: {ops: [...], num_ops: 2, magnitude: 0.5, ...}
    seeds: {init: 0, stream: 0, bootstrap: 0, augment: 0}
    stream_seeds: [0, 1, 2, 3, 4] # optional: repeat over stream permutations
    output_dir: runs/default
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from crodobo.augment import OPS, AugmentPolicy, WeakPolicy
from crodobo.data import gen_class_shift_blobs, gen_two_moons_shift, load_csv
from crodobo.engine import MODES, HyperParams
from crodobo.net import NetworkSpec

SCHEMA_VERSION = 1
GENERATORS = ("two_moons", "blobs", "csv")
SEED_NAMES = ("init", "stream", "bootstrap", "augment")


class ConfigError(ValueError):
    def __init__(self, message, path="", line=None, source=None):
        self.key_path = path
        self.line = line
        self.source = source
        where = f"{source or '<config>'}:{line}: " if line else f"{source or '<config>'}: "
        super().__init__(where + message)


def _line_map(text: str) -> dict[str, int]:
    """Map dotted key paths to 1-based line numbers."""
    out: dict[str, int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                out[path] = k.start_mark.line + 1
                walk(v, path)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                path = f"{prefix}[{i}]"
                out[path] = v.start_mark.line + 1
                walk(v, path)

    if root is not None:
        walk(root, "")
    return out


def _join(path, msg):
    if not path:
        return msg
    return f"{path} {msg}" if msg.startswith("= ") else f"{path}: {msg}"


def _check_keys(block: dict, allowed, where, err):
    for k in block:
        if k not in allowed:
            err(f"{where}.{k}" if where else k,
                f"unknown key {k!r}; expected one of {sorted(allowed)}")


@dataclass
class RunConfig:
    mode: str = "crodobo"
    query_size: int = 64
    dataset: dict = field(default_factory=lambda: {
        "generator": "two_moons",
        "params": {"n_source": 2000, "n_target": 2000, "noise_sd": 0.2,
                   "rotation_deg": 45.0, "translation": [0.0, 0.0], "seed": 0}})
    model: dict = field(default_factory=lambda: {"hidden_dims": [128, 256]})
    optimizer: dict = field(default_factory=lambda: {"learning_rate": 8e-4})
    hyperparams: dict = field(default_factory=lambda: {"tau": 0.95, "lambda": 0.4})
    augment: dict = field(default_factory=lambda: {"weak": {}, "strong": {}})
    seeds: dict = field(default_factory=lambda: dict.fromkeys(SEED_NAMES, 0))
    stream_seeds: list | None = None
    output_dir: str = "runs/default"
    schema_version: int = SCHEMA_VERSION

    # -- construction ------------------------------------------------------------
    @classmethod
    def from_text(cls, text: str, source=None) -> "RunConfig":
        lines = _line_map(text)
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            raise ConfigError(f"invalid YAML: {e}", line=mark.line + 1 if mark else None,
                              source=source) from None
        if isinstance(raw, dict) and "config" in raw and "manifest_version" in raw:
            # a run manifest: replay its embedded config
            raw = raw["config"]
            lines = {}
        return cls.from_dict(raw, lines, source)

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}", source=str(path)) from None
        return cls.from_text(text, source=str(path))

    @classmethod
    def from_dict(cls, raw, lines=None, source=None) -> "RunConfig":
        lines = lines or {}

        def err(path, msg):
            line = lines.get(path)
            if line is None and "." in path:
                line = lines.get(path.rsplit(".", 1)[0])
            raise ConfigError(_join(path, msg), path, line, source)

        if not isinstance(raw, dict):
            err("", "config must be a mapping")
        known = {f.name for f in fields(cls)}
        _check_keys(raw, known, "", err)
        version = raw.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            err("schema_version", f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
        cfg = cls()
        for k, v in raw.items():
            if isinstance(getattr(cfg, k), dict) and v is None:
                v = {}
            setattr(cfg, k, copy.deepcopy(v))
        cfg.validate(err)
        return cfg

    # -- validation --------------------------------------------------------------
    def validate(self, err=None):
        if err is None:
            def err(path, msg):
                raise ConfigError(_join(path, msg), path)

        def number(path, value, lo=None, hi=None, lo_open=False, hi_open=False,
                   integer=False, rng_text=""):
            ok_type = isinstance(value, int) if integer else isinstance(value, (int, float))
            if isinstance(value, bool) or not ok_type:
                err(path, f"expected {'an integer' if integer else 'a number'}, got {value!r}")
            bad = ((lo is not None and (value <= lo if lo_open else value < lo))
                   or (hi is not None and (value >= hi if hi_open else value > hi)))
            if bad:
                err(path, f"= {value} is out of range; expected {rng_text}")

        if self.mode not in MODES:
            err("mode", f"= {self.mode!r} is not a valid mode; expected one of {list(MODES)}")
        number("query_size", self.query_size, lo=1, integer=True, rng_text="query_size >= 1")

        ds = self.dataset
        if not isinstance(ds, dict):
            err("dataset", "must be a mapping")
        _check_keys(ds, {"generator", "params", "source_path", "target_path",
                         "label_column", "num_classes"}, "dataset", err)
        gen = ds.get("generator", "two_moons")
        if gen not in GENERATORS:
            err("dataset.generator", f"= {gen!r} is unknown; expected one of {list(GENERATORS)}")
        if gen == "csv":
            for k in ("source_path", "target_path", "label_column"):
                if k not in ds:
                    err(f"dataset.{k}", "required for the csv generator")
        elif not isinstance(ds.get("params", {}), dict):
            err("dataset.params", "must be a mapping")

        m = self.model
        _check_keys(m, {"hidden_dims", "batch_norm_eps", "batch_norm_momentum", "dtype"},
                    "model", err)
        hd = m.get("hidden_dims", [128, 256])
        if not isinstance(hd, list) or not all(isinstance(h, int) and h >= 1 for h in hd):
            err("model.hidden_dims", f"= {hd!r}; expected a list of positive integers")
        if "batch_norm_eps" in m:
            number("model.batch_norm_eps", m["batch_norm_eps"], lo=0, lo_open=True,
                   rng_text="batch_norm_eps > 0")
        if "batch_norm_momentum" in m:
            number("model.batch_norm_momentum", m["batch_norm_momentum"], lo=0, hi=1,
                   lo_open=True, hi_open=True, rng_text="0 < batch_norm_momentum < 1")
        if m.get("dtype", "float64") not in ("float64", "float32"):
            err("model.dtype", "expected 'float64' or 'float32'")

        o = self.optimizer
        _check_keys(o, {"learning_rate", "beta1", "beta2", "epsilon"}, "optimizer", err)
        if "learning_rate" in o:
            number("optimizer.learning_rate", o["learning_rate"], lo=0, lo_open=True,
                   rng_text="learning_rate > 0")
        for b in ("beta1", "beta2"):
            if b in o:
                number(f"optimizer.{b}", o[b], lo=0, hi=1, lo_open=True, hi_open=True,
                       rng_text=f"0 < {b} < 1")
        if "epsilon" in o:
            number("optimizer.epsilon", o["epsilon"], lo=0, lo_open=True, rng_text="epsilon > 0")

        h = self.hyperparams
        bools = ("distinct_init", "parallel", "joint_batch_norm", "use_exchange",
                 "use_entropy", "use_diversity")
        _check_keys(h, {"tau", "lambda", "steps_per_query", "num_learners",
                        "warmup_steps", *bools}, "hyperparams", err)
        if "tau" in h:
            number("hyperparams.tau", h["tau"], lo=0, hi=1, lo_open=True, rng_text="0 < tau <= 1")
        if "lambda" in h:
            number("hyperparams.lambda", h["lambda"], lo=0, rng_text="lambda >= 0")
        if "steps_per_query" in h:
            number("hyperparams.steps_per_query", h["steps_per_query"], lo=0, integer=True,
                   rng_text="steps_per_query >= 0")
        if "num_learners" in h:
            number("hyperparams.num_learners", h["num_learners"], lo=1, integer=True,
                   rng_text="num_learners >= 1")
        if "warmup_steps" in h:
            number("hyperparams.warmup_steps", h["warmup_steps"], lo=0, integer=True,
                   rng_text="warmup_steps >= 0")
        for b in bools:
            if b in h and not isinstance(h[b], bool):
                err(f"hyperparams.{b}", f"= {h[b]!r}; expected true or false")

        a = self.augment
        _check_keys(a, {"weak", "strong"}, "augment", err)
        strong = a.get("strong") or {}
        _check_keys(strong, {f.name for f in fields(AugmentPolicy)}, "augment.strong", err)
        bad_ops = [op for op in strong.get("ops", []) if op not in OPS]
        if bad_ops:
            err("augment.strong.ops", f"unknown ops {bad_ops}; expected a subset of {list(OPS)}")
        if "magnitude" in strong:
            number("augment.strong.magnitude", strong["magnitude"], lo=0, hi=1,
                   rng_text="0 <= magnitude <= 1")
        if "num_ops" in strong:
            number("augment.strong.num_ops", strong["num_ops"], lo=0, integer=True,
                   rng_text="num_ops >= 0")
        weak = a.get("weak") or {}
        _check_keys(weak, {f.name for f in fields(WeakPolicy)}, "augment.weak", err)
        if weak.get("kind", "jitter") not in ("jitter", "identity"):
            err("augment.weak.kind", "expected 'jitter' or 'identity'")

        _check_keys(self.seeds, set(SEED_NAMES), "seeds", err)
        for s in SEED_NAMES:
            if s in self.seeds:
                number(f"seeds.{s}", self.seeds[s], lo=0, integer=True, rng_text="seed >= 0")
        if self.stream_seeds is not None:
            if not isinstance(self.stream_seeds, list) or not self.stream_seeds:
                err("stream_seeds", "expected a non-empty list of integers")
            for i, s in enumerate(self.stream_seeds):
                number(f"stream_seeds[{i}]", s, lo=0, integer=True, rng_text="seed >= 0")
        try:
            self.network_spec(2, 2)
            self.hp()
            self.strong_policy()
            self.weak_policy()
        except ValueError as e:
            err("", str(e))

    # -- typed views -------------------------------------------------------------
    def seed(self, name) -> int:
        return int(self.seeds.get(name, 0))

    def network_spec(self, input_dim, num_classes) -> NetworkSpec:
        return NetworkSpec(input_dim=input_dim, num_classes=num_classes, **self.model)

    def hp(self) -> HyperParams:
        h = dict(self.hyperparams)
        if "lambda" in h:
            h["lam"] = h.pop("lambda")
        return HyperParams(mode=self.mode, **h)

    def adam(self) -> dict:
        return dict(self.optimizer)

    def weak_policy(self) -> WeakPolicy:
        return WeakPolicy(**(self.augment.get("weak") or {}))

    def strong_policy(self) -> AugmentPolicy:
        return AugmentPolicy(**(self.augment.get("strong") or {}))

    def load_data(self):
        ds = self.dataset
        gen = ds.get("generator", "two_moons")
        params = dict(ds.get("params") or {})
        try:
            if gen == "two_moons":
                return gen_two_moons_shift(**params)
            if gen == "blobs":
                return gen_class_shift_blobs(**params)
        except TypeError as e:
            raise ConfigError(f"dataset.params: {e}", "dataset.params") from None
        try:
            src = load_csv(ds["source_path"], ds["label_column"], ds.get("num_classes"),
                           "source")
            tgt = load_csv(ds["target_path"], ds["label_column"], src.num_classes, "target")
        except OSError as e:
            raise ConfigError(f"dataset: cannot read {e.filename}: {e.strerror}",
                              "dataset") from None
        return src, tgt

    def to_dict(self) -> dict:
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}

    def with_overrides(self, **changes) -> "RunConfig":
        """Copy with dotted-path overrides, e.g. ``{"hyperparams.tau": 0.9}``."""
        d = self.to_dict()
        for path, value in changes.items():
            node = d
            *parents, leaf = path.split(".")
            for p in parents:
                node = node.setdefault(p, {})
            node[leaf] = value
        return RunConfig.from_dict(d)

    def key(self, exclude_stream=True) -> str:
        """Fingerprint of everything except (optionally) the stream seed."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("stream_seeds")
        if exclude_stream:
            d["seeds"] = {k: v for k, v in d["seeds"].items() if k != "stream"}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


DEFAULT_BENCHMARK = """\
# Shipped default benchmark: rotated two-moons, 45 degrees.
schema_version: 1
mode: crodobo
query_size: 64
dataset:
  generator: two_moons
  params:
    n_source: 2000
    n_target: 2000
    noise_sd: 0.2
    rotation_deg: 45.0
    translation: [0.0, 0.0]
    seed: 0
model:
  hidden_dims: [128, 256]
optimizer:
  learning_rate: 8.0e-4
hyperparams:
  tau: 0.95
  lambda: 0.4
  steps_per_query: 1
  num_learners: 2
augment:
  weak: {kind: jitter, sigma: 0.01}
  # label-preserving ops only: zeroing one of two coordinates destroys the sample
  strong:
    ops: [gaussian-noise, global-scale, additive-shift]
    num_ops: 2
    magnitude: 0.5
seeds: {init: 0, stream: 0, bootstrap: 0, augment: 0}
stream_seeds: [0, 1, 2, 3, 4]
output_dir: runs/default
"""
