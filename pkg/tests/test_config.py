import pytest

from crodobo.config import DEFAULT_BENCHMARK, ConfigError, RunConfig


def _with(old, new):
    assert old in DEFAULT_BENCHMARK
    return DEFAULT_BENCHMARK.replace(old, new)


def test_default_benchmark_parses():
    cfg = RunConfig.from_text(DEFAULT_BENCHMARK)
    hp = cfg.hp()
    assert (hp.tau, hp.lam, hp.num_learners, hp.mode) == (0.95, 0.4, 2, "crodobo")
    assert cfg.query_size == 64 and cfg.stream_seeds == [0, 1, 2, 3, 4]
    src, tgt = cfg.load_data()
    assert len(src) == len(tgt) == 2000
    assert cfg.network_spec(2, 2).hidden_dims == [128, 256]
    assert cfg.adam() == {"learning_rate": 8e-4}


def test_tau_out_of_range_is_line_anchored():
    text = _with("tau: 0.95", "tau: 1.5")
    line = text.splitlines().index("  tau: 1.5") + 1
    with pytest.raises(ConfigError) as e:
        RunConfig.from_text(text, source="run.yaml")
    msg = str(e.value)
    assert "hyperparams.tau" in msg and "0 < tau <= 1" in msg
    assert msg.startswith(f"run.yaml:{line}:")
    assert e.value.line == line


@pytest.mark.parametrize("old,new,needle", [
    ("mode: crodobo", "mode: triple", "mode"),
    ("query_size: 64", "query_size: 0", "query_size"),
    ("lambda: 0.4", "lambda: -1", "lambda"),
    ("learning_rate: 8.0e-4", "learning_rate: 0", "learning_rate"),
    ("magnitude: 0.5", "magnitude: 2", "magnitude"),
    ("schema_version: 1", "schema_version: 7", "schema_version"),
    ("query_size: 64", "query_size: 64\nbogus: 1", "bogus"),
    ("generator: two_moons", "generator: spirals", "generator"),
])
def test_invalid_values_are_rejected(old, new, needle):
    with pytest.raises(ConfigError, match=needle):
        RunConfig.from_text(_with(old, new))


def test_broken_yaml_reports_line():
    with pytest.raises(ConfigError) as e:
        RunConfig.from_text("mode: crodobo\nhyperparams: [1, 2\n")
    assert e.value.line is not None


def test_overrides_and_key():
    cfg = RunConfig.from_text(DEFAULT_BENCHMARK)
    other = cfg.with_overrides(**{"hyperparams.tau": 0.8, "seeds.stream": 3})
    assert other.hp().tau == 0.8 and cfg.hp().tau == 0.95
    assert cfg.key() != other.key()
    assert cfg.key() == cfg.with_overrides(**{"seeds.stream": 3}).key()
    assert cfg.key(exclude_stream=False) != cfg.with_overrides(
        **{"seeds.stream": 3}).key(exclude_stream=False)
    with pytest.raises(ConfigError):
        cfg.with_overrides(**{"hyperparams.tau": 2.0})


def test_manifest_text_replays_config():
    import json
    cfg = RunConfig.from_text(DEFAULT_BENCHMARK)
    manifest = json.dumps({"manifest_version": 1, "config": cfg.to_dict()})
    assert RunConfig.from_text(manifest).to_dict() == cfg.to_dict()


def test_missing_file():
    with pytest.raises(ConfigError):
        RunConfig.load("/nonexistent/run.yaml")
