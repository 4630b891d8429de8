import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crodobo import metrics as M
from crodobo.data import Dataset, Query, TargetStream
from crodobo.engine import QueryOutcome


def _query(index, labels):
    labels = np.asarray(labels)
    return Query(index, np.zeros((len(labels), 2)), labels, np.arange(len(labels)))


def _outcome(index, preds):
    preds = np.asarray(preds)
    return QueryOutcome(index, np.eye(2)[preds], preds, [{"exchange": 0.0}], [len(preds) // 2])


def _trace(chunks):
    """chunks: list of (labels, predictions) per query."""
    n = sum(len(y) for y, _ in chunks)
    t = M.RunTrace(n, 2)
    for j, (y, p) in enumerate(chunks):
        t.record(_outcome(j, p), _query(j, y))
    return t


class Constant:
    def __init__(self, c, k):
        self.c, self.k = c, k

    def predict(self, x):
        return np.tile(np.eye(self.k)[self.c], (len(x), 1))


def test_two_equal_queries():
    t = _trace([([1] * 64, [1] * 32 + [0] * 32), ([0] * 64, [0] * 64)])
    assert M.online_average(t) == 0.75


def test_sample_weighting_64_and_2():
    t = _trace([([1] * 64, [1] * 64), ([1, 1], [0, 0])])
    assert M.online_average(t) == 64 / 66
    assert round(M.online_average(t), 4) == 0.9697
    assert M.online_average(t, "query") == 0.5


def test_all_correct_is_one():
    t = _trace([([0, 1, 1], [0, 1, 1]), ([1], [1])])
    assert M.online_average(t) == 1.0
    assert M.online_average(t) == sum(t.correct) / t.num_samples


def test_incomplete_trace_rejected():
    t = M.RunTrace(10, 2)
    t.record(_outcome(0, [0, 1]), _query(0, [0, 1]))
    with pytest.raises(M.MetricsError):
        M.online_average(t)
    with pytest.raises(M.MetricsError):
        t.record(_outcome(0, [0]), _query(0, [0]))
    with pytest.raises(M.MetricsError):
        M.online_average(_trace([([0], [0])]), "median")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=200),
       st.data())
def test_online_average_invariant_to_rechunking(pairs, data):
    y = [a for a, _ in pairs]
    p = [b for _, b in pairs]
    n = len(pairs)
    cuts = sorted(set(data.draw(st.lists(st.integers(1, max(n - 1, 1)), max_size=10))) - {n})
    bounds = [0] + cuts + [n]
    chunked = _trace([(y[a:b], p[a:b]) for a, b in zip(bounds, bounds[1:]) if b > a])
    whole = _trace([(y, p)])
    assert M.online_average(chunked) == M.online_average(whole)


def test_one_pass_constant_model_balanced():
    ds = Dataset(np.zeros((40, 2)), np.repeat(np.arange(4), 10), 4)
    assert M.one_pass(Constant(2, 4), ds) == 0.25
    avg, vec = M.one_pass(Constant(2, 4), ds, per_class=True)
    assert avg == 0.25 and vec.tolist() == [0, 0, 1, 0]


def test_one_pass_imbalanced_class_average():
    ds = Dataset(np.zeros((100, 2)), [0] * 90 + [1] * 10, 2)
    assert M.one_pass(Constant(0, 2), ds) == 0.9
    assert M.one_pass(Constant(0, 2), ds, per_class=True)[0] == 0.5


def test_one_pass_refused_mid_stream():
    ds = Dataset(np.zeros((10, 2)), [0] * 10, 2)
    stream = TargetStream(ds, 4, 0)
    stream.next_query()
    with pytest.raises(M.MetricsError):
        M.one_pass(Constant(0, 2), ds, stream=stream)
    with pytest.raises(M.MetricsError):
        M.one_pass(Constant(0, 2), ds.unlabeled())


def test_per_class_absent_class_is_nan():
    v = M.per_class_accuracy([0, 0, 1], [0, 0, 0], 3)
    assert v[0] == 2 / 3 and np.isnan(v[1]) and np.isnan(v[2])


def _report(online, key="k"):
    return M.MetricsReport(online, online, online, [online], config_key=key)


def test_aggregate_table8_row():
    reps = [_report(v) for v in (79.4, 78.6, 79.6, 79.2, 79.4)]
    mean, var = M.aggregate_seeds(reps)["online_average"]
    assert mean == pytest.approx(79.24, abs=1e-12)
    assert var == pytest.approx(0.1184, abs=1e-12)


def test_aggregate_small_cases():
    assert M.aggregate_seeds([_report(0.7), _report(0.7)])["online_average"] == (0.7, 0.0)
    assert M.aggregate_seeds([_report(0.0), _report(1.0)])["online_average"][0] == 0.5
    with pytest.raises(M.MetricsError):
        M.aggregate_seeds([_report(0.5)])
    with pytest.raises(M.MetricsError):
        M.aggregate_seeds([_report(0.5, "a"), _report(0.5, "b")])


def test_reveal_labels_requires_labels():
    with pytest.raises(M.MetricsError):
        M.reveal_labels(Query(0, np.zeros((1, 2)), None, np.arange(1)))


def test_trace_serialisation_and_csv(tmp_path):
    t = _trace([([1] * 4, [1, 1, 0, 0]), ([0, 1], [0, 1])])
    t.write_jsonl(tmp_path / "t.jsonl")
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    assert len(lines) == 2 and '"num_correct": 2' in lines[0]
    assert t.digest() == _trace([([1] * 4, [1, 1, 0, 0]), ([0, 1], [0, 1])]).digest()
    M.write_per_query_csv(tmp_path / "q.csv", t)
    rows = list(csv.reader(open(tmp_path / "q.csv")))
    assert rows[0] == ["query_index", "size", "accuracy", "acceptance_rate"]
    assert [float(r[2]) for r in rows[1:]] == [0.5, 1.0]
    assert t.acceptance_rate() == [0.5, 0.5]


def test_metrics_do_not_mutate_state():
    ds = Dataset(np.zeros((10, 2)), [0] * 10, 2)
    t = _trace([([0] * 10, [0] * 10)])
    before = t.lines()
    M.online_average(t)
    M.one_pass(Constant(0, 2), ds, per_class=True)
    assert t.lines() == before
