import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import pdist

from crodobo.data import (BurnedError, DataError, Dataset, SourcePool, TargetStream,
                          bootstrap_batches, gen_class_shift_blobs, gen_two_moons_shift,
                          load_csv, read_matrix, rotate_translate, save_csv, write_matrix)

# frozen from scripts/baseline_oracle.py (scikit-learn, seed 0)
LOGISTIC_ROT45_TARGET = 0.6575
LOGISTIC_ROT45_SOURCE = 0.8610


def _target(n, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n, d)), rng.integers(0, 2, size=n), 2, "target")


# -- dataset ---------------------------------------------------------------------

def test_dataset_is_immutable_copy():
    x = np.ones((3, 2))
    ds = Dataset(x, [0, 1, 0], 2)
    x[0, 0] = 5
    assert ds.features[0, 0] == 1
    with pytest.raises(ValueError):
        ds.features[0, 0] = 2
    assert ds.unlabeled().labels is None


@pytest.mark.parametrize("feats,labels,c", [
    (np.ones(3), None, 2),
    (np.ones((2, 2)), [0, 2], 2),
    (np.ones((2, 2)), [0], 2),
    (np.ones((2, 2)), [0.5, 1], 2),
    (np.array([[np.nan, 1.0]]), None, 2),
    (np.ones((2, 2)), None, 1),
])
def test_dataset_validation(feats, labels, c):
    with pytest.raises(DataError):
        Dataset(feats, labels, c)


# -- generators ------------------------------------------------------------------

def test_moons_are_deterministic_and_sized():
    a = gen_two_moons_shift(300, 200, seed=4)
    b = gen_two_moons_shift(300, 200, seed=4)
    assert a[0].digest() == b[0].digest() and a[1].digest() == b[1].digest()
    assert len(a[0]) == 300 and len(a[1]) == 200
    assert np.bincount(a[0].labels).tolist() == [150, 150]
    assert a[0].digest() != gen_two_moons_shift(300, 200, seed=5)[0].digest()


def test_rotation_is_an_isometry():
    src, _ = gen_two_moons_shift(400, 2, seed=1)
    for cls in (0, 1):
        x = src.features[src.labels == cls]
        moved = rotate_translate(x, 30.0, (0.4, -1.0))
        assert np.allclose(pdist(x), pdist(moved), atol=1e-12)


def test_rotation_about_center_fixes_center():
    c = np.array([[0.5, 0.25]])
    assert np.allclose(rotate_translate(c, 73.0), c)
    assert np.allclose(rotate_translate(np.zeros((1, 2)), 90.0, center=(0, 0)), 0)


def test_no_shift_logistic_transfers():
    sklearn = pytest.importorskip("sklearn.linear_model")
    src, tgt = gen_two_moons_shift(2000, 2000, rotation_deg=0.0, seed=0)
    m = sklearn.LogisticRegression().fit(src.features, src.labels)
    assert abs(m.score(tgt.features, tgt.labels) - m.score(src.features, src.labels)) < 0.02


def test_rotated_logistic_baseline_is_frozen():
    sklearn = pytest.importorskip("sklearn.linear_model")
    src, tgt = gen_two_moons_shift(2000, 2000, noise_sd=0.2, rotation_deg=45.0, seed=0)
    m = sklearn.LogisticRegression().fit(src.features, src.labels)
    assert m.score(src.features, src.labels) == pytest.approx(LOGISTIC_ROT45_SOURCE, abs=1e-4)
    assert m.score(tgt.features, tgt.labels) == pytest.approx(LOGISTIC_ROT45_TARGET, abs=1e-4)


def test_blobs_without_shift_match_in_distribution():
    src, tgt = gen_class_shift_blobs(3, 4000, 2, mean_shift=0.0, cov_scale=1.0, seed=0)
    assert np.allclose(src.features.mean(axis=0), tgt.features.mean(axis=0), atol=0.08)
    assert np.allclose(np.cov(src.features.T), np.cov(tgt.features.T), atol=0.15)


def test_blobs_imbalance_frequencies():
    w = np.array([0.7, 0.1, 0.1, 0.1])
    _, tgt = gen_class_shift_blobs(4, 2500, 3, class_imbalance=w, seed=2)
    assert len(tgt) == 10_000
    freq = np.bincount(tgt.labels, minlength=4) / len(tgt)
    assert np.all(np.abs(freq - w) < 0.02)


def test_blobs_shift_moves_means():
    src, tgt = gen_class_shift_blobs(2, 3000, 4, mean_shift=2.0, seed=3)
    gap = np.linalg.norm(src.features.mean(axis=0) - tgt.features.mean(axis=0))
    assert 1.8 < gap < 2.2


@pytest.mark.parametrize("kw", [dict(c=1), dict(n_per_class=0), dict(cov_scale=0),
                                dict(class_imbalance=[1, 0])])
def test_blobs_validation(kw):
    args = dict(c=2, n_per_class=5, d=2)
    args.update(kw)
    with pytest.raises(DataError):
        gen_class_shift_blobs(**args)


# -- files -----------------------------------------------------------------------

def test_csv_three_rows(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("f0,f1,y\n1,2,0\n3,4,1\n5,6,1\n")
    ds = load_csv(p, label_column="y")
    assert len(ds) == 3 and ds.dim == 2
    assert ds.labels.tolist() == [0, 1, 1]
    assert ds.num_classes == 2


def test_csv_headerless_index_column(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("0,1.5,2\n2,3.5,4\n")
    ds = load_csv(p, label_column=0, num_classes=3)
    assert ds.labels.tolist() == [0, 2]
    assert ds.features.tolist() == [[1.5, 2.0], [3.5, 4.0]]


@pytest.mark.parametrize("text,kw,needle", [
    ("a,b,y\n1,2,0\n", dict(label_column="label"), "'label'"),
    ("a,b,y\n1,2,0\n3,4\n", dict(label_column="y"), "ragged row 3"),
    ("a,b,y\n1,x,0\n", dict(label_column="y"), "non-numeric"),
    ("a,b,y\n1,2,5\n", dict(label_column="y", num_classes=2), "out of range"),
    ("", dict(label_column="y"), "empty"),
])
def test_csv_errors(tmp_path, text, kw, needle):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(DataError, match=needle):
        load_csv(p, **kw)


def test_csv_roundtrip(tmp_path):
    src, _ = gen_class_shift_blobs(3, 20, 4, seed=1)
    save_csv(tmp_path / "s.csv", src)
    back = load_csv(tmp_path / "s.csv", label_column="label", num_classes=3)
    assert np.allclose(back.features, src.features, atol=1e-12, rtol=0)
    assert np.array_equal(back.labels, src.labels)


def test_matrix_roundtrip(tmp_path):
    m = np.random.default_rng(0).normal(size=(7, 3))
    write_matrix(tmp_path / "m.bin", m)
    raw = (tmp_path / "m.bin").read_bytes()
    assert raw[:4] == b"CDBM" and int.from_bytes(raw[4:8], "little") == 7
    assert np.array_equal(read_matrix(tmp_path / "m.bin"), m)
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DataError):
        read_matrix(tmp_path / "bad.bin")


# -- bootstrap -------------------------------------------------------------------

def test_bootstrap_with_replacement():
    src = Dataset(np.arange(100.0)[:, None], np.arange(100) % 2, 2)
    batches = bootstrap_batches(SourcePool(src, np.random.default_rng(0)), 2, 64)
    assert len(batches) == 2
    ids = [b[0][:, 0] for b in batches]
    assert all(x.shape == (64,) for x in ids)
    # 64 draws from 100 items collide with overwhelming probability
    assert any(len(np.unique(x)) < 64 for x in ids)
    assert len(np.intersect1d(ids[0], ids[1])) > 0
    assert np.array_equal(batches[0][1], ids[0].astype(int) % 2)


def test_bootstrap_determinism():
    src = Dataset(np.arange(30.0)[:, None], np.zeros(30, int), 2)
    a = SourcePool(src, np.random.default_rng(5))
    b = SourcePool(src, np.random.default_rng(5))
    first_a, first_b = bootstrap_batches(a, 1, 8), bootstrap_batches(b, 1, 8)
    assert np.array_equal(first_a[0][0], first_b[0][0])
    assert not np.array_equal(bootstrap_batches(a, 1, 8)[0][0], first_a[0][0])


def test_bootstrap_uniform_frequencies():
    src = Dataset(np.arange(10.0)[:, None], np.zeros(10, int), 2)
    pool = SourcePool(src, np.random.default_rng(1))
    draws = np.concatenate([bootstrap_batches(pool, 1, 100)[0][0][:, 0]
                            for _ in range(100)])
    counts = np.bincount(draws.astype(int), minlength=10)
    n, p = draws.size, 0.1
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 3 * sigma)


def test_bootstrap_errors():
    with pytest.raises(DataError):
        SourcePool(Dataset(np.ones((3, 1)), None, 2), np.random.default_rng(0))
    pool = SourcePool(Dataset(np.ones((3, 1)), [0, 1, 0], 2), np.random.default_rng(0))
    with pytest.raises(DataError):
        bootstrap_batches(pool, 0, 4)
    with pytest.raises(DataError):
        bootstrap_batches(pool, 1, 1)


# -- stream ----------------------------------------------------------------------

def test_stream_sizes_and_exhaustion():
    s = TargetStream(_target(130), 64, seed=0)
    sizes = []
    for _ in range(s.num_queries + 1):
        q = s.next_query()
        if q is None:
            break
        sizes.append(len(q))
    assert sizes == [64, 64, 2]
    assert s.exhausted
    assert s.next_query() is None
    assert s.next_query() is None


def test_reread_is_burned():
    s = TargetStream(_target(20), 8, seed=0)
    q0 = s.query(0)
    with pytest.raises(BurnedError):
        s.query(0)
    with pytest.raises(DataError):
        s.query(2)
    q0.release()
    with pytest.raises(BurnedError):
        q0.features
    with pytest.raises(BurnedError):
        q0.view()


def test_stream_preserves_rows_and_zeroises_buffer():
    ds = _target(50)
    s = TargetStream(ds, 16, seed=3)
    q = s.next_query()
    assert np.array_equal(q.features, ds.features[q.sample_indices])
    assert not s._buffer[:16].any()
    assert s._buffer[16:].any()
    buf = q._features
    q.release()
    assert not buf.any()


@settings(max_examples=120, deadline=None)
@given(n=st.integers(1, 300), b=st.integers(1, 80), seed=st.integers(0, 2**32 - 1))
def test_burn_after_read_contract(n, b, seed):
    ds = _target(n, d=2, seed=seed % 97)
    s = TargetStream(ds, b, seed)
    seen = []
    for q in s:
        assert np.array_equal(q.features, ds.features[q.sample_indices])
        seen.extend(q.sample_indices.tolist())
        buf = q._features
        q.release()
        assert not buf.any()
        with pytest.raises(BurnedError):
            q.features
        with pytest.raises(BurnedError):
            s.query(q.index)
    assert sorted(seen) == list(range(n))
    assert not s._buffer.any()
    assert s.consumed.all() and s.next_query() is None


def test_stream_order_depends_on_seed_only():
    ds = _target(100)
    assert np.array_equal(TargetStream(ds, 10, 1).permutation,
                          TargetStream(ds, 10, 1).permutation)
    assert not np.array_equal(TargetStream(ds, 10, 1).permutation,
                              TargetStream(ds, 10, 2).permutation)


def test_audit_log(tmp_path):
    path = tmp_path / "audit.jsonl"
    s = TargetStream(_target(10), 4, seed=0, audit_path=path)
    for q in s:
        q.release()
    entries = [json.loads(line) for line in path.read_text().splitlines()]
    assert [e["query_index"] for e in entries] == [0, 1, 2]
    assert sorted(sum((e["sample_indices"] for e in entries), [])) == list(range(10))
    assert all(set(e) == {"query_index", "sample_indices", "timestamp"} for e in entries)
    assert entries == s.audit


def test_stream_validation():
    with pytest.raises(DataError):
        TargetStream(_target(10), 0, seed=0)
