"""Datasets, synthetic shifted-domain generators, the bootstrap source pool and
the single-consumption target stream."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    pass


class BurnedError(RuntimeError):
    """Raised when an already-consumed target query is accessed again."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None
    num_classes: int
    domain_tag: str = ""

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64, copy=True)
        if x.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        if not np.isfinite(x).all():
            raise DataError("features contain non-finite values")
        x.flags.writeable = False
        object.__setattr__(self, "features", x)
        if self.num_classes < 2:
            raise DataError("num_classes must be >= 2")
        if self.labels is not None:
            y = np.array(self.labels, copy=True)
            if y.shape != (x.shape[0],):
                raise DataError("labels must have one entry per feature row")
            if y.size and not np.all(np.equal(np.mod(y, 1), 0)):
                raise DataError("labels must be integers")
            y = y.astype(np.int64)
            if y.size and (y.min() < 0 or y.max() >= self.num_classes):
                raise DataError(f"label out of range [0, {self.num_classes})")
            y.flags.writeable = False
            object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def unlabeled(self) -> "Dataset":
        return Dataset(self.features, None, self.num_classes, self.domain_tag)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features, dtype="<f8").tobytes())
        if self.labels is not None:
            h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()


# -- generators -----------------------------------------------------------------

def _moons(n, noise_sd, rng):
    n_out = n // 2
    n_in = n - n_out
    t_out = rng.uniform(0, np.pi, n_out)
    t_in = rng.uniform(0, np.pi, n_in)
    outer = np.stack([np.cos(t_out), np.sin(t_out)], axis=1)
    inner = np.stack([1 - np.cos(t_in), 0.5 - np.sin(t_in)], axis=1)
    x = np.concatenate([outer, inner])
    y = np.concatenate([np.zeros(n_out, np.int64), np.ones(n_in, np.int64)])
    x = x + rng.normal(0.0, noise_sd, size=x.shape)
    order = rng.permutation(n)
    return x[order], y[order]


MOONS_CENTER = np.array([0.5, 0.25])


def rotate_translate(x, rotation_deg, translation=(0.0, 0.0), center=None):
    """Rotate 2-D points about ``center`` (default: the moons' centre) then translate."""
    center = MOONS_CENTER if center is None else np.asarray(center, dtype=float)
    th = np.deg2rad(rotation_deg)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    return (x - center) @ rot.T + center + np.asarray(translation, dtype=float)


def gen_two_moons_shift(n_source=2000, n_target=2000, noise_sd=0.2, rotation_deg=45.0,
                        translation=(0.0, 0.0), seed=0, rotation_center=None):
    """Two interleaving moons; the target domain is the same distribution
    rotated about ``rotation_center`` (default: the moons' centre, (0.5, 0.25))
    and translated."""
    if n_source < 2 or n_target < 2:
        raise DataError("need at least 2 samples per domain")
    if noise_sd < 0:
        raise DataError("noise_sd must be non-negative")
    src_rng, tgt_rng = (np.random.default_rng(s)
                        for s in np.random.SeedSequence(seed).spawn(2))
    xs, ys = _moons(n_source, noise_sd, src_rng)
    xt, yt = _moons(n_target, noise_sd, tgt_rng)
    xt = rotate_translate(xt, rotation_deg, translation, rotation_center)
    return (Dataset(xs, ys, 2, "source"), Dataset(xt, yt, 2, "target"))


def gen_class_shift_blobs(c, n_per_class, d, mean_shift=1.0, cov_scale=1.0,
                          class_imbalance=None, seed=0, separation=3.0):
    """Isotropic Gaussian class blobs.

    Source: ``n_per_class`` samples per class, unit covariance. Target:
    ``c * n_per_class`` samples with class proportions drawn from
    ``class_imbalance``, every class mean moved by ``mean_shift`` along one
    shared random direction and the covariance scaled by ``cov_scale``.
    """
    if c < 2:
        raise DataError("need at least 2 classes")
    if n_per_class < 1 or d < 1:
        raise DataError("n_per_class and d must be positive")
    if cov_scale <= 0:
        raise DataError("cov_scale must be positive")
    weights = np.ones(c) if class_imbalance is None else np.asarray(class_imbalance, float)
    if weights.shape != (c,) or np.any(weights <= 0):
        raise DataError("class_imbalance needs c positive weights")
    weights = weights / weights.sum()
    mean_rng, src_rng, tgt_rng = (np.random.default_rng(s)
                                  for s in np.random.SeedSequence(seed).spawn(3))
    means = mean_rng.normal(size=(c, d))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    direction = mean_rng.normal(size=d)
    direction /= np.linalg.norm(direction)

    ys = np.repeat(np.arange(c), n_per_class)
    xs = means[ys] + src_rng.normal(size=(ys.size, d))
    order = src_rng.permutation(ys.size)
    xs, ys = xs[order], ys[order]

    yt = tgt_rng.choice(c, size=c * n_per_class, p=weights)
    xt = (means[yt] + mean_shift * direction
          + np.sqrt(cov_scale) * tgt_rng.normal(size=(yt.size, d)))
    return Dataset(xs, ys, c, "source"), Dataset(xt, yt, c, "target")


# -- file formats ---------------------------------------------------------------

def _parse_float(cell, row_no, col_no):
    try:
        return float(cell)
    except ValueError:
        raise DataError(
            f"non-numeric cell {cell!r} at row {row_no}, column {col_no}") from None


def load_csv(path, label_column=None, num_classes=None, domain_tag="") -> Dataset:
    """Read a numeric CSV. A first row that does not parse as numbers is taken
    as a header. ``label_column`` is a header name or a 0-based index."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = None
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        header, rows = rows[0], rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(header) if header is not None else len(rows[0])
    offset = 2 if header is not None else 1
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DataError(
                f"{path}: ragged row {i + offset}: expected {width} cells, got {len(r)}")
    mat = np.array([[_parse_float(c, i + offset, j) for j, c in enumerate(r)]
                    for i, r in enumerate(rows)])
    labels = None
    if label_column is not None:
        if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
            if header is None or label_column not in header:
                raise DataError(f"{path}: label column {label_column!r} not found")
            col = header.index(label_column)
        else:
            col = int(label_column)
            if not -width <= col < width:
                raise DataError(f"{path}: label column {label_column!r} not found")
        labels = mat[:, col]
        if not np.all(labels == np.round(labels)):
            raise DataError(f"{path}: non-integer labels in column {label_column!r}")
        labels = labels.astype(np.int64)
        mat = np.delete(mat, col, axis=1)
        if num_classes is None:
            num_classes = int(labels.max()) + 1
        if labels.min() < 0 or labels.max() >= num_classes:
            raise DataError(f"{path}: label out of range [0, {num_classes})")
    if num_classes is None:
        raise DataError(f"{path}: num_classes required for unlabeled data")
    return Dataset(mat, labels, max(int(num_classes), 2), domain_tag)


def save_csv(path, dataset: Dataset, label_name="label") -> None:
    d = dataset.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = [f"x{i}" for i in range(d)]
        if dataset.labels is not None:
            head.append(label_name)
        w.writerow(head)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.features[i]]
            if dataset.labels is not None:
                row.append(str(int(dataset.labels[i])))
            w.writerow(row)


MATRIX_MAGIC = b"CDBM"


def write_matrix(path, mat) -> None:
    """Raw matrix: magic, rows and cols as little-endian u32, float64 LE payload."""
    mat = np.ascontiguousarray(mat, dtype="<f8")
    if mat.ndim != 2:
        raise DataError("write_matrix expects a 2-D array")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<II", *mat.shape))
        fh.write(mat.tobytes())


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MATRIX_MAGIC:
        raise DataError(f"{path}: bad magic bytes")
    rows, cols = struct.unpack("<II", raw[4:12])
    payload = raw[12:]
    if len(payload) != rows * cols * 8:
        raise DataError(f"{path}: payload size does not match {rows}x{cols}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)


# -- source bootstrap -----------------------------------------------------------

@dataclass
class SourcePool:
    dataset: Dataset
    rng: np.random.Generator

    def __post_init__(self):
        if len(self.dataset) == 0:
            raise DataError("empty source pool")
        if self.dataset.labels is None:
            raise DataError("source pool must be labeled")


def bootstrap_batches(pool: SourcePool, k: int, batch_size: int):
    """K independent uniform draws of ``batch_size`` labeled rows, with replacement."""
    if k < 1:
        raise DataError("K must be >= 1")
    if batch_size < 2:
        raise DataError("bootstrap batch size must be >= 2")
    n = len(pool.dataset)
    out = []
    for _ in range(k):
        idx = pool.rng.integers(0, n, size=batch_size)
        out.append((pool.dataset.features[idx], pool.dataset.labels[idx]))
    return out


# -- target stream --------------------------------------------------------------

@dataclass(frozen=True)
class QueryView:
    """Label-free view of a query: all the adaptation engine ever sees."""
    index: int
    features: np.ndarray


class Query:
    """One streamed target mini-batch. Labels are kept private; only the
    metrics module reads them (via ``crodobo.metrics.reveal_labels``)."""

    def __init__(self, index, features, hidden_labels, sample_indices):
        self.index = index
        self._features = features
        self._hidden_labels = hidden_labels
        self.sample_indices = sample_indices
        self.released = False

    def __len__(self):
        return len(self.sample_indices)

    @property
    def features(self) -> np.ndarray:
        if self.released:
            raise BurnedError(f"query {self.index} has been released")
        return self._features

    def view(self) -> QueryView:
        return QueryView(self.index, self.features)

    def release(self) -> None:
        """Zeroise and drop the feature buffer."""
        if self._features is not None:
            self._features.fill(0.0)
        self._features = None
        self.released = True


STREAM_TAG = 0x57E


class TargetStream:
    """Uniformly permuted target data served once, query by query.

    The stream keeps a private copy of the target features; serving a query
    moves its rows out and zeroises them in the stream's buffer.
    """

    def __init__(self, dataset: Dataset, query_size: int, seed: int, audit_path=None):
        if query_size < 1:
            raise DataError("query size must be >= 1")
        if len(dataset) == 0:
            raise DataError("empty target dataset")
        self.query_size = int(query_size)
        self.seed = seed
        self.num_classes = dataset.num_classes
        self.num_samples = len(dataset)
        self.permutation = np.random.default_rng([seed, STREAM_TAG]).permutation(self.num_samples)
        self._buffer = np.array(dataset.features[self.permutation], dtype=np.float64)
        self._labels = (None if dataset.labels is None
                        else np.array(dataset.labels[self.permutation]))
        self.num_queries = math.ceil(self.num_samples / self.query_size)
        self.consumed = np.zeros(self.num_queries, dtype=bool)
        self.cursor = 0
        self.audit: list[dict] = []
        self.audit_path = audit_path
        if audit_path is not None:
            Path(audit_path).write_text("")

    @property
    def exhausted(self) -> bool:
        return self.cursor >= self.num_queries

    def next_query(self) -> Query | None:
        """Serve the next query, or None once the stream is exhausted."""
        if self.exhausted:
            return None
        return self._serve(self.cursor)

    def query(self, j: int) -> Query:
        """Indexed access; only the query at the cursor can be served."""
        if 0 <= j < self.num_queries and self.consumed[j]:
            raise BurnedError(f"query {j} was already consumed (burned)")
        if j != self.cursor:
            raise DataError(f"query {j} is not next in the stream (cursor {self.cursor})")
        return self._serve(j)

    def _serve(self, j: int) -> Query:
        lo = j * self.query_size
        hi = min(lo + self.query_size, self.num_samples)
        feats = self._buffer[lo:hi].copy()
        self._buffer[lo:hi] = 0.0
        labels = None if self._labels is None else self._labels[lo:hi].copy()
        sample_idx = self.permutation[lo:hi].copy()
        self.consumed[j] = True
        self.cursor = j + 1
        entry = {"query_index": j, "sample_indices": sample_idx.tolist(),
                 "timestamp": time.time()}
        self.audit.append(entry)
        if self.audit_path is not None:
            with open(self.audit_path, "a") as fh:
                fh.write(json.dumps(entry) + "\n")
        return Query(j, feats, labels, sample_idx)

    def __iter__(self):
        while (q := self.next_query()) is not None:
            yield q

