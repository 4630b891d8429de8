"""Streaming accuracy bookkeeping and evaluation.

This is the only module that reads the hidden labels carried by a
:class:`crodobo.data.Query`.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np


class MetricsError(RuntimeError):
    pass


def reveal_labels(query) -> np.ndarray:
    labels = query._hidden_labels
    if labels is None:
        raise MetricsError(f"query {query.index} carries no labels")
    return labels


class RunTrace:
    """Per-query outcomes of one streamed run, with the hidden labels sealed."""

    def __init__(self, num_samples: int, num_classes: int, manifest=None):
        self.num_samples = num_samples
        self.num_classes = num_classes
        self.manifest = manifest
        self.outcomes = []
        self.sizes: list[int] = []
        self.correct: list[int] = []
        self._labels: list[np.ndarray] = []
        self.wall_clock = 0.0
        self.ensemble = None

    def record(self, outcome, query) -> None:
        if self.outcomes and outcome.index <= self.outcomes[-1].index:
            raise MetricsError("query indices must increase along a trace")
        labels = np.array(reveal_labels(query))
        self.outcomes.append(outcome)
        self.sizes.append(len(labels))
        self.correct.append(int((outcome.predictions == labels).sum()))
        self._labels.append(labels)

    @property
    def complete(self) -> bool:
        return sum(self.sizes) == self.num_samples

    def per_query_accuracy(self) -> list[float]:
        return [c / s for c, s in zip(self.correct, self.sizes)]

    def acceptance_rate(self) -> list[float]:
        out = []
        for o, s in zip(self.outcomes, self.sizes):
            acc = o.accepted
            out.append(float(np.mean(acc)) / s if len(acc) else 0.0)
        return out

    def lines(self) -> list[str]:
        rows = []
        for o, s, c in zip(self.outcomes, self.sizes, self.correct):
            d = o.to_dict()
            d["size"] = s
            d["num_correct"] = c
            rows.append(json.dumps(d, sort_keys=True))
        return rows

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.lines()).encode()).hexdigest()


def online_average(trace: RunTrace, weighting: str = "sample") -> float:
    """Accuracy of the adapt-then-test predictions over the whole stream.

    ``weighting="sample"`` divides total correct by total samples;
    ``"query"`` averages the per-query accuracies.
    """
    if not trace.complete:
        raise MetricsError(
            f"incomplete trace: {sum(trace.sizes)} of {trace.num_samples} samples")
    if weighting == "sample":
        return sum(trace.correct) / trace.num_samples
    if weighting == "query":
        return float(np.mean(trace.per_query_accuracy()))
    raise MetricsError(f"unknown weighting {weighting!r}")


def per_class_accuracy(predictions, labels, num_classes) -> np.ndarray:
    """Recall per class; NaN for classes absent from ``labels``."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    out = np.full(num_classes, np.nan)
    for c in range(num_classes):
        sel = labels == c
        if sel.any():
            out[c] = float((predictions[sel] == c).mean())
    return out


def one_pass(ensemble, held_target, per_class: bool = False, stream=None):
    """Frozen eval-mode accuracy over the full (harness-retained) target set.

    Returns the overall accuracy, or with ``per_class`` the tuple
    ``(class_average, per_class_vector)``.
    """
    if stream is not None and not stream.exhausted:
        raise MetricsError("one-pass accuracy requested before the stream is exhausted")
    if held_target.labels is None:
        raise MetricsError("one-pass evaluation needs a labeled target copy")
    preds = ensemble.predict(held_target.features).argmax(axis=1)
    if not per_class:
        return float((preds == held_target.labels).mean())
    vec = per_class_accuracy(preds, held_target.labels, held_target.num_classes)
    return float(np.nanmean(vec)), vec


@dataclass
class MetricsReport:
    online_average: float
    one_pass_overall: float
    one_pass_class_average: float
    one_pass_per_class: list[float]
    per_query_accuracy: list[float] = field(default_factory=list)
    acceptance_rate: list[float] = field(default_factory=list)
    online_query_weighted: float = float("nan")
    mean_losses: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    config_key: str = ""
    label: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_row(self) -> dict:
        row = {
            "label": self.label,
            "online_average": self.online_average,
            "online_query_weighted": self.online_query_weighted,
            "one_pass_overall": self.one_pass_overall,
            "one_pass_class_average": self.one_pass_class_average,
            "wall_clock": self.wall_clock,
        }
        for c, v in enumerate(self.one_pass_per_class):
            row[f"class_{c}"] = v
        for k, v in self.mean_losses.items():
            row[f"mean_{k}"] = v
        return row


def build_report(trace: RunTrace, held_target, config_key="", label="") -> MetricsReport:
    if trace.ensemble is None:
        raise MetricsError("trace has no ensemble attached")
    overall = one_pass(trace.ensemble, held_target)
    class_avg, vec = one_pass(trace.ensemble, held_target, per_class=True)
    losses: dict[str, list[float]] = {}
    for o in trace.outcomes:
        for per_learner in o.losses:
            for k, v in per_learner.items():
                losses.setdefault(k, []).append(v)
    return MetricsReport(
        online_average=online_average(trace),
        online_query_weighted=online_average(trace, "query"),
        one_pass_overall=overall,
        one_pass_class_average=class_avg,
        one_pass_per_class=[float(v) for v in vec],
        per_query_accuracy=trace.per_query_accuracy(),
        acceptance_rate=trace.acceptance_rate(),
        mean_losses={k: float(np.mean(v)) for k, v in losses.items()},
        wall_clock=trace.wall_clock,
        config_key=config_key,
        label=label,
    )


SUMMARY_METRICS = ("online_average", "one_pass_overall", "one_pass_class_average")


def aggregate_seeds(reports, metrics=SUMMARY_METRICS) -> dict[str, tuple[float, float]]:
    """Mean and population variance (divide by n) of each metric across runs
    that differ only in the stream permutation seed."""
    if len(reports) < 2:
        raise MetricsError("need at least two reports to aggregate")
    keys = {r.config_key for r in reports}
    if len(keys) > 1:
        raise MetricsError("cannot aggregate reports from different configurations")
    out = {}
    for m in metrics:
        vals = np.array([getattr(r, m) for r in reports], dtype=float)
        out[m] = (float(vals.mean()), float(vals.var()))
    return out


def mean_var(values) -> tuple[float, float]:
    vals = np.asarray(values, dtype=float)
    return float(vals.mean()), float(vals.var())


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_report_csv(path, reports) -> None:
    rows = [r.csv_row() for r in reports]
    header: list[str] = []
    for row in rows:
        header += [k for k in row if k not in header]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        w.writerows(rows)


def write_per_query_csv(path, trace: RunTrace) -> None:
    acc = trace.per_query_accuracy()
    rate = trace.acceptance_rate()
    rows = [[o.index, s, a, r] for o, s, a, r in zip(trace.outcomes, trace.sizes, acc, rate)]
    write_table(path, ["query_index", "size", "accuracy", "acceptance_rate"], rows)
