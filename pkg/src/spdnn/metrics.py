"""Twelve-measurement evaluation suite over binarized segmentation masks.

All measurements derive from pixel-level confusion counts.  Metrics whose
denominator is zero take the value 0 and are flagged, so aggregation never
propagates NaNs; the flags are counted in the aggregate report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

METRIC_NAMES = (
    "accuracy",
    "sensitivity",
    "specificity",
    "precision",
    "npv",
    "fpr",
    "fnr",
    "fdr",
    "f1",
    "mcc",
    "informedness",
    "markedness",
)

# valid range per metric, used for the fixed 20-bin histograms
METRIC_RANGES = {name: (0.0, 1.0) for name in METRIC_NAMES}
METRIC_RANGES.update({"mcc": (-1.0, 1.0), "informedness": (-1.0, 1.0), "markedness": (-1.0, 1.0)})

HISTOGRAM_BINS = 20


class MetricsError(Exception):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise MetricsError("confusion counts must be nonnegative")

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other):
        return ConfusionCounts(
            self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn
        )


@dataclass(frozen=True)
class MetricReport:
    """The twelve measurements plus the names whose denominator was zero."""

    accuracy: float
    sensitivity: float
    specificity: float
    precision: float
    npv: float
    fpr: float
    fnr: float
    fdr: float
    f1: float
    mcc: float
    informedness: float
    markedness: float
    zero_denominator: frozenset[str] = frozenset()

    def as_dict(self):
        return {name: getattr(self, name) for name in METRIC_NAMES}


def confusion_from_masks(prediction, truth, threshold=0.5) -> ConfusionCounts:
    """Tally pixel counts; a pixel is predicted positive iff value >= threshold."""
    prediction = np.asarray(prediction)
    truth = np.asarray(truth)
    if prediction.shape != truth.shape:
        raise MetricsError(f"mask shapes differ: {prediction.shape} vs {truth.shape}")
    if not 0.0 < threshold < 1.0:
        raise MetricsError(f"threshold must be in (0, 1), got {threshold}")
    pos = prediction >= threshold
    true = truth > 0.5
    tp = int(np.count_nonzero(pos & true))
    tn = int(np.count_nonzero(~pos & ~true))
    fp = int(np.count_nonzero(pos & ~true))
    fn = int(np.count_nonzero(~pos & true))
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def _ratio(num, den, name, flags):
    if den == 0:
        flags.add(name)
        return 0.0
    return num / den


def compute_metrics(c: ConfusionCounts) -> MetricReport:
    """Evaluate the twelve standard measurements from confusion counts."""
    if c.total == 0:
        raise MetricsError("cannot compute metrics from empty counts")
    flags: set[str] = set()
    accuracy = (c.tp + c.tn) / c.total
    sensitivity = _ratio(c.tp, c.tp + c.fn, "sensitivity", flags)
    specificity = _ratio(c.tn, c.tn + c.fp, "specificity", flags)
    precision = _ratio(c.tp, c.tp + c.fp, "precision", flags)
    npv = _ratio(c.tn, c.tn + c.fn, "npv", flags)
    f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, "f1", flags)
    mcc_den = math.sqrt(
        float(c.tp + c.fp) * float(c.tp + c.fn) * float(c.tn + c.fp) * float(c.tn + c.fn)
    )
    if mcc_den == 0.0:
        flags.add("mcc")
        mcc = 0.0
    else:
        mcc = (float(c.tp) * c.tn - float(c.fp) * c.fn) / mcc_den
    return MetricReport(
        accuracy=accuracy,
        sensitivity=sensitivity,
        specificity=specificity,
        precision=precision,
        npv=npv,
        fpr=1.0 - specificity,
        fnr=1.0 - sensitivity,
        fdr=1.0 - precision,
        f1=f1,
        mcc=mcc,
        informedness=sensitivity + specificity - 1.0,
        markedness=precision + npv - 1.0,
        zero_denominator=frozenset(flags),
    )


@dataclass(frozen=True)
class AggregateReport:
    """Per-metric mean/min/max over images, histograms and flag tallies."""

    means: dict[str, float]
    mins: dict[str, float]
    maxs: dict[str, float]
    zero_denominator_counts: dict[str, int]
    per_image: dict[str, tuple[float, ...]]
    histograms: dict[str, tuple[tuple[float, ...], tuple[int, ...]]]


def aggregate_report(reports: list[MetricReport]) -> AggregateReport:
    """Arithmetic mean per metric over per-image reports, plus 20-bin histograms."""
    if not reports:
        raise MetricsError("cannot aggregate an empty report list")
    per_image = {name: tuple(getattr(r, name) for r in reports) for name in METRIC_NAMES}
    means = {name: sum(vals) / len(vals) for name, vals in per_image.items()}
    mins = {name: min(vals) for name, vals in per_image.items()}
    maxs = {name: max(vals) for name, vals in per_image.items()}
    flags = {
        name: sum(1 for r in reports if name in r.zero_denominator) for name in METRIC_NAMES
    }
    histograms = {}
    for name, vals in per_image.items():
        lo, hi = METRIC_RANGES[name]
        counts, edges = np.histogram(vals, bins=HISTOGRAM_BINS, range=(lo, hi))
        histograms[name] = (tuple(float(e) for e in edges), tuple(int(n) for n in counts))
    return AggregateReport(
        means=means,
        mins=mins,
        maxs=maxs,
        zero_denominator_counts=flags,
        per_image=per_image,
        histograms=histograms,
    )


def pooled_report(counts: list[ConfusionCounts]) -> MetricReport:
    """Metrics over the summed counts rather than per image."""
    if not counts:
        raise MetricsError("cannot pool an empty count list")
    total = counts[0]
    for c in counts[1:]:
        total = total + c
    return compute_metrics(total)


def report_csv_text(agg: AggregateReport) -> str:
    lines = ["metric,mean,min,max,zero_denominator_count"]
    for name in METRIC_NAMES:
        lines.append(
            f"{name},{agg.means[name]:.9g},{agg.mins[name]:.9g},{agg.maxs[name]:.9g},"
            f"{agg.zero_denominator_counts[name]}"
        )
    return "\n".join(lines) + "\n"


def per_image_csv_text(agg: AggregateReport) -> str:
    n = len(next(iter(agg.per_image.values())))
    lines = ["image," + ",".join(METRIC_NAMES)]
    for i in range(n):
        vals = ",".join(f"{agg.per_image[name][i]:.9g}" for name in METRIC_NAMES)
        lines.append(f"{i},{vals}")
    return "\n".join(lines) + "\n"
