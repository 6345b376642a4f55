"""Evaluation harness: weighted metrics, per-sample latency, weights-only size, reports."""
import csv
from dataclasses import asdict, dataclass, field
from fractions import Fraction
import math
import statistics
import time
import warnings

import numpy as np

from .formats import weight_payload_bytes

STAGES = ("original", "pruned", "fs_pruned")
STAGE_LABELS = {"original": "Original", "pruned": "Pruned", "fs_pruned": "Feature-Selected Pruned"}
COLUMNS = ("Model", "Stage", "Accuracy", "Precision", "Recall", "F1", "AvgInferenceTime_ms", "ModelSize_KB")


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float


def confusion(pred, truth, n_classes=None):
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    k = int(max(pred.max(), truth.max())) + 1 if n_classes is None else n_classes
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def compute_metrics(pred, truth):
    """Accuracy plus support-weighted precision, recall and F1."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction length {pred.shape} != truth length {truth.shape}")
    if pred.size == 0:
        raise ValueError("no samples to score")
    cm = confusion(pred, truth)
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    if np.any((predicted == 0) & (support > 0)):
        warnings.warn("some classes were never predicted; their precision counts as 0", stacklevel=2)
    # exact rational sums, rounded once: per-class ratios of counts weighted by support / n
    n = int(pred.size)
    P = R = F = Fraction(0)
    for t, s, q in zip(tp.tolist(), support.tolist(), predicted.tolist()):
        if s == 0:
            continue
        if q:
            P += Fraction(s * t, q)
        R += t
        F += Fraction(2 * s * t, s + q)  # 2PR / (P + R) == 2 tp / (support + predicted)
    return Metrics(
        accuracy=float(Fraction(int(tp.sum()), n)),
        precision=float(P / n),
        recall=float(R / n),
        f1=float(F / n),
    )


@dataclass
class LatencyResult:
    ms_per_sample: float        # median over repeats
    repeats_ms: list
    n_samples: int
    raw_ns: list = field(default_factory=list)  # per-call timings of the last repeat

    @property
    def spread_ms(self):
        return max(self.repeats_ms) - min(self.repeats_ms)


def latency_subset(n, fraction=0.10, seed=0):
    count = min(n, max(1, math.ceil(fraction * n)))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=count, replace=False))


def measure_latency(fn, samples, fraction=0.10, seed=0, repeats=3, keep_raw=False):
    """Median over ``repeats`` of the mean wall-clock time of single-sample calls (ms).

    One untimed warm-up pass over the chosen subset runs first.
    """
    if len(samples) == 0:
        raise ValueError("no samples to time")
    subset = [samples[i] for i in latency_subset(len(samples), fraction, seed)]
    for x in subset:
        fn(x)
    clock = time.perf_counter_ns
    per_repeat = []
    raw = []
    for _ in range(repeats):
        if keep_raw:
            raw = []
            for x in subset:
                t = clock()
                fn(x)
                raw.append(clock() - t)
            total = sum(raw)
        else:
            t = clock()
            for x in subset:
                fn(x)
            total = clock() - t
        per_repeat.append(total / len(subset) / 1e6)
    return LatencyResult(statistics.median(per_repeat), per_repeat, len(subset), raw)


def measure_size(path):
    """Weights-only size in KB (bytes / 1024) of a dense manifest or SPIF file."""
    return weight_payload_bytes(path) / 1024.0


@dataclass
class BenchRow:
    model: str
    stage: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    latency_ms: float
    size_kb: float

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")

    def cells(self):
        return [
            self.model, STAGE_LABELS[self.stage],
            f"{self.accuracy:.4f}", f"{self.precision:.4f}", f"{self.recall:.4f}", f"{self.f1:.4f}",
            f"{self.latency_ms:.6f}", f"{self.size_kb:.4f}",
        ]

    def rounded(self):
        return BenchRow(self.model, self.stage, round(self.accuracy, 4), round(self.precision, 4),
                        round(self.recall, 4), round(self.f1, 4), round(self.latency_ms, 6), round(self.size_kb, 4))


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)

    def add(self, model, stage, metrics, latency_ms, size_kb):
        self.rows.append(BenchRow(model, stage, metrics.accuracy, metrics.precision, metrics.recall,
                                  metrics.f1, latency_ms, size_kb))

    def missing(self):
        have = {(r.model, r.stage) for r in self.rows}
        models = list(dict.fromkeys(r.model for r in self.rows))
        return [(m, s) for m in models for s in STAGES if (m, s) not in have]

    def ordered(self):
        models = list(dict.fromkeys(r.model for r in self.rows))
        return sorted(self.rows, key=lambda r: (models.index(r.model), STAGES.index(r.stage)))

    def to_dicts(self):
        return [asdict(r) for r in self.ordered()]


class IncompleteReportError(ValueError):
    pass


def emit_report(report, path, fmt="csv"):
    """Write the report as CSV or a markdown table; every model needs all three stages."""
    gaps = report.missing()
    if not report.rows or gaps:
        detail = ", ".join(f"{m}/{s}" for m, s in gaps) or "no rows"
        raise IncompleteReportError(f"report is missing: {detail}")
    rows = [r.cells() for r in report.ordered()]
    with open(path, "w", newline="") as fh:
        if fmt == "csv":
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            w.writerows(rows)
        elif fmt == "markdown":
            fh.write("| " + " | ".join(COLUMNS) + " |\n")
            fh.write("|" + "|".join("---" for _ in COLUMNS) + "|\n")
            for r in rows:
                fh.write("| " + " | ".join(r) + " |\n")
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    return path


def read_report_csv(path):
    by_label = {v: k for k, v in STAGE_LABELS.items()}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        rows = [
            BenchRow(r["Model"], by_label[r["Stage"]], float(r["Accuracy"]), float(r["Precision"]),
                     float(r["Recall"]), float(r["F1"]), float(r["AvgInferenceTime_ms"]), float(r["ModelSize_KB"]))
            for r in reader
        ]
    return BenchReport(rows)


def write_latency_raw(results, path):
    """``results``: mapping (model, stage) -> LatencyResult with raw timings."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "stage", "call", "ns"])
        for (model, stage), res in results.items():
            for i, ns in enumerate(res.raw_ns):
                w.writerow([model, stage, i, ns])
