"""Resampling, MIL oversampling, metrics, SEM aggregation and the Wilcoxon test."""

from __future__ import annotations

import hashlib
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from attnmil.dataset import (
    Bag,
    MilDataset,
    fit_standardizer,
    pad_bag_duplicate,
    standardize_bags,
)
from attnmil.io import atomic_write_rows, atomic_write_text
from attnmil.models import METHODS, TrainConfig, pad_target, score_bag, train_model
from attnmil.nncore import derive_rng

log = logging.getLogger(__name__)

METRICS = ("recall", "accuracy", "ppv", "npv", "auc")
SYNTHETIC_PREFIX = "synthetic:"
EXACT_WILCOXON_MAX = 20

# stream tags for derive_rng, so each purpose gets its own sequence
_SPLIT, _TRAIN, _OVERSAMPLE = 0, 1, 2


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# fold plans


@dataclass(frozen=True)
class FoldPlan:
    repetition: int
    fold: int
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


def stratified_kfold(dataset: MilDataset, k: int, repetition_seed: int,
                     repetition: int = 0) -> list[FoldPlan]:
    """Shuffle each class, then deal positives followed by negatives round-robin.

    Dealing continues across the class boundary, so both per-class counts
    and total fold sizes differ by at most one between folds.
    """
    if k < 2:
        raise EvalError("k must be at least 2")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(repetition_seed)))
    ids = np.array(dataset.bag_ids, dtype=object)
    labels = dataset.labels
    ordered = []
    for cls in (1, 0):
        members = ids[labels == cls]
        if len(members) < k:
            raise EvalError(f"class {cls} has {len(members)} bags, fewer than k={k}")
        ordered.extend(members[rng.permutation(len(members))])
    folds = [[] for _ in range(k)]
    for i, bag_id in enumerate(ordered):
        folds[i % k].append(bag_id)
    plans = []
    all_ids = dataset.bag_ids
    for f in range(k):
        test = set(folds[f])
        plans.append(FoldPlan(repetition, f,
                              tuple(i for i in all_ids if i not in test),
                              tuple(i for i in all_ids if i in test)))
    return plans


def plans_digest(plans: Sequence[FoldPlan]) -> str:
    h = hashlib.sha256()
    for p in plans:
        h.update(f"{p.repetition}|{p.fold}|{','.join(p.test_ids)}\n".encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# oversampling


def oversample_negative_bags(train_bags: Sequence[Bag], count: int, rng: np.random.Generator,
                             size_policy: str = "empirical") -> list[Bag]:
    """Append ``count`` synthetic negative bags resampled from the pooled negative instances.

    Sizes follow the observed negative-bag sizes (``"empirical"``) or are
    uniform on ``[1, largest negative bag]`` (``"uniform"``). Instances are
    drawn uniformly with replacement from the pool.
    """
    if count < 0:
        raise EvalError("oversample count must be >= 0")
    if size_policy not in ("empirical", "uniform"):
        raise EvalError(f"unknown size_policy {size_policy!r}")
    out = list(train_bags)
    if count == 0:
        return out
    negatives = [b for b in train_bags if b.label == 0]
    if not negatives:
        raise EvalError("cannot oversample: no negative bags in the training set")
    pool = np.vstack([b.instances[~b.is_padding()] for b in negatives])
    sizes = np.array([int((~b.is_padding()).sum()) for b in negatives])
    for i in range(count):
        if size_policy == "empirical":
            k = int(sizes[rng.integers(len(sizes))])
        else:
            k = int(rng.integers(1, sizes.max() + 1))
        picks = rng.integers(len(pool), size=k)
        out.append(Bag(f"{SYNTHETIC_PREFIX}{i:04d}", 0, pool[picks]))
    return out


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MetricRecord:
    """Confusion counts and derived metrics; ``None`` marks an undefined value."""

    tp: int
    fp: int
    tn: int
    fn: int
    recall: float | None
    accuracy: float | None
    ppv: float | None
    npv: float | None
    auc: float | None = None

    def get(self, metric: str) -> float | None:
        return getattr(self, metric)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def confusion_metrics(predicted: Sequence[int], truth: Sequence[int]) -> MetricRecord:
    pred = np.asarray(predicted, dtype=np.int64)
    true = np.asarray(truth, dtype=np.int64)
    if pred.shape != true.shape:
        raise EvalError(f"{pred.size} predictions for {true.size} labels")
    if pred.size == 0:
        raise EvalError("need at least one prediction")
    tp = int(np.sum((pred == 1) & (true == 1)))
    fp = int(np.sum((pred == 1) & (true == 0)))
    tn = int(np.sum((pred == 0) & (true == 0)))
    fn = int(np.sum((pred == 0) & (true == 1)))
    return MetricRecord(tp, fp, tn, fn, _ratio(tp, tp + fn), _ratio(tp + tn, pred.size),
                        _ratio(tp, tp + fp), _ratio(tn, tn + fn))


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # +inf for the (0, 0) anchor


def roc_curve(scores: Sequence[float], truth: Sequence[int]) -> RocCurve:
    """ROC points at every distinct score (predict positive when score >= threshold)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(truth, dtype=np.int64)
    n_pos, n_neg = int((y == 1).sum()), int((y == 0).sum())
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(y == 1)[last]
    fps = np.cumsum(y == 0)[last]
    fpr = np.r_[0.0, fps / n_neg if n_neg else np.zeros(len(last))]
    tpr = np.r_[0.0, tps / n_pos if n_pos else np.zeros(len(last))]
    thr = np.r_[np.inf, s[last]]
    if fpr[-1] != 1.0 or tpr[-1] != 1.0:
        fpr, tpr, thr = np.r_[fpr, 1.0], np.r_[tpr, 1.0], np.r_[thr, -np.inf]
    return RocCurve(fpr, tpr, thr)


def trapezoid_area(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def roc_auc(scores: Sequence[float], truth: Sequence[int]) -> tuple[float | None, RocCurve]:
    """Mann-Whitney pair rule: wins count 1, ties 1/2, over all positive/negative pairs."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(truth, dtype=np.int64)
    if s.shape != y.shape:
        raise EvalError("scores and labels differ in length")
    curve = roc_curve(s, y)
    pos, neg = np.sort(s[y == 1]), np.sort(s[y == 0])
    if pos.size == 0 or neg.size == 0:
        return None, curve
    below = np.searchsorted(neg, pos, side="left")
    not_above = np.searchsorted(neg, pos, side="right")
    # doubled integer credit keeps the sum exact
    credit2 = int(np.sum(below + not_above))
    return credit2 / (2 * pos.size * neg.size), curve


@dataclass(frozen=True)
class CalibrationBin:
    center: float
    mean_predicted: float
    observed_fraction: float
    count: int


def calibration_curve(probabilities: Sequence[float], truth: Sequence[int],
                      n_bins: int = 10) -> list[CalibrationBin]:
    """Equal-width bins on [0, 1]; the last bin includes 1.0; empty bins are dropped."""
    if n_bins < 1:
        raise EvalError("n_bins must be >= 1")
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    idx = np.minimum((p * n_bins).astype(np.int64), n_bins - 1)
    bins = []
    for b in range(n_bins):
        sel = idx == b
        n = int(sel.sum())
        if n:
            bins.append(CalibrationBin((b + 0.5) / n_bins, float(p[sel].mean()), float(y[sel].mean()), n))
    return bins


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class Aggregate:
    mean: float | None
    sem: float | None
    n: int
    n_undefined: int


def aggregate_mean_sem(values_per_repetition: Sequence[Sequence[float | None]],
                       level: str = "repetition") -> Aggregate:
    """Mean and SEM (``std(ddof=1) / sqrt(n)``).

    At ``level="repetition"`` each repetition is first reduced to the mean of
    its defined fold values; ``"fold"`` pools all defined fold values.
    """
    undefined = sum(v is None for rep in values_per_repetition for v in rep)
    if undefined:
        log.warning("%d undefined metric values excluded from aggregation", undefined)
    if level == "repetition":
        units = [float(np.mean(d)) for rep in values_per_repetition
                 if (d := [v for v in rep if v is not None])]
    elif level == "fold":
        units = [float(v) for rep in values_per_repetition for v in rep if v is not None]
    else:
        raise EvalError(f"unknown aggregation level {level!r}")
    n = len(units)
    if n == 0:
        return Aggregate(None, None, 0, undefined)
    mean = float(np.mean(units))
    sem = float(np.std(units, ddof=1) / math.sqrt(n)) if n >= 2 else None
    return Aggregate(mean, sem, n, undefined)


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank


def signed_ranks(a: Sequence[float], b: Sequence[float]) -> np.ndarray:
    """Mid-ranks of ``|a - b|`` carrying the sign of the difference; zeros dropped."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise EvalError(f"paired samples differ in length: {a.size} vs {b.size}")
    d = a - b
    d = d[d != 0]
    absd = np.abs(d)
    order = np.argsort(absd, kind="mergesort")
    ranks = np.empty(d.size)
    sorted_abs = absd[order]
    i = 0
    while i < d.size:
        j = i
        while j + 1 < d.size and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return np.sign(d) * ranks


def _exact_lower_count(doubled_ranks: np.ndarray, w2: int) -> int:
    """Number of sign assignments with doubled W+ <= ``w2``."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[int(r):] = counts[: total + 1 - int(r)]
        counts = counts + shifted
    return int(counts[: w2 + 1].sum())


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided p-value of the paired Wilcoxon signed-rank test.

    Exact over all ``2**m`` sign assignments for ``m <= 20`` non-zero
    differences, otherwise a normal approximation with tie-corrected
    variance and continuity correction. All-zero differences give 1.0.
    """
    sr = signed_ranks(a, b)
    m = sr.size
    if m == 0:
        return 1.0
    w_plus = sr[sr > 0].sum()
    w_minus = -sr[sr < 0].sum()
    w = min(w_plus, w_minus)
    if m <= EXACT_WILCOXON_MAX:
        doubled = np.rint(2 * np.abs(sr)).astype(np.int64)
        count = _exact_lower_count(doubled, int(round(2 * w)))
        return min(1.0, (2 * count) / 2**m)
    mean = m * (m + 1) / 4.0
    _, tie_sizes = np.unique(np.abs(sr), return_counts=True)
    var = m * (m + 1) * (2 * m + 1) / 24.0 - np.sum(tie_sizes**3 - tie_sizes) / 48.0
    if var <= 0:
        return 1.0
    z = (w - mean + 0.5) / math.sqrt(var)
    return min(1.0, math.erfc(-z / math.sqrt(2.0)))


@dataclass(frozen=True)
class ComparisonResult:
    method_a: str
    method_b: str
    metric: str
    p_value: float
    mean_a: float
    mean_b: float

    @property
    def direction(self) -> str:
        if self.mean_a > self.mean_b:
            return "a>b"
        if self.mean_a < self.mean_b:
            return "a<b"
        return "a=b"


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class FoldResult:
    plan: FoldPlan
    record: MetricRecord
    bag_ids: list[str]
    scores: list[float]
    labels: list[int]
    predicted: list[int]
    n_train: int
    # held-out attention weights per test bag (padding collapsed); None for non-attention models
    attention: list[np.ndarray | None] = field(default_factory=list, repr=False)


@dataclass
class EvalReport:
    method: str
    config: TrainConfig
    master_seed: int
    repetitions: int
    k: int
    folds: list[FoldResult] = field(default_factory=list)
    level: str = "repetition"

    @property
    def plan_hash(self) -> str:
        return plans_digest([f.plan for f in self.folds])

    def values(self, metric: str) -> list[list[float | None]]:
        reps: list[list[float | None]] = [[] for _ in range(self.repetitions)]
        for f in self.folds:
            reps[f.plan.repetition].append(f.record.get(metric))
        return reps

    def repetition_values(self, metric: str) -> list[float | None]:
        out = []
        for rep in self.values(metric):
            d = [v for v in rep if v is not None]
            out.append(float(np.mean(d)) if d else None)
        return out

    def summary(self) -> dict[str, Aggregate]:
        return {m: aggregate_mean_sem(self.values(m), self.level) for m in METRICS}


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get("ATTNMIL_THREADS", "1") or 1)
    return max(1, threads)


def _run_cell(dataset: MilDataset, plan: FoldPlan, method: str, config: TrainConfig,
              master_seed: int, pad_size: int | None) -> FoldResult:
    train = dataset.subset(plan.train_ids)
    test = dataset.subset(plan.test_ids)
    if config.standardize:
        st = fit_standardizer(train)
        train, test = standardize_bags(st, train), standardize_bags(st, test)
    if config.oversample_count:
        over_rng = derive_rng(master_seed, _OVERSAMPLE, plan.repetition, plan.fold)
        train = oversample_negative_bags(train, config.oversample_count, over_rng)
    if pad_size is not None:
        train = [pad_bag_duplicate(b, pad_size) for b in train]
        test = [pad_bag_duplicate(b, pad_size) for b in test]
    rng = derive_rng(master_seed, _TRAIN, plan.repetition, plan.fold)
    model = train_model(method, train, config, rng)
    scored = [score_bag(model, b) for b in test]
    scores = [s for s, _, _ in scored]
    predicted = [lab for _, lab, _ in scored]
    labels = [b.label for b in test]
    record = confusion_metrics(predicted, labels)
    auc, _ = roc_auc(scores, labels)
    attention = [None if rep is None else rep.collapsed() for _, _, rep in scored]
    return FoldResult(plan, replace(record, auc=auc), [b.bag_id for b in test], scores, labels,
                      predicted, len(train), attention)


def fold_plans(dataset: MilDataset, k: int, repetitions: int, master_seed: int) -> list[FoldPlan]:
    plans = []
    for r in range(repetitions):
        seed = int(derive_rng(master_seed, _SPLIT, r).integers(2**63))
        plans.extend(stratified_kfold(dataset, k, seed, repetition=r))
    return plans


def run_crossval(dataset: MilDataset, method: str, config: TrainConfig, repetitions: int = 20,
                 k: int = 5, master_seed: int = 0, threads: int | None = None,
                 level: str = "repetition") -> EvalReport:
    """Repeated stratified k-fold evaluation of one method.

    Each (repetition, fold) cell standardizes on its training fold,
    oversamples the training fold only, trains and scores the test fold.
    Cells draw from streams derived from ``(master_seed, repetition, fold)``,
    so the report does not depend on ``threads``.
    """
    if method not in METHODS:
        raise EvalError(f"unknown method {method!r}; expected one of {METHODS}")
    if repetitions < 1:
        raise EvalError("repetitions must be >= 1")
    if set(dataset.labels.tolist()) != {0, 1}:
        raise EvalError("dataset must contain both classes")
    plans = fold_plans(dataset, k, repetitions, master_seed)
    pad_size = pad_target(dataset.bags) if config.pad_duplicate and method != "mi_svm" else None
    n_threads = resolve_threads(threads)

    def cell(plan):
        return _run_cell(dataset, plan, method, config, master_seed, pad_size)

    if n_threads == 1:
        results = [cell(p) for p in plans]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(cell, plans))
    for res in results:
        if any(i.startswith(SYNTHETIC_PREFIX) for i in res.plan.test_ids):
            raise EvalError("synthetic bag leaked into a test fold")
    return EvalReport(method, config, master_seed, repetitions, k, results, level)


def compare_reports(a: EvalReport, b: EvalReport, metrics: Sequence[str] = METRICS) -> list[ComparisonResult]:
    """Paired Wilcoxon tests over repetition-level metric values."""
    if a.repetitions != b.repetitions or a.master_seed != b.master_seed or a.plan_hash != b.plan_hash:
        raise EvalError("reports are not paired (repetitions, master seed or fold plans differ)")
    return [compare_values(a.method, b.method, m, a.repetition_values(m), b.repetition_values(m))
            for m in metrics]


def compare_values(name_a: str, name_b: str, metric: str, va: Sequence[float | None],
                   vb: Sequence[float | None]) -> ComparisonResult:
    pairs = [(x, y) for x, y in zip(va, vb) if x is not None and y is not None]
    xa = [x for x, _ in pairs]
    xb = [y for _, y in pairs]
    p = wilcoxon_signed_rank(xa, xb) if pairs else 1.0
    mean_a = float(np.mean(xa)) if pairs else float("nan")
    mean_b = float(np.mean(xb)) if pairs else float("nan")
    return ComparisonResult(name_a, name_b, metric, p, mean_a, mean_b)


# ---------------------------------------------------------------------------
# report files


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def report_meta(report: EvalReport) -> dict[str, str]:
    return {
        "method": report.method,
        "master_seed": str(report.master_seed),
        "repetitions": str(report.repetitions),
        "folds": str(report.k),
        "level": report.level,
        "plan_hash": report.plan_hash,
    }


def write_report(report: EvalReport, out_dir: str | os.PathLike, n_bins: int = 10) -> None:
    """Write folds, repetitions, summary, predictions, ROC and calibration tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "report.meta", "".join(f"{k}={v}\n" for k, v in report_meta(report).items()))

    rows = [["repetition", "fold", "method", "n_train", "n_test", "tp", "fp", "tn", "fn", *METRICS]]
    for f in report.folds:
        r = f.record
        rows.append([f.plan.repetition, f.plan.fold, report.method, f.n_train, len(f.bag_ids),
                     r.tp, r.fp, r.tn, r.fn, *(_fmt(r.get(m)) for m in METRICS)])
    atomic_write_rows(out / "folds.csv", rows)

    rep_vals = {m: report.repetition_values(m) for m in METRICS}
    rows = [["repetition", *METRICS]]
    for i in range(report.repetitions):
        rows.append([i, *(_fmt(rep_vals[m][i]) for m in METRICS)])
    atomic_write_rows(out / "repetitions.csv", rows)

    rows = [["metric", "mean", "sem", "n", "n_undefined"]]
    for m, agg in report.summary().items():
        rows.append([m, _fmt(agg.mean), _fmt(agg.sem), agg.n, agg.n_undefined])
    atomic_write_rows(out / "summary.csv", rows)

    rows = [["repetition", "fold", "bag_id", "label", "score", "predicted"]]
    for f in report.folds:
        for bid, y, s, p in zip(f.bag_ids, f.labels, f.scores, f.predicted):
            rows.append([f.plan.repetition, f.plan.fold, bid, y, _fmt(float(s)), p])
    atomic_write_rows(out / "predictions.csv", rows)

    rows = [["repetition", "fold", "threshold", "fpr", "tpr"]]
    for f in report.folds:
        c = roc_curve(f.scores, f.labels)
        for t, x, y in zip(c.thresholds, c.fpr, c.tpr):
            rows.append([f.plan.repetition, f.plan.fold, _fmt(float(t)), _fmt(float(x)), _fmt(float(y))])
    atomic_write_rows(out / "roc.csv", rows)

    rows = [["bin_center", "mean_predicted", "observed_fraction", "count"]]
    if report.method != "mi_svm":
        probs = [s for f in report.folds for s in f.scores]
        labels = [y for f in report.folds for y in f.labels]
        for b in calibration_curve(probs, labels, n_bins):
            rows.append([_fmt(b.center), _fmt(b.mean_predicted), _fmt(b.observed_fraction), b.count])
    atomic_write_rows(out / "calibration.csv", rows)


def read_report_dir(path: str | os.PathLike) -> tuple[dict[str, str], dict[str, list[float | None]]]:
    """Load ``report.meta`` and the repetition-level metric table of a written report."""
    import csv

    path = Path(path)
    meta = dict(line.split("=", 1) for line in (path / "report.meta").read_text().splitlines() if line)
    values: dict[str, list[float | None]] = {m: [] for m in METRICS}
    with (path / "repetitions.csv").open(newline="") as fh:
        for row in csv.DictReader(fh):
            for m in METRICS:
                values[m].append(None if row[m] == "NA" else float(row[m]))
    return meta, values
