"""Scoring the reviewer against labeled decisions.

Six classification metrics with percentile-bootstrap confidence intervals,
the two analytic baselines, and the score-correlation analyses.  Accept is
the positive class throughout.  Metrics that are undefined on a sample (a
class absent, an empty denominator) are flagged as such, never silently 0.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import UndefinedMetricError

logger = logging.getLogger(__name__)

ACCEPT = "accept"
REJECT = "reject"

METRIC_NAMES = ("balanced_accuracy", "accuracy", "f1", "auc", "fpr", "fnr")


@dataclass(frozen=True)
class MetricValue:
    point: float | None
    ci_low: float | None = None
    ci_high: float | None = None

    @property
    def undefined(self) -> bool:
        return self.point is None

    def __post_init__(self):
        if self.point is not None and self.ci_low is not None and self.ci_high is not None:
            if not (self.ci_low <= self.point <= self.ci_high):
                raise ValueError(
                    f"interval [{self.ci_low}, {self.ci_high}] does not contain {self.point}"
                )


@dataclass(frozen=True)
class MetricsReport:
    balanced_accuracy: MetricValue
    accuracy: MetricValue
    f1: MetricValue
    auc: MetricValue
    fpr: MetricValue
    fnr: MetricValue
    n: int

    def values(self) -> dict[str, MetricValue]:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def to_record(self) -> dict:
        out: dict = {"n": self.n}
        for name, value in self.values().items():
            out[name] = value.point
            out[f"{name}_ci_low"] = value.ci_low
            out[f"{name}_ci_high"] = value.ci_high
        return out


def _to_binary(decisions: Sequence[str | int]) -> np.ndarray:
    arr = np.asarray(decisions)
    if arr.dtype.kind in "biuf":
        return (arr != 0).astype(np.int64)
    out = []
    for d in decisions:
        if isinstance(d, str):
            if d not in (ACCEPT, REJECT):
                raise ValueError(f"decision must be accept or reject, got {d!r}")
            out.append(1 if d == ACCEPT else 0)
        else:
            out.append(int(bool(d)))
    return np.asarray(out, dtype=np.int64)


def confusion_counts(predictions: Sequence, labels: Sequence) -> tuple[int, int, int, int]:
    """(TP, FP, TN, FN) with accept as the positive class."""
    pred = _to_binary(predictions)
    lab = _to_binary(labels)
    if len(pred) != len(lab):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(lab)} labels")
    if len(pred) == 0:
        raise ValueError("need at least one sample")
    tp = int(np.sum((pred == 1) & (lab == 1)))
    fp = int(np.sum((pred == 1) & (lab == 0)))
    tn = int(np.sum((pred == 0) & (lab == 0)))
    fn = int(np.sum((pred == 0) & (lab == 1)))
    return tp, fp, tn, fn


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the midrank of their block."""
    _, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    midrank_per_value = starts + (counts - 1) / 2.0 + 1.0
    return midrank_per_value[inverse]


def roc_auc(scores: Sequence[float], labels: Sequence) -> float:
    """Probability a random accepted paper outscores a random rejected one.

    Mann-Whitney rank statistic normalized to [0, 1]; ties count one half.
    Raises :class:`UndefinedMetricError` when a class is absent.
    """
    lab = _to_binary(labels)
    sc = np.asarray(scores, dtype=np.float64)
    if len(sc) != len(lab):
        raise ValueError("length mismatch between scores and labels")
    n_pos = int(lab.sum())
    n_neg = len(lab) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    ranks = _midranks(sc)
    rank_sum_pos = float(ranks[lab == 1].sum())
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def compute_metrics(
    predictions: Sequence, scores: Sequence[float], labels: Sequence
) -> MetricsReport:
    """Point estimates of all six Table metrics.

    ``scores`` feed only the AUC; decisions feed everything else.
    """
    tp, fp, tn, fn = confusion_counts(predictions, labels)
    n = tp + fp + tn + fn

    def ratio(num: int, denom: int) -> float | None:
        return num / denom if denom > 0 else None

    tpr = ratio(tp, tp + fn)
    tnr = ratio(tn, tn + fp)
    balanced = (tpr + tnr) / 2 if tpr is not None and tnr is not None else None
    accuracy = (tp + tn) / n
    f1 = ratio(2 * tp, 2 * tp + fp + fn)
    fpr = ratio(fp, fp + tn)
    fnr = ratio(fn, fn + tp)
    try:
        auc = roc_auc(scores, labels)
    except UndefinedMetricError:
        auc = None
    return MetricsReport(
        balanced_accuracy=MetricValue(balanced),
        accuracy=MetricValue(accuracy),
        f1=MetricValue(f1),
        auc=MetricValue(auc),
        fpr=MetricValue(fpr),
        fnr=MetricValue(fnr),
        n=n,
    )


def bootstrap_ci(
    evaluate: Callable[[np.ndarray], float],
    n: int,
    resamples: int = 10_000,
    level: float = 0.95,
    seed: int = 0,
    redraw_limit: int = 100,
) -> tuple[float, float]:
    """Percentile interval of ``evaluate`` over with-replacement resamples.

    ``evaluate`` receives an index array into the dataset and may raise
    :class:`UndefinedMetricError`; such resamples are redrawn (bounded by
    ``redraw_limit`` per resample).  Deterministic given ``seed``; each
    resample derives its own child seed, so execution order cannot matter.
    """
    if resamples < 100:
        raise ValueError("resamples must be >= 100")
    if n < 1:
        raise ValueError("need a nonempty dataset")
    children = np.random.SeedSequence(seed).spawn(resamples)
    stats = np.empty(resamples, dtype=np.float64)
    for i in range(resamples):
        rng = np.random.default_rng(children[i])
        for attempt in range(redraw_limit):
            idx = rng.integers(0, n, size=n)
            try:
                stats[i] = evaluate(idx)
                break
            except UndefinedMetricError:
                continue
        else:
            raise UndefinedMetricError(
                f"metric undefined on {redraw_limit} consecutive redraws of resample {i}"
            )
    alpha = (1.0 - level) / 2.0
    low, high = np.percentile(stats, [100 * alpha, 100 * (1 - alpha)])
    return float(low), float(high)


def evaluate_with_cis(
    predictions: Sequence,
    scores: Sequence[float],
    labels: Sequence,
    resamples: int = 10_000,
    level: float = 0.95,
    seed: int = 0,
) -> MetricsReport:
    """Point estimates plus a bootstrap interval per defined metric.

    Intervals are widened, never narrowed, to contain the point estimate, so
    the report invariant ci_low <= point <= ci_high always holds.
    """
    report = compute_metrics(predictions, scores, labels)
    pred = _to_binary(predictions)
    sc = np.asarray(scores, dtype=np.float64)
    lab = _to_binary(labels)
    n = len(pred)

    def metric_evaluator(name: str) -> Callable[[np.ndarray], float]:
        def evaluate(idx: np.ndarray) -> float:
            sub = compute_metrics(pred[idx], sc[idx], lab[idx])
            value = getattr(sub, name).point
            if value is None:
                raise UndefinedMetricError(name)
            return value

        return evaluate

    values = {}
    for name in METRIC_NAMES:
        point = getattr(report, name).point
        if point is None:
            values[name] = MetricValue(None)
            continue
        low, high = bootstrap_ci(metric_evaluator(name), n, resamples, level, seed)
        values[name] = MetricValue(point, min(low, point), max(high, point))
    return MetricsReport(n=n, **values)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y, dtype=np.float64)
    if len(xs) != len(ys) or len(xs) < 2:
        raise ValueError("pearson needs two samples of equal length >= 2")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    denom = float(np.sqrt((xc**2).sum() * (yc**2).sum()))
    if denom == 0.0:
        raise UndefinedMetricError("zero variance")
    return float((xc * yc).sum() / denom)


@dataclass(frozen=True)
class CorrelationReport:
    human_pairwise: float | None
    llm_vs_mean: float | None
    undefined: tuple[str, ...] = ()


def score_correlations(
    human_scores: Sequence[Sequence[int]],
    llm_scores: Sequence[float],
    seed: int = 0,
    trials: int = 100,
) -> CorrelationReport:
    """Reviewer-consistency correlations.

    The human arm samples one ordered reviewer pair per paper per trial and
    averages the Pearson correlation over trials; the model arm correlates
    the model score with the per-paper mean human score.
    """
    if len(human_scores) != len(llm_scores):
        raise ValueError("papers and llm scores must align")
    if any(len(s) < 2 for s in human_scores):
        raise ValueError("every paper needs at least two human scores for the pairwise arm")
    undefined: list[str] = []

    rng = np.random.default_rng(seed)
    trial_values = []
    for _ in range(trials):
        first, second = [], []
        for scores in human_scores:
            i, j = rng.choice(len(scores), size=2, replace=False)
            first.append(scores[i])
            second.append(scores[j])
        try:
            trial_values.append(pearson(first, second))
        except UndefinedMetricError:
            continue
    if trial_values:
        human_pairwise = float(np.mean(trial_values))
    else:
        human_pairwise = None
        undefined.append("human_pairwise")

    means = [float(np.mean(s)) for s in human_scores]
    try:
        llm_vs_mean = pearson(llm_scores, means)
    except UndefinedMetricError:
        llm_vs_mean = None
        undefined.append("llm_vs_mean")
    return CorrelationReport(human_pairwise, llm_vs_mean, tuple(undefined))


def always_reject_baseline(labels: Sequence) -> MetricsReport:
    n = len(labels)
    predictions = [REJECT] * n
    scores = [1.0] * n
    return compute_metrics(predictions, scores, labels)


def random_baseline(labels: Sequence, seed: int = 0, trials: int = 1000) -> MetricsReport:
    """Seeded fair coin, reported as the per-metric mean over trials."""
    lab = _to_binary(labels)
    n = len(lab)
    rng = np.random.default_rng(seed)
    sums = {name: 0.0 for name in METRIC_NAMES}
    counts = {name: 0 for name in METRIC_NAMES}
    for _ in range(trials):
        coin = rng.integers(0, 2, size=n)
        report = compute_metrics(coin, coin.astype(np.float64), lab)
        for name, value in report.values().items():
            if value.point is not None:
                sums[name] += value.point
                counts[name] += 1
    values = {
        name: MetricValue(sums[name] / counts[name] if counts[name] else None)
        for name in METRIC_NAMES
    }
    return MetricsReport(n=n, **values)


def run_baselines(labels: Sequence, seed: int = 0, trials: int = 1000) -> dict[str, MetricsReport]:
    if len(labels) == 0:
        raise ValueError("dataset must be nonempty")
    return {
        "always_reject": always_reject_baseline(labels),
        "random": random_baseline(labels, seed=seed, trials=trials),
    }


def decisions_at_threshold(scores: Sequence[float], threshold: float) -> list[str]:
    return [ACCEPT if s >= threshold else REJECT for s in scores]


# ---------------------------------------------------------------------------
# Labeled dataset handling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledPaper:
    paper_id: str
    ground_truth: str
    human_scores: tuple[int, ...]
    text: str = ""
    pdf: str = ""
    llm_decision: str | None = None
    llm_score: float | None = None

    def __post_init__(self):
        if self.ground_truth not in (ACCEPT, REJECT):
            raise ValueError(f"ground_truth must be accept or reject, got {self.ground_truth!r}")
        for s in self.human_scores:
            if not (1 <= s <= 10):
                raise ValueError(f"human score {s} outside [1, 10]")


def load_dataset(directory: str | Path) -> list[LabeledPaper]:
    """Directory of per-paper JSON records; see the sample fixture for shape."""
    directory = Path(directory)
    papers = []
    for path in sorted(directory.glob("*.json")):
        record = json.loads(path.read_text(encoding="utf-8"))
        papers.append(
            LabeledPaper(
                paper_id=record["paper_id"],
                ground_truth=record["ground_truth"],
                human_scores=tuple(int(s) for s in record.get("human_scores", ())),
                text=record.get("text", ""),
                pdf=record.get("pdf", ""),
                llm_decision=record.get("llm_decision"),
                llm_score=record.get("llm_score"),
            )
        )
    if not papers:
        raise ValueError(f"no paper records found under {directory}")
    return papers


def _format_value(value: MetricValue) -> str:
    if value.point is None:
        return "undef"
    text = f"{value.point:.2f}"
    if value.ci_low is not None and value.ci_high is not None:
        half_width = max(value.point - value.ci_low, value.ci_high - value.point)
        text += f" ± {half_width:.2f}"
    return text


def render_metrics_table(reports: dict[str, MetricsReport], fmt: str = "text") -> str:
    """Table-shaped report: one row per reviewer/baseline configuration."""
    headers = ["Reviewer", "Balanced Acc", "Accuracy", "F1 Score", "AUC", "FPR", "FNR", "n"]
    rows = []
    for name, report in reports.items():
        rows.append(
            [name]
            + [_format_value(getattr(report, metric)) for metric in METRIC_NAMES]
            + [str(report.n)]
        )
    if fmt == "csv":
        lines = [",".join(headers)]
        lines += [",".join(row) for row in rows]
        return "\n".join(lines)
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines)
