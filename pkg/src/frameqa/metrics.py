"""Correlation and clean-detection metrics over per-utterance predictions."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

CLEAN_TARGET = 8.0
DEFAULT_THRESHOLD = 7.1


class UndefinedCorrelationError(ValueError):
    pass


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise UndefinedCorrelationError("correlation needs at least two points")
    return x, y


def lcc(x, y) -> float:
    """Pearson linear correlation coefficient."""
    x, y = _pair(x, y)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def srcc(x, y) -> float:
    """Spearman rank correlation; ties get their average rank."""
    x, y = _pair(x, y)
    return lcc(rankdata(x, method="average"), rankdata(y, method="average"))


@dataclass
class F1Result:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False  # a zero denominator was replaced by 0


def f1_from_pr(precision: float, recall: float) -> float:
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def clean_f1(targets_clean, predicted_scores, threshold: float = DEFAULT_THRESHOLD) -> F1Result:
    """Precision/recall/F1 for the clean class; predicted clean iff score >= threshold."""
    truth = np.asarray(targets_clean, dtype=bool)
    scores = np.asarray(predicted_scores, dtype=np.float64)
    if truth.shape != scores.shape:
        raise ValueError("targets and scores differ in length")
    pred = scores >= threshold
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    degenerate = False
    if tp + fp == 0:
        precision, degenerate = 0.0, True
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall, degenerate = 0.0, True
    else:
        recall = tp / (tp + fn)
    return F1Result(precision, recall, f1_from_pr(precision, recall), degenerate)


def threshold_from_train(train_predictions, train_clean_flags) -> float:
    """Clean/noisy threshold maximizing F1 on training predictions.

    Candidates are midpoints between adjacent distinct sorted scores; on
    ties the higher threshold wins.
    """
    scores = np.asarray(train_predictions, dtype=np.float64)
    flags = np.asarray(train_clean_flags, dtype=bool)
    if flags.all() or not flags.any():
        raise ValueError("threshold fitting needs both clean and noisy utterances")
    uniq = np.unique(scores)
    if uniq.size < 2:
        raise ValueError("all training scores are identical")
    candidates = (uniq[:-1] + uniq[1:]) / 2.0
    order = np.argsort(-scores, kind="stable")
    s_sorted, f_sorted = scores[order], flags[order]
    tp_cum = np.cumsum(f_sorted)
    n_pos = flags.sum()
    best_t, best_f1 = candidates[-1], -1.0
    for t in candidates[::-1]:
        k = int(np.searchsorted(-s_sorted, -t, side="left"))  # count of scores >= t
        tp = tp_cum[k - 1] if k else 0
        p = tp / k if k else 0.0
        r = tp / n_pos
        f = f1_from_pr(p, r)
        if f > best_f1:
            best_t, best_f1 = t, f
    return float(best_t)


@dataclass
class EvalRow:
    id: str
    target: float
    predicted: float
    is_clean: bool
    predicted_clean: bool


@dataclass
class EvalReport:
    lcc: float
    srcc: float
    precision: float
    recall: float
    f1: float
    threshold: float
    rows: list[EvalRow] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    COLUMNS = ("LCC", "SRCC", "Precision", "Recall", "F1")

    def table(self) -> str:
        head = " ".join(f"{c:>9}" for c in self.COLUMNS)
        vals = " ".join(f"{v:>9.3f}" for v in (self.lcc, self.srcc, self.precision, self.recall, self.f1))
        return f"{head}\n{vals}\n(threshold {self.threshold:.3f}, {len(self.rows)} utterances)"

    def records(self) -> str:
        """Line-delimited JSON: one summary line, then one line per utterance."""
        summary = {"kind": "summary", "lcc": self.lcc, "srcc": self.srcc, "precision": self.precision,
                   "recall": self.recall, "f1": self.f1, "threshold": self.threshold, **self.meta}
        lines = [json.dumps(summary, sort_keys=True)]
        lines += [json.dumps({"kind": "utterance", **asdict(r)}, sort_keys=True) for r in self.rows]
        return "\n".join(lines) + "\n"


def evaluate(ids, targets, predicted, threshold: float = DEFAULT_THRESHOLD,
             clean_target: float = CLEAN_TARGET, meta: dict | None = None) -> EvalReport:
    targets = np.asarray(targets, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    is_clean = targets == clean_target
    f = clean_f1(is_clean, predicted, threshold)
    rows = [EvalRow(str(i), float(t), float(p), bool(c), bool(p >= threshold))
            for i, t, p, c in zip(ids, targets, predicted, is_clean)]
    return EvalReport(lcc(predicted, targets), srcc(predicted, targets), f.precision, f.recall, f.f1,
                      float(threshold), rows, meta or {})
