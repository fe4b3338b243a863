"""Anomaly regions from frame-score curves."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AnomalyRegion:
    start_frame: int
    end_frame: int  # inclusive
    mean_frame_score: float = float("nan")

    def __post_init__(self):
        if self.start_frame < 0 or self.end_frame < self.start_frame:
            raise ValueError(f"invalid region [{self.start_frame}, {self.end_frame}]")

    @property
    def length(self) -> int:
        return self.end_frame - self.start_frame + 1

    def frames(self) -> range:
        return range(self.start_frame, self.end_frame + 1)


def smooth(scores, window: int) -> np.ndarray:
    """Centred moving average; the window is truncated at the edges."""
    x = np.asarray(scores, dtype=np.float64)
    if window < 1 or window % 2 == 0:
        raise ValueError("smooth_window must be a positive odd integer")
    if window == 1 or x.size == 0:
        return x.copy()
    half = window // 2
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(x.size)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, x.size)
    return (csum[hi] - csum[lo]) / (hi - lo)


def detect_regions(frame_scores, score_threshold: float, min_len: int = 3,
                   smooth_window: int = 5) -> list[AnomalyRegion]:
    """Maximal runs of smoothed score below ``score_threshold`` lasting ``min_len`` frames or more."""
    if min_len < 1:
        raise ValueError("min_len must be >= 1")
    s = smooth(frame_scores, smooth_window)
    low = np.concatenate([[False], s < score_threshold, [False]])
    edges = np.flatnonzero(np.diff(low.astype(np.int8)))
    regions = []
    for start, stop in zip(edges[::2], edges[1::2]):
        if stop - start >= min_len:
            regions.append(AnomalyRegion(int(start), int(stop - 1), float(s[start:stop].mean())))
    return regions


def _frame_set(regions) -> set[int]:
    out = set()
    for r in regions:
        if isinstance(r, AnomalyRegion):
            out.update(r.frames())
        else:
            out.update(range(int(r[0]), int(r[1]) + 1))
    return out


def localization_iou(predicted, truth) -> float:
    """Intersection over union of the frame sets; two empty sets score 1."""
    p, t = _frame_set(predicted), _frame_set(truth)
    union = p | t
    if not union:
        return 1.0
    return len(p & t) / len(union)


def write_frame_csv(path, frame_scores, score_threshold: float, smooth_window: int = 5,
                    hop_seconds: float = 0.016, regions=None) -> None:
    """Per-frame curve: index, start time, raw score, smoothed score, anomalous flag."""
    s = smooth(frame_scores, smooth_window)
    flagged = _frame_set(regions) if regions is not None else {i for i, v in enumerate(s) if v < score_threshold}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index", "time_seconds", "score", "smoothed_score", "anomalous_flag"])
        for i, (raw, sm) in enumerate(zip(frame_scores, s)):
            w.writerow([i, f"{i * hop_seconds:.3f}", f"{raw:.6f}", f"{sm:.6f}", int(i in flagged)])
