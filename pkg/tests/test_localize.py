import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frameqa.localize import AnomalyRegion, detect_regions, localization_iou, smooth, write_frame_csv

from oracles import low_runs


def test_constant_curve_above_threshold():
    assert detect_regions(np.full(50, 8.0), 7.0) == []


def test_step_curve_recovers_span():
    s = np.full(120, 8.0)
    s[37:88] = 6.0
    regions = detect_regions(s, 7.0, min_len=5, smooth_window=1)
    assert [(r.start_frame, r.end_frame) for r in regions] == [(37, 87)]
    assert regions[0].mean_frame_score == 6.0


def test_iou_examples():
    assert localization_iou([(37, 87)], [(37, 87)]) == 1.0
    assert localization_iou([(0, 5)], [(6, 9)]) == 0.0
    assert localization_iou([(37, 87)], [(40, 90)]) == pytest.approx(48 / 54)
    assert localization_iou([], []) == 1.0
    assert localization_iou([AnomalyRegion(0, 3)], [(2, 5)]) == pytest.approx(2 / 6)


curves = st.lists(st.floats(0, 10, allow_nan=False), min_size=0, max_size=60)


@settings(max_examples=100)
@given(scores=curves, thr=st.floats(0, 10), min_len=st.integers(1, 6), window=st.sampled_from([1, 3, 5, 7]))
def test_regions_match_run_oracle(scores, thr, min_len, window):
    regions = detect_regions(scores, thr, min_len, window)
    want = low_runs(smooth(scores, window), thr, min_len)
    assert [(r.start_frame, r.end_frame) for r in regions] == want
    for a, b in zip(regions, regions[1:]):
        assert a.end_frame + 1 < b.start_frame
    assert all(r.length >= min_len for r in regions)


@settings(max_examples=100)
@given(scores=curves, t1=st.floats(0, 10), t2=st.floats(0, 10))
def test_detection_monotone_in_threshold(scores, t1, t2):
    lo, hi = sorted((t1, t2))
    flagged = lambda t: {f for r in detect_regions(scores, t, 1, 3) for f in r.frames()}  # noqa: E731
    assert flagged(lo) <= flagged(hi)


@given(scores=curves)
def test_window_one_is_identity(scores):
    assert np.array_equal(smooth(scores, 1), np.asarray(scores, dtype=float))


def test_smooth_truncates_edges():
    assert np.allclose(smooth([0, 3, 6, 9], 3), [1.5, 3, 6, 7.5])
    with pytest.raises(ValueError):
        smooth([1, 2], 4)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        AnomalyRegion(5, 2)
    with pytest.raises(ValueError):
        detect_regions([1.0], 2.0, min_len=0)


def test_frame_csv(tmp_path):
    s = np.array([8, 8, 5, 5, 5, 8], dtype=float)
    path = tmp_path / "f.csv"
    write_frame_csv(path, s, 7.0, smooth_window=1, regions=detect_regions(s, 7.0, 3, 1))
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0]) == ["frame_index", "time_seconds", "score", "smoothed_score", "anomalous_flag"]
    assert [int(r["anomalous_flag"]) for r in rows] == [0, 0, 1, 1, 1, 0]
    assert rows[2]["time_seconds"] == "0.032"
