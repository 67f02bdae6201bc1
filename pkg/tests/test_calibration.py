import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nmtcal.calibration import (
    CalibrationBin,
    CalibrationClass,
    EceReport,
    bin_indices,
    bin_predictions,
    classify_predictions,
    ece,
    ece_report,
    merge_bins,
    reliability_diagram,
)

from oracles import ece_oracle

probs = st.floats(0.0, 1.0, allow_nan=False)
samples = st.lists(st.tuples(probs, st.booleans()), min_size=1, max_size=60)


def split(s):
    return [c for c, _ in s], [k for _, k in s]


def test_bins_width_rule():
    bins = bin_predictions(([0.05, 0.95], [1, 0]), 10)
    assert bins[0].count == 1 and bins[9].count == 1
    assert sum(b.count for b in bins) == 2


@pytest.mark.parametrize("c, expected", [(0.1, 0), (0.0, 0), (1.0, 9), (0.3, 2), (0.7, 6), (0.30000001, 3)])
def test_bin_boundaries_upper_inclusive(c, expected):
    assert bin_indices([c], 10)[0] == expected


def test_singleton_bin_averages():
    bins = bin_predictions(([0.7], [True]), 10)
    b = bins[6]
    assert b.count == 1 and b.avg_confidence == 0.7 and b.avg_accuracy == 1.0


def test_empty_predictions_rejected():
    with pytest.raises(ValueError):
        bin_predictions(([], []), 10)


def test_ece_perfect():
    conf = [0.7] * 10
    correct = [1] * 7 + [0] * 3
    assert ece(bin_predictions((conf, correct), 10)) == pytest.approx(0.0, abs=1e-12)


def test_ece_two_predictions():
    # 0.5*|1-0.8| + 0.5*|1-0.6|
    assert ece(bin_predictions(([0.8, 0.6], [1, 1]), 10), 2) == pytest.approx(0.3, abs=1e-12)


def test_ece_single_bin():
    b = [CalibrationBin(0.8, 0.9, 4, 0.9, 0.5)]
    assert ece(b, 4) == pytest.approx(0.4)


def test_ece_n_mismatch():
    with pytest.raises(ValueError):
        ece(bin_predictions(([0.5], [1]), 10), 3)


@given(samples)
def test_ece_matches_loop_oracle(s):
    conf, correct = split(s)
    assert ece_report((conf, correct), 10).ece == pytest.approx(ece_oracle(conf, correct, 10), abs=1e-12)


@given(samples, st.integers(1, 20))
def test_ece_bounds_and_counts(s, m):
    conf, correct = split(s)
    r = ece_report((conf, correct), m)
    assert 0.0 <= r.ece <= 1.0
    assert sum(b.count for b in r.bins) == r.n == len(s)
    for b in r.bins:
        if b.count:
            assert b.lower - 1e-12 <= b.avg_confidence <= b.upper + 1e-12
            assert 0.0 <= b.avg_accuracy <= 1.0


@given(samples)
def test_single_bin_is_global_gap(s):
    conf, correct = split(s)
    assert ece_report((conf, correct), 1).ece == pytest.approx(abs(np.mean(correct) - np.mean(conf)), abs=1e-12)


@given(samples, st.randoms())
def test_ece_permutation_invariant(s, rnd):
    shuffled = list(s)
    rnd.shuffle(shuffled)
    a = ece_report(split(s), 10).ece
    b = ece_report(split(shuffled), 10).ece
    assert a == pytest.approx(b, abs=1e-12)


@given(samples, samples)
def test_merge_shards(a, b):
    whole = bin_predictions(split(a + b), 10)
    merged = merge_bins(bin_predictions(split(a), 10), bin_predictions(split(b), 10))
    for x, y in zip(whole, merged):
        assert x.count == y.count
        assert x.avg_confidence == pytest.approx(y.avg_confidence)
        assert x.avg_accuracy == pytest.approx(y.avg_accuracy)


def test_classify_over_under_well():
    bins = [CalibrationBin(0.7, 0.8, 5, 0.8, 0.6), CalibrationBin(0.3, 0.4, 5, 0.4, 0.7),
            CalibrationBin(0.5, 0.6, 5, 0.55, 0.55)]
    preds = ([0.75, 0.35, 0.55], [1, 1, 1])
    # bins are matched by confidence index, so build a full 10-bin list
    full = [CalibrationBin(i / 10, (i + 1) / 10, 0, 0.0, 0.0) for i in range(10)]
    full[7], full[3], full[5] = bins
    out = classify_predictions(preds, full, 0.15)
    assert out == [CalibrationClass.OVER, CalibrationClass.UNDER, CalibrationClass.WELL]


@given(samples)
def test_classify_infinite_threshold(s):
    bins = bin_predictions(split(s), 10)
    assert set(classify_predictions(split(s), bins, math.inf)) == {CalibrationClass.WELL}


@given(samples)
def test_classify_zero_threshold_follows_gap_sign(s):
    conf, correct = split(s)
    bins = bin_predictions((conf, correct), 10)
    out = classify_predictions((conf, correct), bins, 0.0)
    for c, label in zip(bin_indices(conf, 10), out):
        gap = bins[c].avg_confidence - bins[c].avg_accuracy
        if gap > 0:
            assert label is CalibrationClass.OVER
        elif gap < 0:
            assert label is CalibrationClass.UNDER
        else:
            assert label is CalibrationClass.WELL


def test_reliability_diagram_sign_and_rows():
    r = ece_report(([0.8], [1]), 10)
    rows = reliability_diagram(r)
    assert len(rows) == 10
    assert rows[7].gap == pytest.approx(-0.2)
    assert rows[7].bin_center == pytest.approx(0.75)


def test_reliability_diagram_perfect():
    r = ece_report(([0.5, 0.5], [1, 0]), 10)
    assert all(row.gap == 0 for row in reliability_diagram(r))


def test_report_dict():
    r = ece_report(([0.8, 0.6], [1, 1]), 10)
    d = r.to_dict()
    assert d["n"] == 2 and len(d["bins"]) == 10
    assert isinstance(r, EceReport)
