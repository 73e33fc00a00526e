import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles as O
from geoseg.evaluation import (COLORS, METRICS, MEAN, POOLED, ConfusionCounts, aggregate, binarize, confusion,
                               confusion_map, metric_row, metrics, write_metrics_csv)
from geoseg.raster import RasterError

HAND_PRED = np.array([[1, 1], [0, 0]])
HAND_GT = np.array([[1, 0], [1, 0]])


def test_binarize_rule():
    assert binarize(np.full((2, 2), 0.9)).data.all()
    assert not binarize(np.full((2, 2), 0.1)).data.any()
    assert binarize(np.array([[0.5]])).data[0, 0] == 1
    with pytest.raises(ValueError):
        binarize(np.zeros((1, 1)), threshold=1.0)


def test_confusion_cases():
    g = np.random.default_rng(0).random((6, 6)) > 0.5
    c = confusion(g, g)
    assert c.fp == c.fn == 0
    c = confusion(~g, g)
    assert c.tp == c.tn == 0
    assert confusion(HAND_PRED, HAND_GT) == ConfusionCounts(1, 1, 1, 1)
    with pytest.raises(RasterError):
        confusion(np.zeros((2, 2)), np.zeros((2, 3)))


def test_metric_hand_values():
    r = metrics(ConfusionCounts(tp=50, tn=920, fp=10, fn=20))
    assert r.precision == pytest.approx(0.833333, abs=1e-6)
    assert r.recall == pytest.approx(0.714286, abs=1e-6)
    assert r.f1 == pytest.approx(0.769231, abs=1e-6)
    assert r.branching_factor == pytest.approx(0.2)
    assert r.miss_factor == pytest.approx(0.4)
    assert r.iou == pytest.approx(0.625)
    assert r.accuracy == pytest.approx(0.97)
    assert not r.undefined


def test_metric_perfect_and_undefined():
    r = metrics(ConfusionCounts(tp=5, tn=3, fp=0, fn=0))
    assert (r.accuracy, r.precision, r.recall, r.f1, r.iou) == (1, 1, 1, 1, 1)
    assert r.branching_factor == r.miss_factor == 0
    r = metrics(ConfusionCounts(tp=0, tn=3, fp=2, fn=0))
    assert r.precision == 0 and "branching_factor" in r.undefined and "recall" in r.undefined


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 16).flatmap(lambda h: st.integers(1, 16).flatmap(
    lambda w: st.tuples(arrays(np.bool_, (h, w)), arrays(np.bool_, (h, w))))))
def test_metrics_equal_brute_force(pair):
    pred, gt = pair
    tp, tn, fp, fn = O.confusion(pred.tolist(), gt.tolist())
    c = confusion(pred, gt)
    assert (c.tp, c.tn, c.fp, c.fn) == (tp, tn, fp, fn)
    want = O.metric_values(tp, tn, fp, fn)
    got = metrics(c)
    for m in METRICS:
        assert getattr(got, m) == want[m], m
    rgb = confusion_map(pred, gt).to_array().reshape(-1, 3)
    counts = {k: int(np.all(rgb == COLORS[k], axis=1).sum()) for k in ("tp", "tn", "fp", "fn")}
    assert counts == {"tp": tp, "tn": tn, "fp": fp, "fn": fn}


def test_confusion_map_colors():
    assert COLORS == {"tp": (255, 255, 255), "tn": (0, 0, 0), "fp": (255, 0, 0), "fn": (255, 255, 0)}
    ones, zeros = np.ones((3, 3)), np.zeros((3, 3))
    assert (confusion_map(ones, ones).to_array() == 255).all()
    assert (confusion_map(ones, zeros).to_array().reshape(-1, 3) == (255, 0, 0)).all()
    hand = confusion_map(HAND_PRED, HAND_GT).to_array()
    assert {tuple(v) for v in hand.reshape(-1, 3).astype(int)} == set(COLORS.values())


def test_aggregate_single_and_mean():
    c = ConfusionCounts(3, 5, 1, 2)
    for mode in (MEAN, POOLED):
        assert aggregate([("a", c)], mode)["a"] == metrics(c)
    c1 = ConfusionCounts(tp=2, tn=0, fp=3, fn=0)   # IoU 0.4
    c2 = ConfusionCounts(tp=4, tn=0, fp=1, fn=0)   # IoU 0.8
    assert aggregate([("g", c1), ("g", c2)], MEAN)["g"].iou == pytest.approx(0.6)


def test_pooled_differs_from_mean():
    small = ConfusionCounts(tp=0, tn=0, fp=2, fn=2)           # 4-px tile, IoU 0
    big = ConfusionCounts(tp=5000, tn=5000, fp=0, fn=0)       # 10000-px tile, IoU 1
    mean = aggregate([("x", small), ("x", big)], MEAN)["x"].iou
    pooled = aggregate([("x", small), ("x", big)], POOLED)["x"].iou
    assert mean == pytest.approx(0.5)
    assert pooled == pytest.approx(5000 / 5004)


def test_aggregate_groups_sorted():
    c = ConfusionCounts(1, 1, 1, 1)
    assert list(aggregate([("b", c), ("a", c)])) == ["a", "b"]
    with pytest.raises(ValueError):
        aggregate([("a", c)], "median")


def test_metrics_csv(tmp_path):
    c = ConfusionCounts(50, 920, 10, 20)
    write_metrics_csv(tmp_path / "m.csv", [metric_row("img1", "loc", c, metrics(c))])
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "id,group,tp,tn,fp,fn,accuracy,precision,recall,f1,bf,mf,iou"
    assert lines[1] == "img1,loc,50,920,10,20,0.970000,0.833333,0.714286,0.769231,0.200000,0.400000,0.625000"
