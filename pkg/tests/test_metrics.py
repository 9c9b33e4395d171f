import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import metric_oracle as oracle
from proxyformer.metrics import (MAP_THRESHOLDS, boundary_f, default_tolerance, evaluate, jaccard, mean_ap,
                                 overall_and_mean_iou, precision_at_k)


class TestJaccard:
    def test_identical(self):
        m = np.zeros((5, 5))
        m[1:3, 1:4] = 1
        assert jaccard(m, m) == 1.0

    def test_disjoint(self):
        a, b = np.zeros((4, 4)), np.zeros((4, 4))
        a[0, 0] = b[3, 3] = 1
        assert jaccard(a, b) == 0.0

    def test_half(self):
        pred = np.zeros((4, 4))
        pred[:, :2] = 1
        assert jaccard(pred, np.ones((4, 4))) == 0.5

    def test_both_empty(self):
        assert jaccard(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            jaccard(np.zeros((3, 3)), np.zeros((3, 4)))


class TestBoundaryF:
    def test_identical(self):
        m = np.zeros((8, 8))
        m[2:6, 1:5] = 1
        assert boundary_f(m, m) == 1.0

    def test_empty_prediction(self):
        gt = np.zeros((8, 8))
        gt[2:5, 2:5] = 1
        assert boundary_f(np.zeros((8, 8)), gt) == 0.0

    def test_shifted_square(self):
        gt = np.zeros((10, 10))
        gt[3:7, 3:7] = 1
        pred = np.roll(gt, 1, axis=1)
        assert boundary_f(pred, gt, tolerance=1) == 1.0
        assert oracle.f_measure(pred.tolist(), gt.tolist(), 1) == 1.0

    def test_negative_tolerance(self):
        with pytest.raises(ValueError):
            boundary_f(np.zeros((3, 3)), np.zeros((3, 3)), tolerance=-1)

    def test_default_tolerance(self):
        assert default_tolerance((64, 64)) == 1
        assert default_tolerance((480, 854)) == 8

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 9).flatmap(lambda n: st.tuples(
        arrays(np.uint8, (n, n), elements=st.integers(0, 1)),
        arrays(np.uint8, (n, n), elements=st.integers(0, 1)),
        st.integers(0, 3))))
    def test_matches_pixel_scan(self, case):
        a, b, tol = case
        got = boundary_f(a, b, tol)
        assert abs(got - oracle.f_measure(a.tolist(), b.tolist(), tol)) < 1e-12
        assert abs(got - boundary_f(b, a, tol)) < 1e-12
        assert 0 <= got <= 1


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 9).flatmap(lambda n: st.tuples(
    arrays(np.uint8, (n, n), elements=st.integers(0, 1)), arrays(np.uint8, (n, n), elements=st.integers(0, 1)))))
def test_jaccard_symmetric_and_oracle(pair):
    a, b = pair
    assert jaccard(a, b) == jaccard(b, a)
    assert abs(jaccard(a, b) - oracle.iou(a.tolist(), b.tolist())) < 1e-12


class TestPrecision:
    def test_count(self):
        assert precision_at_k([0.6, 0.4], 0.5) == 0.5

    def test_saturation(self):
        for k in (0.5, 0.9, 0.99):
            assert precision_at_k([1.0, 1.0], k) == 1.0

    def test_strict(self):
        assert precision_at_k([1.0], 1.0) == 0.0
        assert precision_at_k([0.5], 0.5) == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            precision_at_k([], 0.5)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
    def test_monotone_and_map_bound(self, ious):
        vals = [precision_at_k(ious, k) for k in (0.5, 0.6, 0.7, 0.8, 0.9)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert mean_ap(ious) <= precision_at_k(ious, 0.5)


class TestMeanAP:
    def test_grid(self):
        assert MAP_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)

    def test_extremes(self):
        assert mean_ap([1.0, 1.0]) == 1.0
        assert mean_ap([0.0]) == 0.0

    def test_threshold_count(self):
        assert mean_ap([0.72]) == 0.5

    def test_empty(self):
        with pytest.raises(ValueError):
            mean_ap([])


class TestOverallMean:
    def test_singleton(self):
        a, b = np.zeros((4, 4)), np.zeros((4, 4))
        a[:2] = 1
        b[1:3] = 1
        o, m = overall_and_mean_iou([(a, b)])
        assert o == m

    def test_equal_unions(self):
        a = np.zeros((4, 4))
        a[:2] = 1
        p, g = np.zeros((4, 4)), np.zeros((4, 4))
        p[2], g[3] = 1, 1
        o, m = overall_and_mean_iou([(a, a), (p, g)])
        assert o == 0.5 and m == 0.5

    def test_weighted_toward_larger(self):
        big = np.ones((6, 6))
        small_p, small_g = np.zeros((6, 6)), np.zeros((6, 6))
        small_p[0, 0] = 1
        small_g[5, 5] = 1
        pairs = [(big, big), (small_p, small_g)]
        o, m = overall_and_mean_iou(pairs)
        assert o == 36 / 38 and m == 0.5
        inter = sum(np.logical_and(p, g).sum() for p, g in pairs)
        union = sum(np.logical_or(p, g).sum() for p, g in pairs)
        assert o == inter / union

    def test_empty(self):
        with pytest.raises(ValueError):
            overall_and_mean_iou([])


class TestEvaluate:
    def test_identity(self):
        _, gts = oracle.make_fixture(1)
        rep = evaluate(gts, gts)
        for v in (rep.J, rep.F, rep.JandF, rep.mAP, rep.overall_iou, rep.mean_iou):
            assert v == 1.0
        assert all(v == 1.0 for v in rep.precision_at.values())

    def test_empty_predictions(self):
        _, gts = oracle.make_fixture(2)
        nonempty = [g for g in gts if all(f.any() for f in g)]
        rep = evaluate([np.zeros_like(g) for g in nonempty], nonempty)
        assert rep.J == 0.0 and rep.F == 0.0

    def test_matches_brute_force(self):
        preds, gts = oracle.make_fixture(0)
        rep = evaluate(preds, gts)
        ref = oracle.report([p.tolist() for p in preds], [g.tolist() for g in gts])
        for key in ("J", "F", "JandF", "mAP", "overall_iou", "mean_iou"):
            assert abs(getattr(rep, key) - ref[key]) <= 1e-12, key
        for k, v in ref["precision_at"].items():
            assert abs(rep.precision_at[k] - v) <= 1e-12
        assert rep.JandF == (rep.J + rep.F) / 2

    def test_count_mismatch(self):
        preds, gts = oracle.make_fixture(0)
        with pytest.raises(ValueError):
            evaluate(preds[:3], gts)
        with pytest.raises(ValueError):
            evaluate([], [])

    def test_report_json(self):
        preds, gts = oracle.make_fixture(0)
        rep = evaluate(preds, gts)
        text = rep.to_json(config_hash="abc")
        d = json.loads(text)
        assert list(d) == ["J", "F", "JandF", "precision_at", "mAP", "overall_iou", "mean_iou", "config_hash"]
        assert set(d["precision_at"]) <= {"0.5", "0.6", "0.7", "0.8", "0.9"}
        assert text == evaluate(preds, gts).to_json(config_hash="abc")
        for key in ("J", "F", "JandF", "mAP", "overall_iou", "mean_iou"):
            assert 0 <= d[key] <= 1
