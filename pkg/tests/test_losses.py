import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

import loss_oracle
from pcbview.geometry import BBox
from pcbview.losses import (
    NonSmoothPointError,
    SIoUParams,
    angle_cost,
    ciou_loss,
    iou_loss,
    loss_gradient_check,
    sample_smooth_pair,
    siou_loss,
    smoothness_margin,
)
from pcbview.rng import keyed_rng

coord = st.floats(0.1, 0.9)
side = st.floats(0.02, 0.5)
boxes = st.builds(BBox, coord, coord, side, side)


def smooth_pairs(loss_id, n, seed):
    rng = keyed_rng(seed, loss_id, "test-pairs")
    return [sample_smooth_pair(rng, loss_id) for _ in range(n)]


class TestSIoUValues:
    def test_coincident(self):
        b = BBox(0.4, 0.6, 0.2, 0.1)
        r = siou_loss(b, b)
        assert (r.iou, r.angle_lambda, r.distance_delta, r.shape_omega, r.total) == (1.0, 0.0, 0.0, 0.0, 0.0)
        assert np.all(np.isfinite(r.gradient))

    @given(st.floats(1e-6, 1.0))
    def test_lambda_axis_aligned(self, d):
        assert angle_cost(d, 0.0) == pytest.approx(0.0, abs=1e-12)
        assert angle_cost(0.0, d) == pytest.approx(0.0, abs=1e-12)

    @given(st.floats(1e-6, 1.0))
    def test_lambda_diagonal(self, d):
        assert angle_cost(d, d) == pytest.approx(1.0, abs=1e-12)

    def test_lambda_degenerate(self):
        assert angle_cost(0.0, 0.0) == 0.0
        assert angle_cost(1e-10, 1e-10) == 0.0

    @given(st.floats(1e-4, 1.0), st.floats(1e-4, 1.0))
    def test_lambda_symmetric(self, a, b):
        # 1 - 2 sin^2(asin(t) - pi/4) equals 2ab / (a^2 + b^2), which is symmetric
        assert angle_cost(a, b) == pytest.approx(angle_cost(b, a), abs=1e-12)
        assert angle_cost(a, b) == pytest.approx(2 * a * b / (a * a + b * b), abs=1e-12)

    def test_reference_pair(self):
        pred, gt = BBox(0.5, 0.5, 0.2, 0.2), BBox(0.6, 0.55, 0.25, 0.2)
        want = loss_oracle.siou(pred.astuple(), gt.astuple(), theta=4)
        got = siou_loss(pred, gt, SIoUParams(theta_exponent=4))
        assert got.total == pytest.approx(float(want["total"]), abs=1e-9)
        assert got.iou == pytest.approx(float(want["iou"]), abs=1e-12)
        assert got.angle_lambda == pytest.approx(float(want["lambda"]), abs=1e-12)

    @given(boxes, boxes, st.floats(1, 8))
    def test_matches_oracle(self, pred, gt, theta):
        want = loss_oracle.siou(pred.astuple(), gt.astuple(), theta=theta)
        got = siou_loss(pred, gt, SIoUParams(theta_exponent=theta))
        assert got.total == pytest.approx(float(want["total"]), abs=1e-9)
        assert got.distance_delta == pytest.approx(float(want["delta"]), abs=1e-9)
        assert got.shape_omega == pytest.approx(float(want["omega"]), abs=1e-9)

    @given(boxes, boxes)
    def test_breakdown_invariants(self, pred, gt):
        r = siou_loss(pred, gt)
        assert 0 <= r.iou <= 1 and 0 <= r.angle_lambda <= 1
        assert 0 <= r.distance_delta < 2 and 0 <= r.shape_omega < 2
        assert r.total == pytest.approx(1 - r.iou + (r.distance_delta + r.shape_omega) / 2, abs=1e-12)
        assert 0 <= r.total < 3
        assert r.total >= 1 - r.iou - 1e-15

    @given(boxes, boxes)
    def test_zero_only_when_equal(self, pred, gt):
        assume(pred != gt)
        assert siou_loss(pred, gt).total > 0

    @given(boxes, boxes, st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
    def test_translation_invariance(self, pred, gt, tx, ty):
        a = siou_loss(pred, gt)
        b = siou_loss(pred.shifted(tx, ty), gt.shifted(tx, ty))
        for f in ("iou", "angle_lambda", "distance_delta", "shape_omega", "total"):
            assert getattr(b, f) == pytest.approx(getattr(a, f), abs=1e-12), f
        assert np.allclose(a.gradient, b.gradient, atol=1e-9)

    @given(boxes, boxes, st.floats(0.2, 5.0))
    def test_scale_invariance(self, pred, gt, s):
        def scaled(b):
            return BBox(b.cx * s, b.cy * s, b.w * s, b.h * s)

        a = siou_loss(pred, gt)
        b = siou_loss(scaled(pred), scaled(gt))
        for f in ("iou", "angle_lambda", "distance_delta", "shape_omega"):
            assert getattr(b, f) == pytest.approx(getattr(a, f), abs=1e-12), f

    def test_params_validation(self):
        for kw in (dict(theta_exponent=0.5), dict(theta_exponent=9), dict(sigma_epsilon=0)):
            with pytest.raises(ValueError):
                SIoUParams(**kw)


class TestCIoUValues:
    def test_coincident(self):
        b = BBox(0.4, 0.6, 0.2, 0.1)
        assert ciou_loss(b, b).total == 0.0

    @given(boxes, coord, coord, st.floats(0.2, 3.0))
    def test_same_aspect(self, pred, gx, gy, s):
        gt = BBox(gx, gy, pred.w * s, pred.h * s)
        want = loss_oracle.ciou(pred.astuple(), gt.astuple())
        assert float(want["v"]) == pytest.approx(0.0, abs=1e-12)
        r = ciou_loss(pred, gt)
        assert r.shape_omega == pytest.approx(0.0, abs=1e-12)
        assert r.total == pytest.approx(1 - r.iou + r.distance_delta, abs=1e-12)

    @given(boxes, boxes)
    def test_matches_oracle(self, pred, gt):
        want = loss_oracle.ciou(pred.astuple(), gt.astuple())
        got = ciou_loss(pred, gt)
        assert got.total == pytest.approx(float(want["total"]), abs=1e-9)
        assert got.distance_delta == pytest.approx(float(want["dist"]), abs=1e-9)
        assert got.shape_omega == pytest.approx(float(want["aspect"]), abs=1e-9)
        assert got.angle_lambda == 0.0


class TestGradients:
    @pytest.mark.parametrize("loss_id", ["siou", "ciou"])
    def test_against_high_precision_derivative(self, loss_id):
        oracle = loss_oracle.siou if loss_id == "siou" else loss_oracle.ciou
        fn = siou_loss if loss_id == "siou" else ciou_loss
        for pred, gt in smooth_pairs(loss_id, 40, seed=11):
            want = loss_oracle.gradient(oracle, pred.astuple(), gt.astuple())
            got = fn(pred, gt).gradient
            assert np.allclose(got, want, rtol=1e-7, atol=1e-9), (pred, gt)

    @pytest.mark.parametrize("loss_id", ["siou", "ciou", "iou"])
    def test_central_differences(self, loss_id):
        worst = max(loss_gradient_check(loss_id, p, g) for p, g in smooth_pairs(loss_id, 300, seed=12))
        assert worst <= 1e-3

    def test_coincident_rejected(self):
        b = BBox(0.5, 0.5, 0.2, 0.2)
        for loss_id in ("siou", "ciou"):
            with pytest.raises(NonSmoothPointError):
                loss_gradient_check(loss_id, b, b)

    def test_edge_tie_rejected(self):
        pred, gt = BBox(0.5, 0.5, 0.2, 0.2), BBox(0.5, 0.6, 0.2, 0.3)  # shared left and right edges
        with pytest.raises(NonSmoothPointError):
            loss_gradient_check("ciou", pred, gt)

    def test_translation_pair(self):
        pred, gt = BBox(0.41, 0.52, 0.2, 0.13), BBox(0.55, 0.47, 0.17, 0.22)
        for loss_id in ("siou", "ciou"):
            a = loss_gradient_check(loss_id, pred, gt)
            b = loss_gradient_check(loss_id, pred.shifted(0.1, 0.1), gt.shifted(0.1, 0.1))
            # same relative geometry; only float rounding of the shifted coordinates differs
            assert b == pytest.approx(a, abs=1e-7)

    def test_margin_positive_on_samples(self):
        for p, g in smooth_pairs("siou", 50, seed=13):
            assert smoothness_margin("siou", p, g, None) >= 1e-4

    def test_unknown_loss(self):
        with pytest.raises(ValueError):
            loss_gradient_check("giou", BBox(0.5, 0.5, 0.1, 0.1), BBox(0.6, 0.5, 0.1, 0.1))


def test_iou_loss_gradient_sign():
    # growing a prediction that sits inside the target raises IoU
    r = iou_loss(BBox(0.5, 0.5, 0.1, 0.1), BBox(0.5, 0.5, 0.3, 0.3))
    assert r.gradient[2] < 0 and r.gradient[3] < 0
    assert r.total == pytest.approx(1 - 1 / 9)
