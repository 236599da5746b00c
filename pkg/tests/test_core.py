import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from objtrans.core import (
    BBox,
    CombineWeights,
    Detection,
    HsvParams,
    ImageFrame,
    InstanceMask,
    UncertaintyScore,
    bbox_iou,
    population_variance,
)


def boxes(draw_w_min=0.01):
    return st.builds(
        BBox,
        cx=st.floats(0.0, 1.0),
        cy=st.floats(0.0, 1.0),
        w=st.floats(draw_w_min, 1.0),
        h=st.floats(draw_w_min, 1.0),
    )


class TestBBox:
    def test_corners_roundtrip(self):
        b = BBox(0.5, 0.5, 0.2, 0.4)
        back = BBox.from_corners(*b.corners())
        assert back.cx == pytest.approx(b.cx, abs=1e-15)
        assert back.w == pytest.approx(b.w, abs=1e-15)
        assert back.h == pytest.approx(b.h, abs=1e-15)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(cx=-0.1, cy=0.5, w=0.1, h=0.1),
            dict(cx=0.5, cy=1.5, w=0.1, h=0.1),
            dict(cx=0.5, cy=0.5, w=0.0, h=0.1),
            dict(cx=0.5, cy=0.5, w=0.1, h=1.2),
        ],
    )
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            BBox(**kwargs)

    def test_clipped_overhanging(self):
        b = BBox(0.02, 0.5, 0.2, 0.2)
        c = b.clipped()
        x0, y0, x1, y1 = c.corners()
        assert x0 == 0.0 and x1 == pytest.approx(0.12)

    def test_pixel_rect(self):
        b = BBox(0.5, 0.5, 0.5, 0.25)
        assert b.pixel_rect(64, 64) == (16, 24, 48, 40)


class TestIoU:
    def test_identical_box_is_one(self):
        b = BBox(0.3, 0.4, 0.2, 0.3)
        assert bbox_iou(b, b) == 1.0

    def test_disjoint_is_zero(self):
        a = BBox(0.2, 0.2, 0.1, 0.1)
        b = BBox(0.8, 0.8, 0.1, 0.1)
        assert bbox_iou(a, b) == 0.0

    def test_corner_overlap_one_seventh(self):
        # (0,0)-(2,2) and (1,1)-(3,3) in a 4x4 pixel frame: intersection 1,
        # union 7.
        a = BBox.from_corners(0.0, 0.0, 0.5, 0.5)
        b = BBox.from_corners(0.25, 0.25, 0.75, 0.75)
        assert bbox_iou(a, b) == pytest.approx(1.0 / 7.0, abs=1e-12)

    @given(boxes(), boxes())
    def test_symmetric_and_bounded(self, a, b):
        ab = bbox_iou(a, b)
        assert ab == bbox_iou(b, a)
        assert 0.0 <= ab <= 1.0 + 1e-12

    @given(boxes())
    def test_self_iou_is_one(self, b):
        assert bbox_iou(b, b) == pytest.approx(1.0, abs=1e-12)


def naive_variance(xs):
    # deliberate plain-sum oracle, kept independent of the implementation
    mean = sum(xs) / len(xs)
    return sum((x - mean) ** 2 for x in xs) / len(xs)


class TestPopulationVariance:
    def test_constant_sequence(self):
        assert population_variance([0.8, 0.8, 0.8]) == 0.0

    def test_two_point(self):
        assert population_variance([0.0, 1.0]) == 0.25

    def test_hand_computed(self):
        assert population_variance([0.1, 0.2, 0.3, 0.4]) == pytest.approx(0.0125, abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no samples"):
            population_variance([])

    @given(st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=50))
    def test_matches_naive_oracle(self, xs):
        # score/coordinate scale, where the absolute 1e-12 agreement holds
        assert population_variance(xs) == pytest.approx(naive_variance(xs), abs=1e-12)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50))
    def test_matches_naive_oracle_large_scale(self, xs):
        assert population_variance(xs) == pytest.approx(
            naive_variance(xs), rel=1e-9, abs=1e-12
        )

    @given(
        st.lists(st.floats(-1.0, 1.0), min_size=2, max_size=30),
        st.floats(-1.0, 1.0),
    )
    def test_translation_invariant(self, xs, c):
        # 1e-12 absolute agreement is a score/normalized-coordinate-scale
        # guarantee; larger magnitudes hit the float noise floor
        shifted = [x + c for x in xs]
        assert population_variance(shifted) == pytest.approx(
            population_variance(xs), abs=1e-12
        )

    @given(
        st.lists(st.floats(-100, 100), min_size=2, max_size=30),
        st.floats(-50, 50),
    )
    def test_translation_invariant_large_scale(self, xs, c):
        shifted = [x + c for x in xs]
        assert population_variance(shifted) == pytest.approx(
            population_variance(xs), rel=1e-9, abs=1e-11
        )

    @given(
        st.lists(st.floats(-100, 100), min_size=2, max_size=30),
        st.floats(0.01, 50),
    )
    def test_scaling_quadratic(self, xs, k):
        expected = k * k * population_variance(xs)
        got = population_variance([k * x for x in xs])
        assert got == pytest.approx(expected, rel=1e-9, abs=1e-18)


class TestValueTypes:
    def test_image_frame_validates_and_freezes(self):
        frame = ImageFrame(np.zeros((4, 6, 3), dtype=np.uint8), image_id="a")
        assert (frame.width, frame.height) == (6, 4)
        with pytest.raises(ValueError):
            frame.pixels[0, 0, 0] = 1
        with pytest.raises(ValueError):
            ImageFrame(np.zeros((4, 6, 4), dtype=np.uint8))
        with pytest.raises(ValueError):
            ImageFrame(np.zeros((4, 6, 3), dtype=np.float32))

    def test_instance_mask_requires_coverage(self):
        with pytest.raises(ValueError, match="empty"):
            InstanceMask("a", 1, 0, np.zeros((4, 4), dtype=bool))
        bm = np.zeros((4, 4), dtype=bool)
        bm[1, 2] = True
        assert InstanceMask("a", 1, 0, bm).pixel_count == 1

    def test_detection_score_range(self):
        b = BBox(0.5, 0.5, 0.1, 0.1)
        with pytest.raises(ValueError):
            Detection(bbox=b, class_id=0, score=1.5)

    def test_hsv_params_ranges(self):
        assert HsvParams.identity().is_identity
        with pytest.raises(ValueError):
            HsvParams(hue_shift=180.0)
        with pytest.raises(ValueError):
            HsvParams(sat_scale=0.0)

    def test_combine_weights_sum(self):
        w = CombineWeights(0.25, 0.75)
        assert w.combine(2.0, 4.0) == pytest.approx(3.5)
        with pytest.raises(ValueError):
            CombineWeights(0.3, 0.75)

    def test_uncertainty_score_nonnegative(self):
        with pytest.raises(ValueError):
            UncertaintyScore(u_class=-1e-9, u_bbox=0.0, u_combined=0.0, n_matched_runs=0)
