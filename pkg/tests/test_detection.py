"""Average precision for box detection, against a point-scan oracle."""

import math

import numpy as np
import pytest

from tableseq.core import BBox
from tableseq.metrics.detection import (
    COCO_THRESHOLDS,
    ap_from_curve,
    average_precision,
    detection_ap,
    pr_curve,
)

from oracles import naive_average_precision


def box(x0, y0, x1, y1):
    return BBox(x0, y0, x1, y1)


class TestSingleImage:
    def test_exact_match_is_one(self):
        gts = [[box(0, 0, 10, 10)]]
        preds = [[(box(0, 0, 10, 10), 0.9)]]
        assert average_precision(preds, gts, 0.5) == 1.0
        assert average_precision(preds, gts, 0.95) == 1.0

    def test_one_exact_of_two_is_exactly_half(self):
        gts = [[box(0, 0, 10, 10), box(20, 0, 30, 10)]]
        preds = [[(box(0, 0, 10, 10), 0.9)]]
        assert average_precision(preds, gts, 0.5) == 0.5

    def test_complete_miss_is_zero(self):
        gts = [[box(0, 0, 10, 10)]]
        preds = [[(box(50, 50, 60, 60), 0.9)]]
        assert average_precision(preds, gts, 0.5) == 0.0

    def test_no_gt_conventions(self):
        assert average_precision([[]], [[]], 0.5) == 1.0
        assert average_precision([[(box(0, 0, 1, 1), 0.5)]], [[]], 0.5) == 0.0

    def test_duplicate_predictions_one_credit(self):
        gts = [[box(0, 0, 10, 10)]]
        preds = [[(box(0, 0, 10, 10), 0.9), (box(0, 0, 10, 10), 0.8)]]
        curve = pr_curve(preds, gts, 0.5)
        # first is a hit, second cannot re-claim the matched gt
        assert curve.recalls == (1.0, 1.0)
        assert curve.precisions == (1.0, 0.5)
        assert ap_from_curve(curve) == 1.0

    def test_interleaved_fp_hand_value(self):
        gts = [[box(0, 0, 10, 10), box(20, 0, 30, 10), box(40, 0, 50, 10)]]
        preds = [[
            (box(0, 0, 10, 10), 0.9),
            (box(70, 0, 80, 10), 0.8),
            (box(20, 0, 30, 10), 0.7),
        ]]
        # points: (1/3, 1), (1/3, 1/2), (2/3, 2/3); all-point area:
        # 1/3 * 1 + 1/3 * 2/3 = 5/9
        assert math.isclose(average_precision(preds, gts, 0.5), 5 / 9)

    def test_iou_threshold_separates(self):
        gts = [[box(0, 0, 10, 10)]]
        preds = [[(box(0, 0, 10, 8), 0.9)]]  # IoU 0.8
        assert average_precision(preds, gts, 0.5) == 1.0
        assert average_precision(preds, gts, 0.9) == 0.0


class TestMultiImage:
    def test_boxes_do_not_match_across_images(self):
        gts = [[box(0, 0, 10, 10)], [box(0, 0, 10, 10)]]
        preds = [[], [(box(0, 0, 10, 10), 0.9)]]
        assert average_precision(preds, gts, 0.5) == 0.5

    def test_scores_pool_globally(self):
        gts = [[box(0, 0, 10, 10)], [box(0, 0, 10, 10)]]
        # high-score miss in image 0 sits before the hit in image 1
        preds = [[(box(50, 50, 60, 60), 0.95)],
                 [(box(0, 0, 10, 10), 0.9)]]
        # points: (0, 0), (1/2, 1/2) -> area 1/2 * 1/2
        assert math.isclose(average_precision(preds, gts, 0.5), 0.25)


class TestAggregates:
    def test_coco_thresholds(self):
        assert COCO_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75,
                                   0.8, 0.85, 0.9, 0.95)

    def test_detection_ap_mean(self):
        gts = [[box(0, 0, 10, 10)]]
        preds = [[(box(0, 0, 10, 8), 0.9)]]  # IoU = 0.8
        result = detection_ap(preds, gts, thresholds=(0.5, 0.75, 0.9))
        assert result[0.5] == 1.0 and result[0.75] == 1.0 and result[0.9] == 0.0
        assert math.isclose(result["mean"], 2 / 3)


class TestAgainstOracle:
    def test_random_cases_match_naive_ap(self):
        rng = np.random.default_rng(42)
        for _ in range(80):
            n_img = int(rng.integers(1, 4))
            gts, preds = [], []
            for _ in range(n_img):
                n_gt = int(rng.integers(0, 5))
                img_gts = []
                for g in range(n_gt):
                    x0 = float(rng.uniform(0, 80))
                    y0 = float(rng.uniform(0, 80))
                    img_gts.append(box(x0, y0, x0 + rng.uniform(5, 20),
                                       y0 + rng.uniform(5, 20)))
                img_preds = []
                for gt_box in img_gts:
                    if rng.random() < 0.75:
                        dx = float(rng.uniform(-6, 6))
                        dy = float(rng.uniform(-6, 6))
                        img_preds.append((
                            box(gt_box.left + dx, gt_box.top + dy,
                                gt_box.right + dx, gt_box.bottom + dy),
                            float(rng.random()),
                        ))
                for _ in range(int(rng.integers(0, 3))):
                    x0 = float(rng.uniform(0, 90))
                    y0 = float(rng.uniform(0, 90))
                    img_preds.append((box(x0, y0, x0 + 10, y0 + 10),
                                      float(rng.random())))
                gts.append(img_gts)
                preds.append(img_preds)
            for thr in (0.5, 0.75):
                fast = average_precision(preds, gts, thr)
                slow = naive_average_precision(preds, gts, thr)
                assert math.isclose(fast, slow, abs_tol=1e-12)
