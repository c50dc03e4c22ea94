"""Average precision for cell box detection.

Predictions from all images are pooled, sorted by confidence, and
greedily matched to unmatched ground-truth boxes of the same image at an
IoU threshold.  Precision is interpolated over every recall point (the
all-point envelope), so one exact hit out of two boxes scores exactly
0.5.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..core import BBox, box_iou


@dataclass(frozen=True)
class PRCurve:
    recalls: tuple[float, ...]
    precisions: tuple[float, ...]
    n_gt: int


def _match_flags(preds_by_image, gts_by_image, iou_thr: float):
    """Pool predictions, sort by score, and mark each one TP or FP."""
    pooled = []
    for img, preds in enumerate(preds_by_image):
        for idx, (box, score) in enumerate(preds):
            pooled.append((score, img, idx, box))
    pooled.sort(key=lambda t: (-t[0], t[1], t[2]))
    taken = [set() for _ in gts_by_image]
    flags = []
    for score, img, _, box in pooled:
        gts = gts_by_image[img]
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if j in taken[img]:
                continue
            iou = box_iou(box, gt)
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= iou_thr:
            taken[img].add(best_j)
            flags.append(True)
        else:
            flags.append(False)
    return flags


def pr_curve(preds_by_image, gts_by_image, iou_thr: float) -> PRCurve:
    n_gt = sum(len(g) for g in gts_by_image)
    flags = _match_flags(preds_by_image, gts_by_image, iou_thr)
    recalls, precisions = [], []
    tp = fp = 0
    for is_tp in flags:
        if is_tp:
            tp += 1
        else:
            fp += 1
        recalls.append(tp / n_gt if n_gt else 0.0)
        precisions.append(tp / (tp + fp))
    return PRCurve(tuple(recalls), tuple(precisions), n_gt)


def ap_from_curve(curve: PRCurve) -> float:
    """Area under the all-point interpolated precision envelope."""
    if curve.n_gt == 0:
        return 1.0 if not curve.recalls else 0.0
    mrec = [0.0, *curve.recalls, 1.0]
    mpre = [0.0, *curve.precisions, 0.0]
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    ap = 0.0
    for i in range(1, len(mrec)):
        if mrec[i] != mrec[i - 1]:
            ap += (mrec[i] - mrec[i - 1]) * mpre[i]
    return ap


def average_precision(preds_by_image, gts_by_image, iou_thr: float = 0.5) -> float:
    """AP at one IoU threshold.

    preds_by_image: per image, a list of (BBox, score).
    gts_by_image: per image, a list of BBox.
    """
    return ap_from_curve(pr_curve(preds_by_image, gts_by_image, iou_thr))


COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def detection_ap(preds_by_image, gts_by_image,
                 thresholds=COCO_THRESHOLDS) -> dict:
    """AP per threshold plus their mean under key 'mean'."""
    by_thr = {
        thr: average_precision(preds_by_image, gts_by_image, thr)
        for thr in thresholds
    }
    by_thr["mean"] = sum(by_thr.values()) / len(thresholds) if thresholds else 0.0
    return by_thr
