"""Evaluation metrics for table structure and cell box quality."""

from .car import (
    CarResult,
    adjacency_pairs,
    car_corpus,
    car_score,
    match_cells_by_iou,
    weighted_average_f1,
)
from .detection import (
    COCO_THRESHOLDS,
    PRCurve,
    ap_from_curve,
    average_precision,
    detection_ap,
    pr_curve,
)
from .grits import content_similarity, factored_alignment, grits, grits_all
from .teds import (
    TableTree,
    char_edit_distance,
    normalized_edit_distance,
    teds,
    teds_grids,
    tree_edit_distance,
    tree_from_grid,
    tree_from_html,
    tree_from_rows,
)

__all__ = [
    "CarResult",
    "adjacency_pairs",
    "car_corpus",
    "car_score",
    "match_cells_by_iou",
    "weighted_average_f1",
    "COCO_THRESHOLDS",
    "PRCurve",
    "ap_from_curve",
    "average_precision",
    "detection_ap",
    "pr_curve",
    "content_similarity",
    "factored_alignment",
    "grits",
    "grits_all",
    "TableTree",
    "char_edit_distance",
    "normalized_edit_distance",
    "teds",
    "teds_grids",
    "tree_edit_distance",
    "tree_from_grid",
    "tree_from_html",
    "tree_from_rows",
]
