"""Precision and recall over cell adjacency relations.

Two non-empty cells stand in a relation when their expanded slots are
immediately adjacent, horizontally or vertically, in the occupancy
matrix.  Predicted relations are compared against ground truth either by
normalized cell content or by a one-to-one IoU assignment of cell boxes
at a threshold sigma.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from ..core import BBox, CellAnchor, TableGrid, box_iou, grid_to_cell_matrix, normalize_ws


@dataclass(frozen=True)
class CarResult:
    n_correct: int
    n_pred: int
    n_gt: int

    @property
    def precision(self) -> float:
        return self.n_correct / self.n_pred if self.n_pred else 0.0

    @property
    def recall(self) -> float:
        return self.n_correct / self.n_gt if self.n_gt else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


def adjacency_pairs(grid: TableGrid) -> list[tuple[CellAnchor, CellAnchor, str]]:
    """All (left-or-top cell, right-or-bottom cell, direction) relations.

    Direction is "h" or "v".  A pair of spanning cells touching along
    several slots yields a single relation.  Empty cells take part in no
    relation.
    """
    if grid.n_rows == 0 or grid.n_cols == 0:
        return []
    matrix = grid_to_cell_matrix(grid)
    seen: set[tuple[int, int, int, int, str]] = set()
    out: list[tuple[CellAnchor, CellAnchor, str]] = []
    for r in range(grid.n_rows):
        for c in range(grid.n_cols):
            a = matrix[r][c]
            for dr, dc, kind in ((0, 1, "h"), (1, 0, "v")):
                rr, cc = r + dr, c + dc
                if rr >= grid.n_rows or cc >= grid.n_cols:
                    continue
                b = matrix[rr][cc]
                if (a.row, a.col) == (b.row, b.col):
                    continue
                if a.cell.is_empty or b.cell.is_empty:
                    continue
                key = (a.row, a.col, b.row, b.col, kind)
                if key not in seen:
                    seen.add(key)
                    out.append((a, b, kind))
    return out


def _content_relations(grid: TableGrid) -> Counter:
    return Counter(
        (kind, normalize_ws(a.cell.content), normalize_ws(b.cell.content))
        for a, b, kind in adjacency_pairs(grid)
    )


def match_cells_by_iou(pred: TableGrid, gt: TableGrid,
                       sigma: float) -> dict[tuple[int, int], tuple[int, int]]:
    """Greedy one-to-one assignment of non-empty cells by content box IoU.

    Returns a mapping from pred anchor slot to gt anchor slot.  Pairs are
    taken in order of decreasing IoU, at or above sigma; ties break on
    anchor order.
    """
    pred_cells = [a for a in pred.nonempty_anchors() if a.cell.bbox is not None]
    gt_cells = [a for a in gt.nonempty_anchors() if a.cell.bbox is not None]
    candidates: list[tuple[float, int, int]] = []
    for i, pa in enumerate(pred_cells):
        for j, ga in enumerate(gt_cells):
            iou = box_iou(pa.cell.bbox, ga.cell.bbox)
            if iou >= sigma:
                candidates.append((iou, i, j))
    candidates.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_p: set[int] = set()
    used_g: set[int] = set()
    mapping: dict[tuple[int, int], tuple[int, int]] = {}
    for iou, i, j in candidates:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pa, ga = pred_cells[i], gt_cells[j]
        mapping[(pa.row, pa.col)] = (ga.row, ga.col)
    return mapping


def car_score(pred: TableGrid, gt: TableGrid, mode: str = "content",
              sigma: float = 0.6) -> CarResult:
    """Score predicted adjacency relations against ground truth."""
    if mode == "content":
        pred_rel = _content_relations(pred)
        gt_rel = _content_relations(gt)
        correct = sum((pred_rel & gt_rel).values())
        return CarResult(correct, sum(pred_rel.values()), sum(gt_rel.values()))
    if mode == "iou":
        mapping = match_cells_by_iou(pred, gt, sigma)
        gt_keys = {
            (kind, (a.row, a.col), (b.row, b.col))
            for a, b, kind in adjacency_pairs(gt)
        }
        pred_pairs = adjacency_pairs(pred)
        correct = 0
        for a, b, kind in pred_pairs:
            ga = mapping.get((a.row, a.col))
            gb = mapping.get((b.row, b.col))
            if ga is not None and gb is not None and (kind, ga, gb) in gt_keys:
                correct += 1
        return CarResult(correct, len(pred_pairs), len(gt_keys))
    raise ValueError(f"unknown mode {mode!r}")


def car_corpus(pairs, mode: str = "content", sigma: float = 0.6) -> CarResult:
    """Micro-average over (pred, gt) grid pairs: counts are summed first."""
    correct = n_pred = n_gt = 0
    for pred, gt in pairs:
        r = car_score(pred, gt, mode=mode, sigma=sigma)
        correct += r.n_correct
        n_pred += r.n_pred
        n_gt += r.n_gt
    return CarResult(correct, n_pred, n_gt)


def weighted_average_f1(by_sigma: dict[float, CarResult]) -> float:
    """F1 averaged over IoU thresholds, each weighted by its threshold."""
    total_w = sum(by_sigma)
    if total_w == 0:
        return 0.0
    return sum(sigma * r.f1 for sigma, r in by_sigma.items()) / total_w
