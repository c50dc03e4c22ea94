"""Cell adjacency relation scoring against an interval-arithmetic oracle."""

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings

from tableseq.core import BBox, Cell, TableGrid
from tableseq.metrics.car import (
    CarResult,
    adjacency_pairs,
    car_corpus,
    car_score,
    match_cells_by_iou,
    weighted_average_f1,
)

from oracles import naive_adjacency
from strategies import attach_payload, grids


def lettered(rows):
    """Attach single-letter contents a, b, c, ... in anchor order."""
    grid = TableGrid.from_rows(rows)
    letters = iter("abcdefghijklmnopqrstuvwxyz")
    cells = []
    for anchor in grid.anchors():
        if anchor.cell.is_empty:
            cells.append(anchor.cell)
        else:
            cells.append(dataclasses.replace(anchor.cell, content=next(letters)))
    return grid.with_cells(cells)


class TestAdjacency:
    def test_two_by_two_has_four_relations(self):
        grid = lettered([[Cell(), Cell()], [Cell(), Cell()]])
        pairs = adjacency_pairs(grid)
        kinds = sorted(k for _, _, k in pairs)
        assert kinds == ["h", "h", "v", "v"]

    def test_spanning_cell_relations_deduplicated(self):
        # [[A A],[B C]] with A = colspan 2: A touches B and C vertically
        grid = lettered([[Cell(colspan=2)], [Cell(), Cell()]])
        pairs = adjacency_pairs(grid)
        assert len(pairs) == 3
        as_keys = {((a.row, a.col), (b.row, b.col), k) for a, b, k in pairs}
        assert as_keys == {
            ((0, 0), (1, 0), "v"),
            ((0, 0), (1, 1), "v"),
            ((1, 0), (1, 1), "h"),
        }

    def test_rowspan_neighbor_pairs(self):
        grid = lettered([[Cell(rowspan=2), Cell()], [Cell()]])
        keys = {((a.row, a.col), (b.row, b.col), k)
                for a, b, k in adjacency_pairs(grid)}
        assert keys == {
            ((0, 0), (0, 1), "h"),
            ((0, 0), (1, 1), "h"),
            ((0, 1), (1, 1), "v"),
        }

    def test_empty_cells_break_relations(self):
        grid = lettered([[Cell(), Cell(is_empty=True), Cell()]])
        assert adjacency_pairs(grid) == []
        # immediate adjacency only: no skipping over the blank
        grid2 = lettered([[Cell(), Cell(), Cell()]])
        assert len(adjacency_pairs(grid2)) == 2

    def test_single_cell_no_relations(self):
        assert adjacency_pairs(lettered([[Cell()]])) == []

    @given(grids(max_rows=5, max_cols=5))
    @settings(max_examples=120, deadline=None)
    def test_matches_interval_oracle(self, grid):
        got = {((a.row, a.col), (b.row, b.col), k)
               for a, b, k in adjacency_pairs(grid)}
        assert got == naive_adjacency(grid)


class TestContentMode:
    def test_perfect_prediction(self):
        gt = lettered([[Cell(), Cell()], [Cell(colspan=2)]])
        r = car_score(gt, gt, mode="content")
        assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)

    def test_merged_bottom_row(self):
        gt = lettered([[Cell(), Cell()], [Cell(), Cell()]])  # a b / c d
        pred = TableGrid.from_rows([
            [Cell(content="a"), Cell(content="b")],
            [Cell(colspan=2, content="c d")],
        ])
        r = car_score(pred, gt, mode="content")
        # pred relations: (a,b) h, (a,"c d") v, (b,"c d") v; only (a,b) in gt
        assert r.n_pred == 3 and r.n_gt == 4 and r.n_correct == 1
        assert math.isclose(r.precision, 1 / 3)
        assert math.isclose(r.recall, 1 / 4)

    def test_duplicate_contents_use_multiset_counts(self):
        gt = TableGrid.from_rows([[Cell(content="x"), Cell(content="x"),
                                   Cell(content="x")]])
        pred = TableGrid.from_rows([[Cell(content="x"), Cell(content="x")]])
        r = car_score(pred, gt, mode="content")
        assert r.n_correct == 1 and r.n_pred == 1 and r.n_gt == 2

    def test_whitespace_normalized(self):
        gt = TableGrid.from_rows([[Cell(content="a  b"), Cell(content="c")]])
        pred = TableGrid.from_rows([[Cell(content="a b"), Cell(content="c")]])
        assert car_score(pred, gt, mode="content").f1 == 1.0

    def test_zero_denominators(self):
        empty_rel = lettered([[Cell()]])
        full = lettered([[Cell(), Cell()]])
        r = car_score(empty_rel, full, mode="content")
        assert r.precision == 0.0 and r.recall == 0.0 and r.f1 == 0.0


class TestIouMode:
    def grid_with_boxes(self, shift=0.0):
        rng = np.random.default_rng(3)
        grid = TableGrid.from_rows([[Cell(), Cell()], [Cell(), Cell()]])
        grid = attach_payload(grid, rng)
        if shift:
            cells = [
                dataclasses.replace(
                    c, bbox=BBox(c.bbox.left + shift, c.bbox.top,
                                 c.bbox.right + shift, c.bbox.bottom))
                for c in grid.cells()
            ]
            grid = grid.with_cells(cells)
        return grid

    def test_identical_boxes_score_one(self):
        g = self.grid_with_boxes()
        r = car_score(g, g, mode="iou", sigma=0.9)
        assert (r.precision, r.recall) == (1.0, 1.0)

    def test_shifted_boxes_fail_high_sigma(self):
        gt = self.grid_with_boxes()
        pred = self.grid_with_boxes(shift=6.0)
        high = car_score(pred, gt, mode="iou", sigma=0.95)
        low = car_score(pred, gt, mode="iou", sigma=0.3)
        assert high.n_correct == 0
        assert low.n_correct == 4

    def test_one_to_one_assignment(self):
        box = BBox(0, 0, 10, 10)
        gt = TableGrid.from_rows([[
            Cell(content="a", bbox=box),
            Cell(content="b", bbox=BBox(20, 0, 30, 10)),
        ]])
        # both pred cells sit on the same gt box; only one may claim it
        pred = TableGrid.from_rows([[
            Cell(content="p", bbox=box),
            Cell(content="q", bbox=box),
        ]])
        mapping = match_cells_by_iou(pred, gt, sigma=0.5)
        assert len(mapping) == 1
        assert mapping == {(0, 0): (0, 0)}

    def test_relations_compared_through_assignment(self):
        gt = self.grid_with_boxes()
        pred = self.grid_with_boxes(shift=1.0)
        r = car_score(pred, gt, mode="iou", sigma=0.5)
        assert r.n_pred == 4 and r.n_gt == 4 and r.n_correct == 4

    def test_unknown_mode_raises(self):
        g = self.grid_with_boxes()
        with pytest.raises(ValueError):
            car_score(g, g, mode="nope")


class TestAggregation:
    def test_corpus_micro_average(self):
        gt1 = lettered([[Cell(), Cell()]])
        gt2 = lettered([[Cell(), Cell()], [Cell(), Cell()]])
        bad = TableGrid.from_rows([[Cell(content="zz")]])
        r = car_corpus([(gt1, gt1), (bad, gt2)], mode="content")
        assert r.n_gt == 1 + 4
        assert r.n_pred == 1
        assert r.n_correct == 1
        assert math.isclose(r.precision, 1.0)
        assert math.isclose(r.recall, 1 / 5)

    def test_weighted_average_f1(self):
        results = {
            0.6: CarResult(6, 10, 10),
            0.7: CarResult(5, 10, 10),
            0.8: CarResult(4, 10, 10),
            0.9: CarResult(2, 10, 10),
        }
        expected = (0.6 * 0.6 + 0.7 * 0.5 + 0.8 * 0.4 + 0.9 * 0.2) / 3.0
        assert math.isclose(weighted_average_f1(results), expected)

    def test_weighted_average_empty(self):
        assert weighted_average_f1({}) == 0.0

    @given(grids(max_rows=4, max_cols=4))
    @settings(max_examples=40, deadline=None)
    def test_identity_is_perfect_in_both_modes(self, grid):
        rng = np.random.default_rng(11)
        g = attach_payload(grid, rng)
        if not adjacency_pairs(g):
            return
        for mode in ("content", "iou"):
            r = car_score(g, g, mode=mode)
            assert r.f1 == 1.0
