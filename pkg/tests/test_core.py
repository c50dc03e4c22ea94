"""Tests for grid primitives, tokenization, repair, and quantization."""

import math

import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from tableseq import core
from tableseq.core import (
    BBox,
    Cell,
    CoordinateRangeWarning,
    StructureError,
    TableGrid,
    Vocabulary,
    VocabularyError,
    box_iou,
    dequantize,
    detokenize,
    grid_to_cell_matrix,
    parse_token_rows,
    quantize,
    quantize_box,
    tokenize,
)

from strategies import grids, mutated_sequences


def simple_grid(n_rows, n_cols, empties=()):
    rows = [
        [Cell(is_empty=(r, c) in empties) for c in range(n_cols)]
        for r in range(n_rows)
    ]
    return TableGrid.from_rows(rows)


def token_count(grid):
    """Closed form: 2 + 2R + E + F + 3P + A."""
    n_rows = grid.n_rows
    n_empty = n_full = n_span = n_attr = 0
    for anchor in grid.anchors():
        cell = anchor.cell
        if cell.is_spanning:
            n_span += 1
            n_attr += int(cell.rowspan > 1) + int(cell.colspan > 1)
        elif cell.is_empty:
            n_empty += 1
        else:
            n_full += 1
    return 2 + 2 * n_rows + n_empty + n_full + 3 * n_span + n_attr


class TestTokenize:
    def test_two_by_two_simple(self):
        grid = simple_grid(2, 2)
        assert tokenize(grid) == [
            "<sos>",
            "<tr>", "<td>[]</td>", "<td>[]</td>", "</tr>",
            "<tr>", "<td>[]</td>", "<td>[]</td>", "</tr>",
            "<eos>",
        ]
        assert len(tokenize(grid)) == 10

    def test_empty_cell_token(self):
        grid = simple_grid(1, 2, empties={(0, 1)})
        assert tokenize(grid) == [
            "<sos>", "<tr>", "<td>[]</td>", "<td></td>", "</tr>", "<eos>",
        ]

    def test_rowspan_cell_expansion(self):
        grid = TableGrid.from_rows([
            [Cell(rowspan=2), Cell()],
            [Cell()],
        ])
        assert tokenize(grid) == [
            "<sos>",
            "<tr>", "<td", 'rowspan="2"', ">", "</td>", "<td>[]</td>", "</tr>",
            "<tr>", "<td>[]</td>", "</tr>",
            "<eos>",
        ]

    def test_both_spans_colspan_first(self):
        grid = TableGrid.from_rows([
            [Cell(rowspan=2, colspan=2), Cell()],
            [Cell()],
            [Cell(), Cell(), Cell()],
        ])
        seq = tokenize(grid)
        i = seq.index("<td")
        assert seq[i:i + 5] == ["<td", 'colspan="2"', 'rowspan="2"', ">", "</td>"]

    def test_span_beyond_vocabulary_raises(self):
        grid = TableGrid.from_rows([[Cell(colspan=6)]])
        with pytest.raises(VocabularyError):
            tokenize(grid, max_span=5)
        assert tokenize(grid, max_span=6)[3] == 'colspan="6"'

    @given(grids())
    def test_token_count_closed_form(self, grid):
        assert len(tokenize(grid)) == token_count(grid)

    @given(grids())
    def test_round_trip_identity(self, grid):
        result = detokenize(tokenize(grid))
        assert not result.repaired
        assert result.notes == ()
        assert result.grid == grid


class TestGrid:
    def test_anchor_layout_with_colspan(self):
        grid = TableGrid.from_rows([
            [Cell(), Cell(colspan=2)],
            [Cell(is_empty=True), Cell(), Cell()],
        ])
        assert grid.n_rows == 2 and grid.n_cols == 3
        matrix = grid_to_cell_matrix(grid)
        assert [(a.row, a.col) for a in matrix[0]] == [(0, 0), (0, 1), (0, 1)]
        assert [(a.row, a.col) for a in matrix[1]] == [(1, 0), (1, 1), (1, 2)]

    def test_rowspan_occupies_lower_slot(self):
        grid = TableGrid.from_rows([
            [Cell(rowspan=2), Cell()],
            [Cell()],
        ])
        matrix = grid_to_cell_matrix(grid)
        assert matrix[1][0] is matrix[0][0]
        # second-row cell is pushed right of the span
        assert (matrix[1][1].row, matrix[1][1].col) == (1, 1)

    def test_overlap_raises(self):
        with pytest.raises(StructureError):
            TableGrid.from_rows([
                [Cell(rowspan=2), Cell()],
                [Cell(), Cell()],
            ])

    def test_hole_raises(self):
        with pytest.raises(StructureError):
            TableGrid.from_rows([
                [Cell(), Cell()],
                [Cell()],
            ])

    def test_overhang_raises(self):
        with pytest.raises(StructureError):
            TableGrid.from_rows([[Cell(rowspan=2)]])

    def test_empty_spanning_cell_rejected(self):
        with pytest.raises(StructureError):
            Cell(rowspan=2, is_empty=True)
        with pytest.raises(StructureError):
            Cell(colspan=3, is_empty=True)

    def test_invalid_span_rejected(self):
        with pytest.raises(StructureError):
            Cell(rowspan=0)

    @given(grids())
    def test_matrix_covers_every_slot_once(self, grid):
        matrix = grid_to_cell_matrix(grid)
        assert len(matrix) == grid.n_rows
        assert all(len(row) == grid.n_cols for row in matrix)
        counts = {}
        for row in matrix:
            for anchor in row:
                key = (anchor.row, anchor.col)
                counts[key] = counts.get(key, 0) + 1
        for anchor in grid.anchors():
            cell = anchor.cell
            assert counts[(anchor.row, anchor.col)] == cell.rowspan * cell.colspan

    def test_with_cells_replaces_in_order(self):
        grid = simple_grid(1, 2)
        new = grid.with_cells([Cell(content="a"), Cell(content="b")])
        assert [c.content for c in new.cells()] == ["a", "b"]
        with pytest.raises(ValueError):
            grid.with_cells([Cell()])


class TestRepair:
    def test_well_formed_has_no_notes(self):
        seq = ["<sos>", "<tr>", "<td>[]</td>", "</tr>", "<eos>"]
        result = detokenize(seq)
        assert result.notes == () and not result.repaired

    def test_sos_eos_only_is_empty_grid(self):
        result = detokenize(["<sos>", "<eos>"])
        assert result.grid.n_rows == 0 and result.grid.n_cols == 0
        assert not result.repaired

    def test_missing_row_close_at_eos(self):
        result = detokenize(["<sos>", "<tr>", "<td>[]</td>", "<eos>"])
        assert result.repaired and "row-unclosed" in result.notes
        assert result.grid == simple_grid(1, 1)

    def test_missing_eos(self):
        result = detokenize(["<sos>", "<tr>", "<td>[]</td>", "</tr>"])
        assert "missing-eos" in result.notes
        assert result.grid == simple_grid(1, 1)

    def test_orphan_attribute_dropped(self):
        seq = ["<sos>", "<tr>", 'colspan="2"', "<td>[]</td>", "</tr>", "<eos>"]
        result = detokenize(seq)
        assert "stray-attribute" in result.notes
        assert result.grid == simple_grid(1, 1)

    def test_unclosed_spanning_cell(self):
        seq = ["<sos>", "<tr>", "<td", 'colspan="2"', "<eos>"]
        result = detokenize(seq)
        assert "cell-unclosed" in result.notes
        assert result.grid.n_cols == 2
        assert result.grid.rows[0][0].colspan == 2

    def test_ragged_rows_hole_filled(self):
        seq = [
            "<sos>",
            "<tr>", "<td>[]</td>", "</tr>",
            "<tr>", "<td>[]</td>", "<td>[]</td>", "</tr>",
            "<eos>",
        ]
        result = detokenize(seq)
        assert "hole-filled" in result.notes
        assert result.grid.n_rows == 2 and result.grid.n_cols == 2
        filler = result.grid.rows[0][1]
        assert filler.is_empty and not filler.is_spanning

    def test_rowspan_overhang_clipped(self):
        seq = ["<sos>", "<tr>", "<td", 'rowspan="2"', ">", "</td>", "</tr>", "<eos>"]
        result = detokenize(seq)
        assert "rowspan-clipped" in result.notes
        assert result.grid.n_rows == 1
        assert result.grid.rows[0][0].rowspan == 1

    def test_cells_before_any_row_open_implicit_row(self):
        seq = ["<sos>", "<td>[]</td>", "<td>[]</td>", "</tr>", "<eos>"]
        result = detokenize(seq)
        assert "implicit-row-open" in result.notes
        assert result.grid.n_rows == 1 and result.grid.n_cols == 2

    def test_tokens_after_eos_ignored(self):
        seq = ["<sos>", "<tr>", "<td>[]</td>", "</tr>", "<eos>", "<tr>", "<td>[]</td>"]
        result = detokenize(seq)
        assert "tokens-after-eos" in result.notes
        assert result.grid == simple_grid(1, 1)

    def test_unknown_token_dropped(self):
        seq = ["<sos>", "<tr>", "garbage", "<td>[]</td>", "</tr>", "<eos>"]
        result = detokenize(seq)
        assert "unknown-token" in result.notes
        assert result.grid == simple_grid(1, 1)

    def test_empty_input(self):
        result = detokenize([])
        assert result.grid.n_rows == 0
        assert {"missing-sos", "missing-eos"} <= set(result.notes)

    @given(mutated_sequences())
    @settings(max_examples=200)
    def test_repair_never_raises_and_is_deterministic(self, seq):
        first = detokenize(seq)
        second = detokenize(seq)
        assert first == second
        # resulting grid must re-validate
        TableGrid.from_rows(first.grid.rows)
        # repaired output must itself round-trip cleanly when re-tokenized
        if first.grid.n_rows:
            again = detokenize(tokenize(first.grid, max_span=99))
            assert again.grid == first.grid

    @given(mutated_sequences())
    @settings(max_examples=100)
    def test_parse_rows_structure(self, seq):
        parsed = parse_token_rows(seq)
        for row in parsed.rows:
            for cell in row:
                assert cell.rowspan >= 1 and cell.colspan >= 1


class TestVocabulary:
    def test_inventory_size(self):
        vocab = Vocabulary(max_span=5)
        # 10 structural tokens plus 4 colspan and 4 rowspan attributes
        assert len(vocab) == 18

    def test_special_ids(self):
        vocab = Vocabulary()
        assert vocab.token(vocab.pad_id) == "<pad>"
        assert vocab.token(vocab.sos_id) == "<sos>"
        assert vocab.token(vocab.eos_id) == "<eos>"
        assert {vocab.token(i) for i in vocab.trigger_ids} == {"<td>[]</td>", "<td"}

    def test_encode_decode_round_trip(self):
        vocab = Vocabulary()
        grid = TableGrid.from_rows([[Cell(colspan=2)], [Cell(), Cell()]])
        seq = tokenize(grid)
        assert vocab.decode(vocab.encode(seq)) == seq

    def test_unknown_token_raises(self):
        with pytest.raises(VocabularyError):
            Vocabulary().id("<table>")

    def test_max_span_bound(self):
        with pytest.raises(VocabularyError):
            Vocabulary(max_span=1)
        vocab = Vocabulary(max_span=3)
        assert 'colspan="3"' in vocab.tokens
        assert 'colspan="4"' not in vocab.tokens


class TestQuantize:
    def test_half_rounds_up(self):
        # 7.5 px at one bin per px sits exactly on a half boundary
        assert quantize(7.5, 160, 160) == 8
        assert quantize(7.49, 160, 160) == 7
        assert quantize(0.5, 1.0, 1) == 1

    def test_identity_on_integer_pixels_when_bins_match_side(self):
        for v in range(0, 161, 7):
            assert quantize(float(v), 160, 160) == v
            assert dequantize(v, 160, 160) == float(v)

    def test_bounds_inclusive(self):
        assert quantize(0.0, 160, 160) == 0
        assert quantize(160.0, 160, 160) == 160

    def test_out_of_range_clamps_with_warning(self):
        with pytest.warns(CoordinateRangeWarning):
            assert quantize(-3.0, 160, 160) == 0
        with pytest.warns(CoordinateRangeWarning):
            assert quantize(200.0, 160, 160) == 160

    def test_nan_raises(self):
        with pytest.raises(ValueError):
            quantize(float("nan"), 160, 160)

    @given(
        st.floats(0.0, 1.0, allow_nan=False),
        st.sampled_from([(608.0, 608), (160.0, 160), (160.0, 80), (100.0, 640)]),
    )
    def test_round_trip_error_bound(self, frac, side_bins):
        side, bins = side_bins
        x = frac * side
        err = abs(dequantize(quantize(x, side, bins), side, bins) - x)
        assert err <= side / (2 * bins) + 1e-9

    def test_quantize_box_orders_corners(self):
        q = quantize_box(BBox(10.2, 20.7, 30.5, 44.49), 160, 160)
        assert q.as_tuple() == (10, 21, 31, 44)


class TestBBox:
    def test_iou_basic(self):
        a = BBox(0, 0, 10, 10)
        assert box_iou(a, a) == 1.0
        assert box_iou(a, BBox(20, 20, 30, 30)) == 0.0
        # half overlap: inter 50, union 150
        assert math.isclose(box_iou(a, BBox(5, 0, 15, 10)), 50 / 150)

    def test_degenerate_box(self):
        a = BBox(5, 5, 5, 9)
        assert a.area == 0.0
        assert box_iou(a, BBox(0, 0, 10, 10)) == 0.0

    def test_bad_ordering_raises(self):
        with pytest.raises(ValueError):
            BBox(10, 0, 5, 10)

    def test_union(self):
        u = BBox(0, 0, 5, 5).union(BBox(3, -2, 8, 4))
        assert u.as_tuple() == (0, -2, 8, 5)
