"""Grid, token-sequence, and coordinate primitives for table recognition.

A table is modeled as a grid of cells, each anchored at a (row, column)
slot and covering a rowspan x colspan rectangle.  Structure is serialized
to a flat token sequence in which a non-empty simple cell is a single
merged token, an empty simple cell is a distinct single token, and a
spanning cell is spelled out as an open token, span attributes, a bracket
token, and a close token.  Cell box coordinates are quantized to integer
bins for the coordinate decoder.
"""

from __future__ import annotations

import dataclasses
import math
import re
import warnings
from dataclasses import dataclass, field

# Token inventory.  The non-empty / span-open tokens are the "triggers"
# that make the coordinate decoder emit a box during inference.
PAD = "<pad>"
SOS = "<sos>"
EOS = "<eos>"
TR_OPEN = "<tr>"
TR_CLOSE = "</tr>"
CELL_NONEMPTY = "<td>[]</td>"
CELL_EMPTY = "<td></td>"
SPAN_OPEN = "<td"
SPAN_BRACKET = ">"
TD_CLOSE = "</td>"

TRIGGER_TOKENS = (CELL_NONEMPTY, SPAN_OPEN)

_ATTR_RE = re.compile(r'^(rowspan|colspan)="(\d+)"$')

TokenSeq = list[str]


class StructureError(ValueError):
    """A cell arrangement does not tile its grid exactly."""


class VocabularyError(ValueError):
    """A token or span value falls outside the vocabulary."""


class CoordinateRangeWarning(UserWarning):
    """A coordinate fell outside the image and was clamped."""


def span_attr(name: str, n: int) -> str:
    return f'{name}="{n}"'


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in continuous image coordinates, corners inclusive-exclusive."""

    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self) -> None:
        if not (self.right >= self.left and self.bottom >= self.top):
            raise ValueError(f"degenerate box ordering: {self}")

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def height(self) -> float:
        return self.bottom - self.top

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.left, self.top, self.right, self.bottom)

    def union(self, other: "BBox") -> "BBox":
        return BBox(
            min(self.left, other.left),
            min(self.top, other.top),
            max(self.right, other.right),
            max(self.bottom, other.bottom),
        )


def box_iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when either has zero area."""
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    denom = a.area + b.area - inter
    if denom <= 0.0:
        return 0.0
    return inter / denom


@dataclass(frozen=True)
class QuantizedBox:
    """Integer-bin box (left, top, right, bottom), each in [0, n_bins]."""

    left: int
    top: int
    right: int
    bottom: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.left, self.top, self.right, self.bottom)


@dataclass(frozen=True)
class Cell:
    """One table cell.  Spanning cells (rowspan or colspan > 1) are never empty."""

    rowspan: int = 1
    colspan: int = 1
    is_empty: bool = False
    content: str = ""
    bbox: BBox | None = None

    def __post_init__(self) -> None:
        if self.rowspan < 1 or self.colspan < 1:
            raise StructureError(
                f"spans must be >= 1, got rowspan={self.rowspan} colspan={self.colspan}"
            )
        if self.is_empty and (self.rowspan > 1 or self.colspan > 1):
            raise StructureError("spanning cells cannot be empty")

    @property
    def is_spanning(self) -> bool:
        return self.rowspan > 1 or self.colspan > 1


@dataclass(frozen=True)
class CellAnchor:
    """A cell together with its anchor slot in the expanded matrix."""

    row: int
    col: int
    cell: Cell


@dataclass(frozen=True)
class TableGrid:
    """Immutable table: rows of anchored cells tiling n_rows x n_cols exactly."""

    rows: tuple[tuple[Cell, ...], ...]
    n_rows: int
    n_cols: int

    @classmethod
    def from_rows(cls, rows) -> "TableGrid":
        """Lay out rows of cells and validate that they tile a rectangle.

        Cells are placed row-major: each cell lands on the first slot of its
        row not already covered by an earlier span.  Raises StructureError on
        overlap, overhang, or holes.
        """
        rows = tuple(tuple(r) for r in rows)
        n_rows = len(rows)
        occupied: dict[tuple[int, int], tuple[int, int]] = {}
        for r, row in enumerate(rows):
            c = 0
            for cell in row:
                while (r, c) in occupied:
                    c += 1
                if r + cell.rowspan > n_rows:
                    raise StructureError(
                        f"cell at ({r},{c}) spans past the last row"
                    )
                for dr in range(cell.rowspan):
                    for dc in range(cell.colspan):
                        slot = (r + dr, c + dc)
                        if slot in occupied:
                            raise StructureError(
                                f"cells overlap at slot {slot}"
                            )
                        occupied[slot] = (r, c)
                c += cell.colspan
        n_cols = max((c + 1 for (_, c) in occupied), default=0)
        for r in range(n_rows):
            for c in range(n_cols):
                if (r, c) not in occupied:
                    raise StructureError(f"hole at slot ({r},{c})")
        return cls(rows=rows, n_rows=n_rows, n_cols=n_cols)

    def anchors(self):
        """Yield CellAnchor for every cell in row-major order."""
        occupied: set[tuple[int, int]] = set()
        for r, row in enumerate(self.rows):
            c = 0
            for cell in row:
                while (r, c) in occupied:
                    c += 1
                for dr in range(cell.rowspan):
                    for dc in range(cell.colspan):
                        occupied.add((r + dr, c + dc))
                yield CellAnchor(r, c, cell)
                c += cell.colspan

    def cells(self) -> list[Cell]:
        return [a.cell for a in self.anchors()]

    def nonempty_anchors(self) -> list[CellAnchor]:
        """Anchors of non-empty cells, in the order their triggers appear."""
        return [a for a in self.anchors() if not a.cell.is_empty]

    def with_cells(self, cells) -> "TableGrid":
        """Return a copy whose cells (row-major order) are replaced."""
        cells = list(cells)
        if len(cells) != sum(len(r) for r in self.rows):
            raise ValueError("cell count mismatch")
        it = iter(cells)
        rows = tuple(tuple(next(it) for _ in row) for row in self.rows)
        return TableGrid(rows=rows, n_rows=self.n_rows, n_cols=self.n_cols)


def grid_to_cell_matrix(grid: TableGrid) -> list[list[CellAnchor]]:
    """Expand a grid to its n_rows x n_cols occupancy matrix.

    Every slot maps to the CellAnchor covering it, so a spanning cell
    appears in several slots under the same anchor.
    """
    matrix: list[list[CellAnchor | None]] = [
        [None] * grid.n_cols for _ in range(grid.n_rows)
    ]
    for anchor in grid.anchors():
        for dr in range(anchor.cell.rowspan):
            for dc in range(anchor.cell.colspan):
                if matrix[anchor.row + dr][anchor.col + dc] is not None:
                    raise StructureError("cells overlap")
                matrix[anchor.row + dr][anchor.col + dc] = anchor
    for r in range(grid.n_rows):
        for c in range(grid.n_cols):
            if matrix[r][c] is None:
                raise StructureError(f"hole at slot ({r},{c})")
    return matrix  # type: ignore[return-value]


@dataclass(frozen=True)
class Vocabulary:
    """Closed token inventory for the structure decoder."""

    max_span: int = 5
    tokens: tuple[str, ...] = field(init=False)
    _ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.max_span < 2:
            raise VocabularyError("max_span must be >= 2")
        toks = [PAD, SOS, EOS, TR_OPEN, TR_CLOSE, CELL_NONEMPTY, CELL_EMPTY,
                SPAN_OPEN, SPAN_BRACKET, TD_CLOSE]
        toks += [span_attr("colspan", n) for n in range(2, self.max_span + 1)]
        toks += [span_attr("rowspan", n) for n in range(2, self.max_span + 1)]
        object.__setattr__(self, "tokens", tuple(toks))
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(toks)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise VocabularyError(f"unknown token {token!r}") from None

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def encode(self, seq) -> list[int]:
        return [self.id(t) for t in seq]

    def decode(self, ids) -> TokenSeq:
        return [self.tokens[i] for i in ids]

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def sos_id(self) -> int:
        return self._ids[SOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    @property
    def trigger_ids(self) -> frozenset[int]:
        return frozenset(self._ids[t] for t in TRIGGER_TOKENS)


def tokenize(grid: TableGrid, max_span: int = 5) -> TokenSeq:
    """Serialize a grid to its token sequence, sos first and eos last.

    Span attributes on a spanning cell are emitted colspan before rowspan.
    Raises VocabularyError when a span exceeds max_span.
    """
    out: TokenSeq = [SOS]
    for row in grid.rows:
        out.append(TR_OPEN)
        for cell in row:
            if cell.is_spanning:
                for name, n in (("colspan", cell.colspan), ("rowspan", cell.rowspan)):
                    if n > max_span:
                        raise VocabularyError(
                            f'{name}={n} exceeds the vocabulary bound {max_span}'
                        )
                out.append(SPAN_OPEN)
                if cell.colspan > 1:
                    out.append(span_attr("colspan", cell.colspan))
                if cell.rowspan > 1:
                    out.append(span_attr("rowspan", cell.rowspan))
                out.append(SPAN_BRACKET)
                out.append(TD_CLOSE)
            elif cell.is_empty:
                out.append(CELL_EMPTY)
            else:
                out.append(CELL_NONEMPTY)
        out.append(TR_CLOSE)
    out.append(EOS)
    return out


@dataclass(frozen=True)
class ParseResult:
    """Row-structured view of a token sequence plus repair notes."""

    rows: tuple[tuple[Cell, ...], ...]
    notes: tuple[str, ...]

    @property
    def repaired(self) -> bool:
        return bool(self.notes)


def parse_token_rows(tokens) -> ParseResult:
    """Parse a token sequence into rows of cells, repairing malformations.

    The repair policy is deterministic: unknown or out-of-place tokens are
    dropped, an open spanning cell is closed at any row or sequence
    boundary, cells outside a row open an implicit row, a missing eos
    closes the final row, and tokens after eos are ignored.  Every repair
    appends a distinct note; a well-formed sequence yields no notes.
    """
    notes: list[str] = []

    def note(msg: str) -> None:
        if msg not in notes:
            notes.append(msg)

    rows: list[list[Cell]] = []
    cur: list[Cell] | None = None
    in_cell = False
    spans: dict[str, int] = {}
    got_bracket = False

    def close_cell(repair: bool = False) -> None:
        nonlocal cur, in_cell
        if repair:
            note("cell-unclosed")
        elif not got_bracket:
            note("cell-missing-bracket")
        if cur is None:
            cur = []
        cur.append(Cell(rowspan=spans.get("rowspan", 1),
                        colspan=spans.get("colspan", 1)))
        in_cell = False

    seq = list(tokens)
    start = 0
    if seq and seq[0] == SOS:
        start = 1
    else:
        note("missing-sos")

    i = start
    while i < len(seq):
        tok = seq[i]
        i += 1
        if tok == EOS:
            if i < len(seq):
                note("tokens-after-eos")
            break
        if tok == PAD:
            note("pad-in-body")
            continue
        if tok == SOS:
            note("stray-sos")
            continue
        if tok == TR_OPEN:
            if in_cell:
                close_cell(repair=True)
            if cur is not None:
                note("row-implicitly-closed")
                rows.append(cur)
            cur = []
        elif tok == TR_CLOSE:
            if in_cell:
                close_cell(repair=True)
            if cur is None:
                note("stray-row-close")
            else:
                rows.append(cur)
                cur = None
        elif tok in (CELL_NONEMPTY, CELL_EMPTY):
            if in_cell:
                close_cell(repair=True)
            if cur is None:
                note("implicit-row-open")
                cur = []
            cur.append(Cell(is_empty=(tok == CELL_EMPTY)))
        elif tok == SPAN_OPEN:
            if in_cell:
                close_cell(repair=True)
            if cur is None:
                note("implicit-row-open")
                cur = []
            in_cell = True
            spans = {}
            got_bracket = False
        elif tok == SPAN_BRACKET:
            if not in_cell:
                note("stray-bracket")
            else:
                got_bracket = True
        elif tok == TD_CLOSE:
            if not in_cell:
                note("stray-cell-close")
            else:
                close_cell()
        else:
            m = _ATTR_RE.match(tok)
            if m is None:
                note("unknown-token")
            elif not in_cell or got_bracket:
                note("stray-attribute")
            elif m.group(1) in spans:
                note("duplicate-attribute")
            else:
                n = int(m.group(2))
                if n < 1:
                    note("invalid-span-value")
                else:
                    spans[m.group(1)] = n
    else:
        note("missing-eos")

    if in_cell:
        close_cell(repair=True)
    if cur is not None:
        note("row-unclosed")
        rows.append(cur)

    return ParseResult(rows=tuple(tuple(r) for r in rows), notes=tuple(notes))


@dataclass(frozen=True)
class DetokenizeResult:
    grid: TableGrid
    notes: tuple[str, ...]

    @property
    def repaired(self) -> bool:
        return bool(self.notes)


def rows_to_grid(rows, notes=()) -> DetokenizeResult:
    """Lay parsed rows onto a rectangular grid, repairing what cannot fit.

    Rowspans overhanging the last row and colspans colliding with an
    earlier span are clipped; uncovered slots are filled with empty cells.
    """
    notes = list(notes)

    def note(msg: str) -> None:
        if msg not in notes:
            notes.append(msg)

    rows = [list(r) for r in rows]
    n_rows = len(rows)
    if n_rows == 0:
        return DetokenizeResult(TableGrid((), 0, 0), tuple(notes))

    occupied: dict[tuple[int, int], None] = {}
    anchors: dict[tuple[int, int], Cell] = {}
    for r, row in enumerate(rows):
        c = 0
        for cell in row:
            while (r, c) in occupied:
                c += 1
            rs = cell.rowspan
            if r + rs > n_rows:
                rs = n_rows - r
                note("rowspan-clipped")
            cs = cell.colspan
            for dc in range(1, cs):
                if (r, c + dc) in occupied:
                    cs = dc
                    note("colspan-clipped")
                    break
            if (rs, cs) != (cell.rowspan, cell.colspan):
                cell = dataclasses.replace(cell, rowspan=rs, colspan=cs)
            anchors[(r, c)] = cell
            for dr in range(rs):
                for dc in range(cs):
                    occupied[(r + dr, c + dc)] = None
            c += cs
    n_cols = max((c + 1 for (_, c) in occupied), default=0)
    for r in range(n_rows):
        for c in range(n_cols):
            if (r, c) not in occupied:
                anchors[(r, c)] = Cell(is_empty=True)
                note("hole-filled")
    grid_rows: list[list[Cell]] = [[] for _ in range(n_rows)]
    for (r, c) in sorted(anchors):
        grid_rows[r].append(anchors[(r, c)])
    grid = TableGrid.from_rows(grid_rows)
    return DetokenizeResult(grid, tuple(notes))


def detokenize(tokens) -> DetokenizeResult:
    """Token sequence back to a grid; repairs are flagged in notes."""
    parsed = parse_token_rows(tokens)
    return rows_to_grid(parsed.rows, parsed.notes)


def quantize(value: float, image_side: float, n_bins: int) -> int:
    """Map an image coordinate to its nearest integer bin in [0, n_bins].

    Rounds half up.  Inputs outside [0, image_side] are clamped with a
    CoordinateRangeWarning.
    """
    if math.isnan(value):
        raise ValueError("cannot quantize NaN")
    if value < 0.0 or value > image_side:
        warnings.warn(
            f"coordinate {value} outside [0, {image_side}], clamping",
            CoordinateRangeWarning,
            stacklevel=2,
        )
        value = min(max(value, 0.0), image_side)
    c = math.floor(value * n_bins / image_side + 0.5)
    return min(max(c, 0), n_bins)


def dequantize(c: int, image_side: float, n_bins: int) -> float:
    """Bin index back to an image coordinate (bin center convention inverse)."""
    return c * image_side / n_bins


def quantize_box(box: BBox, image_side: float, n_bins: int) -> QuantizedBox:
    return QuantizedBox(
        quantize(box.left, image_side, n_bins),
        quantize(box.top, image_side, n_bins),
        quantize(box.right, image_side, n_bins),
        quantize(box.bottom, image_side, n_bins),
    )


def dequantize_box(qbox: QuantizedBox, image_side: float, n_bins: int) -> BBox:
    l, t, r, b = (dequantize(c, image_side, n_bins) for c in qbox.as_tuple())
    return BBox(min(l, r), min(t, b), max(l, r), max(t, b))


def normalize_ws(text: str) -> str:
    """Collapse runs of whitespace and strip; used for content comparison."""
    return " ".join(text.split())
