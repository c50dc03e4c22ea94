"""Filling recognized structure with text from located text lines.

Text lines (box + string) are matched to predicted cell boxes by highest
IoU, lines landing in the same cell are merged top-to-bottom and
left-to-right, and the result is assembled into content-bearing HTML.
The structure is taken exactly as decoded; no structural repair happens
here.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import BBox, ParseResult, box_iou, parse_token_rows


@dataclass(frozen=True)
class TextLine:
    bbox: BBox
    text: str


def match_lines_to_boxes(lines, boxes, min_iou: float = 0.1) -> list[int | None]:
    """For each line, the index of the best-overlapping box, or None.

    A line joins the box with the highest IoU at or above min_iou.  Ties
    go to the box whose top-left corner sorts first, then to the earlier
    box in decoding order.  Several lines may share one box.
    """
    assignment: list[int | None] = []
    for line in lines:
        best: tuple | None = None
        best_idx: int | None = None
        for idx, box in enumerate(boxes):
            iou = box_iou(line.bbox, box)
            if iou < min_iou:
                continue
            rank = (-iou, box.top, box.left, idx)
            if best is None or rank < best:
                best = rank
                best_idx = idx
        assignment.append(best_idx)
    return assignment


def _vertical_overlap_ratio(a: BBox, b: BBox) -> float:
    inter = min(a.bottom, b.bottom) - max(a.top, b.top)
    shortest = min(a.height, b.height)
    if shortest <= 0:
        return 1.0 if inter >= 0 else 0.0
    return max(inter, 0.0) / shortest


def merge_lines(lines, band_overlap: float = 0.5) -> str:
    """Merge text lines into one string in reading order.

    Lines whose vertical extents overlap by at least band_overlap of the
    shorter line share a band; bands run top to bottom and lines within a
    band left to right, all joined by single spaces.
    """
    ordered = sorted(lines, key=lambda l: (l.bbox.top, l.bbox.left))
    bands: list[list[TextLine]] = []
    spans: list[BBox] = []
    for line in ordered:
        placed = False
        for i, span in enumerate(spans):
            if _vertical_overlap_ratio(line.bbox, span) >= band_overlap:
                bands[i].append(line)
                spans[i] = span.union(line.bbox)
                placed = True
                break
        if not placed:
            bands.append([line])
            spans.append(line.bbox)
    band_order = sorted(range(len(bands)), key=lambda i: (spans[i].top, spans[i].left))
    parts = []
    for i in band_order:
        row = sorted(bands[i], key=lambda l: (l.bbox.left, l.bbox.top))
        parts.append(" ".join(l.text for l in row))
    return " ".join(p for p in parts if p)


def extract_cell_texts(boxes, lines, min_iou: float = 0.1,
                       band_overlap: float = 0.5) -> list[str]:
    """One merged content string per predicted box."""
    assignment = match_lines_to_boxes(lines, boxes, min_iou=min_iou)
    per_box: list[list[TextLine]] = [[] for _ in boxes]
    for line, idx in zip(lines, assignment):
        if idx is not None:
            per_box[idx].append(line)
    return [merge_lines(group, band_overlap=band_overlap) for group in per_box]


def _escape(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


def assemble_html(tokens, cell_texts) -> str:
    """Decoded tokens plus per-trigger cell texts to table HTML.

    cell_texts follow the decoder's trigger order (non-empty cells as they
    appear in the sequence).  Rows are emitted exactly as parsed; missing
    texts fall back to empty strings.
    """
    parsed = tokens if isinstance(tokens, ParseResult) else parse_token_rows(tokens)
    texts = list(cell_texts)
    pos = 0
    out = ["<table>"]
    for row in parsed.rows:
        out.append("<tr>")
        for cell in row:
            attrs = ""
            if cell.colspan > 1:
                attrs += f' colspan="{cell.colspan}"'
            if cell.rowspan > 1:
                attrs += f' rowspan="{cell.rowspan}"'
            if cell.is_empty:
                out.append(f"<td{attrs}></td>")
            else:
                text = texts[pos] if pos < len(texts) else ""
                pos += 1
                out.append(f"<td{attrs}>{_escape(text)}</td>")
        out.append("</tr>")
    out.append("</table>")
    return "".join(out)
