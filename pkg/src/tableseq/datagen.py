"""Synthetic table images with exact structure and box ground truth.

Structure is sampled on an occupancy grid (spans only where they fit,
emptiness only on simple cells), then rendered as bordered cells on a
white canvas inside a random sub-rectangle.  Cell content is pseudo-text:
one dark rectangle per word, packed into lines, which keeps every content
box exact on the integer pixel grid.  A real-glyph mode renders the same
words with a bitmap font instead.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .core import BBox, Cell, TableGrid, detokenize, tokenize
from .postproc import TextLine

_LETTERS = "abcdefghijklmnopqrstuvwxyz"

INK = (40, 40, 40)
BORDER = (0, 0, 0)
BACKGROUND = 255


class DatasetFormatError(ValueError):
    """A dataset record does not match its declared structure."""


@dataclass(frozen=True)
class GenConfig:
    image_side: int = 160
    min_rows: int = 2
    max_rows: int = 4
    min_cols: int = 2
    max_cols: int = 4
    max_span: int = 3
    p_span: float = 0.2
    p_empty: float = 0.15
    margin: int = 8
    min_cell_width: int = 16
    min_cell_height: int = 14
    glyph_width: int = 3
    glyph_height: int = 6
    pad: int = 3
    max_words: int = 3
    max_lines: int = 2
    content_style: str = "marks"   # "marks" or "glyphs"
    valign: str = "jitter"         # "center", "jitter", or "extreme"

    def __post_init__(self) -> None:
        if not (1 <= self.min_rows <= self.max_rows):
            raise ValueError("bad row range")
        if not (1 <= self.min_cols <= self.max_cols):
            raise ValueError("bad column range")
        if self.max_span < 1:
            raise ValueError("max_span must be >= 1")
        for p in (self.p_span, self.p_empty):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.content_style not in ("marks", "glyphs"):
            raise ValueError(f"unknown content_style {self.content_style!r}")
        if self.valign not in ("center", "jitter", "extreme"):
            raise ValueError(f"unknown valign {self.valign!r}")
        avail = self.image_side - 2 * self.margin
        if self.max_cols * self.min_cell_width > avail:
            raise ValueError("columns cannot fit the image at min_cell_width")
        if self.max_rows * self.min_cell_height > avail:
            raise ValueError("rows cannot fit the image at min_cell_height")
        if self.min_cell_width < 2 * self.pad + self.glyph_width:
            raise ValueError("cells too narrow for any content")
        if self.min_cell_height < 2 * self.pad + self.glyph_height:
            raise ValueError("cells too short for any content")


@dataclass(eq=False)
class Sample:
    image: np.ndarray
    grid: TableGrid
    text_lines: tuple[TextLine, ...]

    def tokens(self, max_span: int | None = None) -> list[str]:
        return tokenize(self.grid, max_span=max_span or 99)


def sample_structure(rng: np.random.Generator, cfg: GenConfig) -> TableGrid:
    """Random valid grid; spans appear with p_span where they fit."""
    n_rows = int(rng.integers(cfg.min_rows, cfg.max_rows + 1))
    n_cols = int(rng.integers(cfg.min_cols, cfg.max_cols + 1))
    taken = [[False] * n_cols for _ in range(n_rows)]
    rows: list[list[Cell]] = [[] for _ in range(n_rows)]
    for r in range(n_rows):
        for c in range(n_cols):
            if taken[r][c]:
                continue
            rowspan = colspan = 1
            max_cs = 1
            while (c + max_cs < n_cols and not taken[r][c + max_cs]
                   and max_cs < cfg.max_span):
                max_cs += 1
            max_rs = min(cfg.max_span, n_rows - r)
            can_span = max_cs > 1 or max_rs > 1
            if can_span and rng.random() < cfg.p_span:
                directions = []
                if max_cs > 1:
                    directions.append("col")
                if max_rs > 1:
                    directions.append("row")
                direction = directions[int(rng.integers(0, len(directions)))]
                if direction == "col":
                    colspan = int(rng.integers(2, max_cs + 1))
                else:
                    rowspan = int(rng.integers(2, max_rs + 1))
            is_empty = (rowspan == 1 and colspan == 1
                        and rng.random() < cfg.p_empty)
            rows[r].append(Cell(rowspan=rowspan, colspan=colspan,
                                is_empty=is_empty))
            for dr in range(rowspan):
                for dc in range(colspan):
                    taken[r + dr][c + dc] = True
    return TableGrid.from_rows(rows)


def _split_edges(rng: np.random.Generator, start: int, total: int, parts: int,
                 minimum: int) -> list[int]:
    """Integer edges of `parts` segments summing to total, each >= minimum."""
    weights = rng.uniform(1.0, 2.5, parts)
    cuts = np.floor(np.cumsum(weights) / weights.sum() * total + 0.5).astype(int)
    widths = np.diff(np.concatenate([[0], cuts]))
    if widths.min() < minimum:
        base = total // parts
        widths = np.full(parts, base, dtype=int)
        widths[: total - base * parts] += 1
    edges = [start]
    for w in widths:
        edges.append(edges[-1] + int(w))
    return edges


def _random_word(rng: np.random.Generator, max_chars: int) -> str:
    length = int(rng.integers(2, 7))
    length = max(1, min(length, max_chars))
    return "".join(_LETTERS[int(rng.integers(0, 26))] for _ in range(length))


class _Page:
    """Draw surface holding both the pixel array and an optional PIL layer."""

    def __init__(self, side: int, style: str) -> None:
        self.style = style
        self.pil = Image.new("RGB", (side, side), (BACKGROUND,) * 3)
        self.draw = ImageDraw.Draw(self.pil)
        self.font = ImageFont.load_default() if style == "glyphs" else None

    def rect_outline(self, x0, y0, x1, y1) -> None:
        # right/bottom are exclusive pixel bounds
        self.draw.rectangle([x0, y0, x1 - 1, y1 - 1], outline=BORDER, width=1)

    def word(self, x: int, y: int, text: str, glyph_w: int, glyph_h: int) -> BBox:
        """Draw one word with its anchor at (x, y); returns its exact box."""
        if self.style == "marks":
            w = len(text) * glyph_w
            self.draw.rectangle([x, y, x + w - 1, y + glyph_h - 1], fill=INK)
            return BBox(float(x), float(y), float(x + w), float(y + glyph_h))
        bbox = self.draw.textbbox((x, y), text, font=self.font)
        self.draw.text((x, y), text, fill=INK, font=self.font)
        return BBox(float(bbox[0]), float(bbox[1]),
                    float(bbox[2]), float(bbox[3]))

    def word_width(self, text: str, glyph_w: int) -> int:
        if self.style == "marks":
            return len(text) * glyph_w
        bbox = self.font.getbbox(text)
        return int(bbox[2] - bbox[0])

    def line_height(self, glyph_h: int) -> int:
        if self.style == "marks":
            return glyph_h
        bbox = self.font.getbbox("ag")
        return int(bbox[3])

    def to_array(self) -> np.ndarray:
        return np.asarray(self.pil, dtype=np.uint8).copy()


def render_sample(rng: np.random.Generator, grid: TableGrid,
                  cfg: GenConfig) -> Sample:
    """Draw a grid into a fresh image and attach exact content ground truth."""
    side = cfg.image_side
    avail = side - 2 * cfg.margin
    min_w = grid.n_cols * cfg.min_cell_width
    min_h = grid.n_rows * cfg.min_cell_height
    table_w = int(rng.integers(min_w, avail + 1))
    table_h = int(rng.integers(min_h, avail + 1))
    x0 = cfg.margin + int(rng.integers(0, avail - table_w + 1))
    y0 = cfg.margin + int(rng.integers(0, avail - table_h + 1))
    col_edges = _split_edges(rng, x0, table_w, grid.n_cols, cfg.min_cell_width)
    row_edges = _split_edges(rng, y0, table_h, grid.n_rows, cfg.min_cell_height)

    page = _Page(side, cfg.content_style)
    line_h = page.line_height(cfg.glyph_height)

    new_cells: list[Cell] = []
    all_lines: list[TextLine] = []
    for anchor in grid.anchors():
        cell = anchor.cell
        cx0 = col_edges[anchor.col]
        cy0 = row_edges[anchor.row]
        cx1 = col_edges[anchor.col + cell.colspan]
        cy1 = row_edges[anchor.row + cell.rowspan]
        page.rect_outline(cx0, cy0, cx1, cy1)
        if cell.is_empty:
            new_cells.append(cell)
            continue

        inner_x0 = cx0 + cfg.pad
        inner_y0 = cy0 + cfg.pad
        inner_w = (cx1 - cfg.pad) - inner_x0
        inner_h = (cy1 - cfg.pad) - inner_y0
        space_w = cfg.glyph_width

        # sample words, then pack greedily into at most max_lines lines
        n_words = int(rng.integers(1, cfg.max_words + 1))
        max_chars = max(1, inner_w // max(cfg.glyph_width, 1))
        words = [_random_word(rng, max_chars) for _ in range(n_words)]
        lines: list[list[str]] = [[]]
        used = 0
        for word in words:
            w = page.word_width(word, cfg.glyph_width)
            if not lines[-1]:
                lines[-1].append(word)
                used = w
            elif used + space_w + w <= inner_w:
                lines[-1].append(word)
                used += space_w + w
            elif len(lines) < cfg.max_lines:
                lines.append([word])
                used = w
            # overflow words beyond the last line are dropped
        lines = [ln for ln in lines if ln]
        max_fit_lines = max(1, (inner_h + 2) // (line_h + 2))
        lines = lines[:max_fit_lines]

        block_h = len(lines) * line_h + (len(lines) - 1) * 2
        free_y = max(0, inner_h - block_h)
        if cfg.valign == "center":
            off_y = free_y // 2
        elif cfg.valign == "jitter":
            off_y = int(rng.integers(0, free_y + 1)) if free_y else 0
        else:  # extreme: hug the top or the bottom edge
            off_y = 0 if rng.random() < 0.5 else free_y

        cell_words: list[str] = []
        cell_box: BBox | None = None
        y = inner_y0 + off_y
        for line_words in lines:
            widths = [page.word_width(w, cfg.glyph_width) for w in line_words]
            total_w = sum(widths) + space_w * (len(line_words) - 1)
            free_x = max(0, inner_w - total_w)
            jitter_x = int(rng.integers(0, min(free_x, 5) + 1)) if free_x else 0
            x = inner_x0 + jitter_x
            line_box: BBox | None = None
            for word, w in zip(line_words, widths):
                wbox = page.word(x, y, word, cfg.glyph_width, cfg.glyph_height)
                line_box = wbox if line_box is None else line_box.union(wbox)
                x += w + space_w
            text = " ".join(line_words)
            all_lines.append(TextLine(bbox=line_box, text=text))
            cell_words.extend(line_words)
            cell_box = line_box if cell_box is None else cell_box.union(line_box)
            y += line_h + 2
        new_cells.append(dataclasses.replace(
            cell, content=" ".join(cell_words), bbox=cell_box))

    return Sample(
        image=page.to_array(),
        grid=grid.with_cells(new_cells),
        text_lines=tuple(all_lines),
    )


def make_sample(cfg: GenConfig, seed: int, index: int) -> Sample:
    """One sample from its own rng stream; independent of all other indices."""
    rng = np.random.default_rng([seed, index])
    grid = sample_structure(rng, cfg)
    return render_sample(rng, grid, cfg)


def generate_dataset(cfg: GenConfig, n: int, seed: int) -> list[Sample]:
    return [make_sample(cfg, seed, i) for i in range(n)]


def export_dataset(samples, out_dir, cfg: GenConfig) -> Path:
    """Write images/ and data.jsonl under out_dir; returns the jsonl path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    jsonl = out / "data.jsonl"
    with jsonl.open("w", encoding="utf-8") as fh:
        for i, sample in enumerate(samples):
            rel = f"images/sample_{i:05d}.png"
            Image.fromarray(sample.image).save(out / rel, format="PNG")
            record = {
                "image": rel,
                "html_tokens": tokenize(sample.grid, max_span=cfg.max_span),
                "cells": [
                    {
                        "bbox": (list(a.cell.bbox.as_tuple())
                                 if a.cell.bbox is not None else None),
                        "content": a.cell.content,
                        "is_empty": a.cell.is_empty,
                        "rowspan": a.cell.rowspan,
                        "colspan": a.cell.colspan,
                    }
                    for a in sample.grid.anchors()
                ],
                "text_lines": [
                    {"bbox": list(l.bbox.as_tuple()), "text": l.text}
                    for l in sample.text_lines
                ],
            }
            fh.write(json.dumps(record) + "\n")
    return jsonl


def load_dataset(path) -> list[Sample]:
    """Read a dataset directory (or its data.jsonl) back into samples.

    The grid is rebuilt from html_tokens and must agree with the cells
    list; any disagreement raises DatasetFormatError with the line number.
    """
    path = Path(path)
    jsonl = path / "data.jsonl" if path.is_dir() else path
    root = jsonl.parent
    samples: list[Sample] = []
    with jsonl.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {lineno}: bad JSON: {exc}")
            try:
                tokens = record["html_tokens"]
                cells = record["cells"]
                image_rel = record["image"]
            except KeyError as exc:
                raise DatasetFormatError(f"line {lineno}: missing key {exc}")
            result = detokenize(tokens)
            if result.repaired:
                raise DatasetFormatError(
                    f"line {lineno}: html_tokens malformed: {result.notes}")
            grid = result.grid
            flat = [a.cell for a in grid.anchors()]
            if len(flat) != len(cells):
                raise DatasetFormatError(
                    f"line {lineno}: {len(cells)} cell records for "
                    f"{len(flat)} grid cells")
            rebuilt = []
            for k, (cell, rec) in enumerate(zip(flat, cells)):
                if (cell.rowspan != rec.get("rowspan")
                        or cell.colspan != rec.get("colspan")
                        or cell.is_empty != rec.get("is_empty")):
                    raise DatasetFormatError(
                        f"line {lineno}: cell {k} disagrees with html_tokens")
                bbox = rec.get("bbox")
                rebuilt.append(dataclasses.replace(
                    cell,
                    content=rec.get("content", ""),
                    bbox=BBox(*bbox) if bbox is not None else None,
                ))
            lines = tuple(
                TextLine(bbox=BBox(*l["bbox"]), text=l["text"])
                for l in record.get("text_lines", [])
            )
            with Image.open(root / image_rel) as img:
                image = np.asarray(img.convert("RGB"), dtype=np.uint8)
            samples.append(Sample(image=image, grid=grid.with_cells(rebuilt),
                                  text_lines=lines))
    return samples
