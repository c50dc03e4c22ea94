"""Greedy decoding and attention introspection.

Structure tokens are decoded greedily; once the sequence is final, one
full forward pass recovers every cell state and cross-attention row
(causal masking makes those identical to the incremental ones), and all
cells of the whole batch go through the coordinate decoder together.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

from .core import (
    BBox,
    EOS,
    SOS,
    ParseResult,
    TableGrid,
    dequantize,
    parse_token_rows,
    rows_to_grid,
)
from .model import SEQUENCE_HEAD, TableRecognizer


@dataclass
class Prediction:
    """One decoded table: tokens, laid-out grid, and per-cell boxes.

    tokens exclude the start marker and include the end marker unless
    decoding hit the length limit (truncated is then set).  boxes and
    box_scores follow the document order of the non-empty cells, and the
    same boxes are attached to the grid's cells.  attention holds the
    structure decoder's cross-attention, (layers, heads, T, L) with T
    covering the start marker plus all tokens.
    """

    tokens: list[str]
    parse: ParseResult
    grid: TableGrid
    notes: tuple[str, ...]
    boxes: list[BBox] = field(default_factory=list)
    box_scores: list[float] = field(default_factory=list)
    truncated: bool = False
    attention: Tensor | None = None


@torch.no_grad()
def batch_coord_decode(model: TableRecognizer, starts: Tensor,
                       memory_rows: Tensor) -> tuple[Tensor, Tensor]:
    """Greedy 4-step coordinate decoding for all cells at once.

    Returns integer tokens (N, 4) and the product of the four chosen
    probabilities (N,).
    """
    n = starts.shape[0]
    coords = starts.new_zeros((n, 0), dtype=torch.long)
    scores = starts.new_ones(n)
    if n == 0:
        return coords.reshape(0, 4), scores
    for _ in range(4):
        logits = model.coord_forward(starts, coords, memory_rows)
        probs = logits[:, -1].softmax(dim=-1)
        choice = probs.argmax(dim=-1)
        scores = scores * probs.gather(1, choice.unsqueeze(1)).squeeze(1)
        coords = torch.cat([coords, choice.unsqueeze(1)], dim=1)
    return coords, scores


def _tokens_to_box(tokens, side: int, n_bins: int) -> BBox:
    l, t, r, b = (dequantize(int(v), side, n_bins) for v in tokens)
    return BBox(min(l, r), min(t, b), max(l, r), max(t, b))


def _attach_boxes(parse: ParseResult, boxes: list[BBox]):
    """Non-empty parse cells get the predicted boxes, in document order."""
    it = iter(boxes)
    rows = []
    for row in parse.rows:
        out = []
        for cell in row:
            if not cell.is_empty:
                out.append(dataclasses.replace(cell, bbox=next(it)))
            else:
                out.append(cell)
        rows.append(tuple(out))
    leftovers = sum(1 for _ in it)
    if leftovers:
        raise RuntimeError(f"{leftovers} boxes without a cell")
    return tuple(rows)


@torch.no_grad()
def greedy_decode(model: TableRecognizer, images: Tensor,
                  max_len: int | None = None) -> list[Prediction]:
    """Decode a batch of images into Predictions."""
    model.eval()
    cfg = model.config
    vocab = model.vocab
    if max_len is None:
        max_len = cfg.max_html_len - 1
    if not 1 <= max_len <= cfg.max_html_len - 1:
        raise ValueError("max_len must fit the position table")

    fmap, memory = model.encode(images)
    batch = images.shape[0]
    seqs = torch.full((batch, 1), vocab.sos_id, dtype=torch.long,
                      device=images.device)
    done = torch.zeros(batch, dtype=torch.bool, device=images.device)
    while seqs.shape[1] <= max_len and not bool(done.all()):
        logits, _, _ = model.html_forward(seqs, memory)
        nxt = logits[:, -1].argmax(dim=-1)
        nxt = torch.where(done, torch.full_like(nxt, vocab.pad_id), nxt)
        seqs = torch.cat([seqs, nxt.unsqueeze(1)], dim=1)
        done |= nxt == vocab.eos_id

    # one clean pass over the finished batch recovers states and attention
    _, hidden, attn = model.html_forward(seqs, memory)

    lengths = []
    for b in range(batch):
        body = seqs[b, 1:]
        eos = (body == vocab.eos_id).nonzero(as_tuple=True)[0]
        lengths.append(int(eos[0]) + 1 if eos.numel() else body.shape[0])

    trigger_ids = torch.tensor(sorted(vocab.trigger_ids),
                               device=seqs.device)
    cell_rows: list[int] = []
    cell_positions: list[int] = []
    per_image_counts = []
    for b in range(batch):
        inputs = seqs[b, : 1 + lengths[b]]
        positions = torch.nonzero(
            torch.isin(inputs, trigger_ids), as_tuple=True)[0]
        per_image_counts.append(positions.numel())
        cell_rows.extend([b] * positions.numel())
        cell_positions.extend(positions.tolist())

    if cell_rows:
        rows_idx = torch.tensor(cell_rows, device=seqs.device)
        pos_idx = torch.tensor(cell_positions, device=seqs.device)
        starts = hidden[rows_idx, pos_idx]
        if cfg.head == SEQUENCE_HEAD:
            coords, scores = batch_coord_decode(
                model, starts, memory.index_select(0, rows_idx))
            all_boxes = [_tokens_to_box(c, cfg.image_side, cfg.n_bins)
                         for c in coords.tolist()]
            all_scores = scores.tolist()
        else:
            normalized = model.regress_boxes(starts) * cfg.image_side
            all_boxes = []
            for l, t, r, b_ in normalized.tolist():
                all_boxes.append(BBox(min(l, r), min(t, b_),
                                      max(l, r), max(t, b_)))
            all_scores = [1.0] * len(all_boxes)
    else:
        all_boxes, all_scores = [], []

    predictions = []
    offset = 0
    for b in range(batch):
        body = seqs[b, 1 : 1 + lengths[b]].tolist()
        tokens = [vocab.token(i) for i in body]
        truncated = not tokens or tokens[-1] != EOS
        parse = parse_token_rows([SOS] + tokens)
        count = per_image_counts[b]
        boxes = all_boxes[offset : offset + count]
        scores = all_scores[offset : offset + count]
        offset += count
        n_triggers = sum(1 for row in parse.rows for c in row
                         if not c.is_empty)
        if n_triggers != count:
            raise RuntimeError(
                f"trigger mismatch: {count} states, {n_triggers} cells")
        laid = rows_to_grid(_attach_boxes(parse, boxes), notes=parse.notes)
        predictions.append(Prediction(
            tokens=tokens,
            parse=parse,
            grid=laid.grid,
            notes=laid.notes,
            boxes=boxes,
            box_scores=scores,
            truncated=truncated,
            attention=attn[:, b, :, : 1 + lengths[b], :].clone(),
        ))
    return predictions


def attention_heat(attention_rows: Tensor, side: int) -> np.ndarray:
    """Cross-attention rows to a side x side heat map in [0, 1].

    attention_rows is (layers, heads, L) for one query position; heads
    and layers are averaged, the L weights reshape to their square grid,
    the map is min-max normalized (a flat map stays zero) and bilinearly
    resized to the image side.
    """
    mean = attention_rows.reshape(-1, attention_rows.shape[-1]).mean(0)
    length = mean.shape[0]
    grid_side = int(round(length ** 0.5))
    if grid_side * grid_side != length:
        raise ValueError(f"attention length {length} is not a square grid")
    grid = mean.reshape(1, 1, grid_side, grid_side)
    lo, hi = float(grid.min()), float(grid.max())
    if hi > lo:
        grid = (grid - lo) / (hi - lo)
    else:
        grid = torch.zeros_like(grid)
    resized = torch.nn.functional.interpolate(
        grid, size=(side, side), mode="bilinear", align_corners=False)
    return resized[0, 0].cpu().numpy()


def overlay_attention(image: np.ndarray, heat: np.ndarray,
                      alpha: float = 0.8) -> np.ndarray:
    """Blend a heat map onto an RGB image as red shading."""
    if image.shape[:2] != heat.shape:
        raise ValueError("image and heat sizes differ")
    weight = (alpha * heat)[..., None]
    red = np.array([255.0, 0.0, 0.0])
    blended = image.astype(np.float64) * (1 - weight) + red * weight
    return np.clip(blended + 0.5, 0, 255).astype(np.uint8)


def attention_mass_in_box(attention_rows: Tensor, box: BBox,
                          side: int) -> float:
    """Fraction of averaged attention falling on cells centered in box."""
    mean = attention_rows.reshape(-1, attention_rows.shape[-1]).double().mean(0)
    length = mean.shape[0]
    grid_side = int(round(length ** 0.5))
    if grid_side * grid_side != length:
        raise ValueError(f"attention length {length} is not a square grid")
    stride = side / grid_side
    total = float(mean.sum())
    if total <= 0:
        return 0.0
    centers = (torch.arange(grid_side, dtype=torch.float64) + 0.5) * stride
    in_y = (centers >= box.top) & (centers < box.bottom)
    in_x = (centers >= box.left) & (centers < box.right)
    mask = in_y.unsqueeze(1) & in_x.unsqueeze(0)
    inside = float(mean.reshape(grid_side, grid_side)[mask].sum())
    return min(inside / total, 1.0)
