"""Dataset-level evaluation of a trained recognizer.

Each image is decoded, predicted boxes pull text from the sample's text
lines, and the filled prediction is scored against the ground truth:
tree similarity with and without content, grid similarities, adjacency
relation F1 (content and IoU matching), and box detection AP.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import torch

from .core import ParseResult, rows_to_grid
from .datagen import Sample
from .infer import Prediction, greedy_decode
from .metrics import (
    car_corpus,
    detection_ap,
    grits_all,
    teds,
    tree_from_grid,
    tree_from_rows,
    weighted_average_f1,
)
from .model import TableRecognizer
from .postproc import extract_cell_texts

CAR_SIGMAS = (0.6, 0.7, 0.8, 0.9)


@dataclass
class EvalReport:
    per_sample: list[dict]
    aggregate: dict
    predictions: list[Prediction] = field(default_factory=list)


def fill_parse(parse: ParseResult, boxes, texts) -> tuple:
    """Parsed rows with predicted boxes and extracted texts attached."""
    boxes_it = iter(boxes)
    texts_it = iter(texts)
    rows = []
    for row in parse.rows:
        out = []
        for cell in row:
            if cell.is_empty:
                out.append(cell)
            else:
                out.append(dataclasses.replace(
                    cell, bbox=next(boxes_it), content=next(texts_it, "")))
        rows.append(tuple(out))
    return tuple(rows)


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0


def detection_pools(samples, predictions):
    """Per-image (box, score) prediction lists and ground-truth box lists."""
    preds = [list(zip(p.boxes, p.box_scores)) for p in predictions]
    gts = [[a.cell.bbox for a in s.grid.nonempty_anchors()] for s in samples]
    return preds, gts


@torch.no_grad()
def evaluate_model(model: TableRecognizer, samples: list[Sample],
                   batch_size: int = 8, max_len: int | None = None,
                   keep_predictions: bool = False) -> EvalReport:
    from .model import images_to_tensor

    predictions: list[Prediction] = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        images = images_to_tensor([s.image for s in chunk])
        predictions.extend(greedy_decode(model, images, max_len=max_len))

    per_sample = []
    grid_pairs = []
    preds_by_image, gts_by_image = detection_pools(samples, predictions)
    max_span = model.config.max_span
    for sample, pred, gt_boxes in zip(samples, predictions, gts_by_image):
        texts = extract_cell_texts(pred.boxes, sample.text_lines)
        filled = fill_parse(pred.parse, pred.boxes, texts)
        pred_tree = tree_from_rows(filled)
        gt_tree = tree_from_grid(sample.grid)
        pred_grid = rows_to_grid(filled).grid
        grid_pairs.append((pred_grid, sample.grid))
        scores = grits_all(pred_grid, sample.grid)
        record = {
            "teds": teds(pred_tree, gt_tree),
            "s_teds": teds(pred_tree, gt_tree, structure_only=True),
            "grits_top": scores["top"],
            "grits_con": scores["con"],
            "grits_loc": scores["loc"],
            "exact_sequence":
                pred.tokens == sample.tokens(max_span)[1:],
            "truncated": pred.truncated,
            "n_cells_pred": len(pred.boxes),
            "n_cells_gt": len(gt_boxes),
        }
        per_sample.append(record)

    content = car_corpus(grid_pairs, mode="content")
    by_sigma = {s: car_corpus(grid_pairs, mode="iou", sigma=s)
                for s in CAR_SIGMAS}
    ap = detection_ap(preds_by_image, gts_by_image)

    aggregate = {
        "n_samples": len(samples),
        "teds": _mean(r["teds"] for r in per_sample),
        "s_teds": _mean(r["s_teds"] for r in per_sample),
        "grits_top": _mean(r["grits_top"] for r in per_sample),
        "grits_con": _mean(r["grits_con"] for r in per_sample),
        "grits_loc": _mean(r["grits_loc"] for r in per_sample),
        "sequence_accuracy": _mean(
            1.0 if r["exact_sequence"] else 0.0 for r in per_sample),
        "truncation_rate": _mean(
            1.0 if r["truncated"] else 0.0 for r in per_sample),
        "car_content_precision": content.precision,
        "car_content_recall": content.recall,
        "car_content_f1": content.f1,
        "car_wavg_f1": weighted_average_f1(by_sigma),
        "ap50": ap[0.5],
        "ap75": ap[0.75],
        "ap_mean": ap["mean"],
    }
    for sigma, result in by_sigma.items():
        aggregate[f"car_iou_f1@{sigma:.2f}"] = result.f1
    return EvalReport(
        per_sample=per_sample,
        aggregate=aggregate,
        predictions=predictions if keep_predictions else [],
    )
