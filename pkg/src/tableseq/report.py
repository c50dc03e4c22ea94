"""Figure rendering for training logs, evaluation results, and attention.

Every function writes one PNG and returns its path.  All figures use
the non-interactive backend so they work in headless runs.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.patches as mpatches  # noqa: E402
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .infer import attention_heat, overlay_attention  # noqa: E402
from .metrics import pr_curve  # noqa: E402

GT_COLOR = "#2a9d2a"
PRED_COLOR = "#d43c3c"


def _finish(fig, out_path) -> str:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return str(out_path)


def plot_training_curves(log_path, out_path) -> str:
    """Loss parts and learning rate against the training step."""
    records = [json.loads(line) for line in
               Path(log_path).read_text().splitlines() if line.strip()]
    if not records:
        raise ValueError(f"no records in {log_path}")
    steps = [r["step"] for r in records]
    fig, (ax, ax_lr) = plt.subplots(
        2, 1, figsize=(7, 6), sharex=True,
        gridspec_kw={"height_ratios": (3, 1)})
    for key in ("loss", "structure", "box", "visual"):
        if key in records[0]:
            ax.plot(steps, [r[key] for r in records], label=key)
    ax.set_yscale("log")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(alpha=0.3)
    ax_lr.plot(steps, [r["lr"] for r in records], color="gray")
    ax_lr.set_yscale("log")
    ax_lr.set_ylabel("lr")
    ax_lr.set_xlabel("step")
    ax_lr.grid(alpha=0.3)
    fig.suptitle("training curves")
    return _finish(fig, out_path)


def plot_metric_histograms(per_sample: list[dict], out_path) -> str:
    """Histograms of the per-sample similarity scores."""
    keys = ["teds", "s_teds", "grits_top", "grits_con", "grits_loc"]
    fig, axes = plt.subplots(1, len(keys), figsize=(3 * len(keys), 2.8))
    for ax, key in zip(axes, keys):
        values = [r[key] for r in per_sample]
        ax.hist(values, bins=np.linspace(0, 1, 21), color="#5577aa")
        ax.set_title(f"{key}\nmean {np.mean(values):.3f}", fontsize=9)
        ax.set_xlim(0, 1)
    fig.tight_layout()
    return _finish(fig, out_path)


def plot_pr_curves(preds_by_image, gts_by_image, out_path,
                   thresholds=(0.5, 0.75, 0.9)) -> str:
    """Precision-recall curves at a few box IoU thresholds."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for thr in thresholds:
        curve = pr_curve(preds_by_image, gts_by_image, thr)
        ax.plot((0,) + curve.recalls, (1,) + curve.precisions,
                label=f"IoU {thr:.2f}", drawstyle="steps-post")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    ax.set_title("cell box detection")
    return _finish(fig, out_path)


def draw_boxes_figure(image: np.ndarray, gt_boxes, pred_boxes,
                      out_path) -> str:
    """Image with ground-truth and predicted boxes side by side."""
    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    for ax, boxes, color, title in (
            (axes[0], gt_boxes, GT_COLOR, "ground truth"),
            (axes[1], pred_boxes, PRED_COLOR, "predicted")):
        ax.imshow(image)
        for box in boxes:
            ax.add_patch(mpatches.Rectangle(
                (box.left, box.top), box.width, box.height,
                fill=False, edgecolor=color, linewidth=1.2))
        ax.set_title(title, fontsize=10)
        ax.axis("off")
    fig.tight_layout()
    return _finish(fig, out_path)


def draw_attention_figure(image: np.ndarray, prediction, out_path,
                          max_cells: int = 4) -> str:
    """Attention overlays for the first cells of one prediction.

    Each panel shades the image by where the structure decoder looked
    when it consumed that cell's token.
    """
    side = image.shape[0]
    positions = []
    cell_no = 0
    tokens = ["<sos>"] + prediction.tokens
    for pos, tok in enumerate(tokens):
        if tok in ("<td>[]</td>", "<td"):
            positions.append((pos, cell_no))
            cell_no += 1
    positions = positions[:max_cells]
    if not positions:
        raise ValueError("prediction has no cells to visualize")
    fig, axes = plt.subplots(1, len(positions),
                             figsize=(3.2 * len(positions), 3.4))
    if len(positions) == 1:
        axes = [axes]
    for ax, (pos, cell_no) in zip(axes, positions):
        heat = attention_heat(prediction.attention[:, :, pos, :], side)
        ax.imshow(overlay_attention(image, heat, alpha=0.8))
        box = (prediction.boxes[cell_no]
               if cell_no < len(prediction.boxes) else None)
        if box is not None:
            ax.add_patch(mpatches.Rectangle(
                (box.left, box.top), box.width, box.height,
                fill=False, edgecolor="white", linewidth=1.2))
        ax.set_title(f"cell {cell_no}", fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    return _finish(fig, out_path)


def attention_comparison_figure(image: np.ndarray, panels, out_path) -> str:
    """Side-by-side attention overlays from different models.

    panels is a list of (label, heat, box, mass) tuples; mass is the
    fraction of attention inside the box and lands in the panel title.
    """
    fig, axes = plt.subplots(1, len(panels),
                             figsize=(3.4 * len(panels), 3.6))
    if len(panels) == 1:
        axes = [axes]
    for ax, (label, heat, box, mass) in zip(axes, panels):
        ax.imshow(overlay_attention(image, heat, alpha=0.8))
        if box is not None:
            ax.add_patch(mpatches.Rectangle(
                (box.left, box.top), box.width, box.height,
                fill=False, edgecolor="white", linewidth=1.4))
        ax.set_title(f"{label}\nattention in box: {mass:.2f}", fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    return _finish(fig, out_path)
