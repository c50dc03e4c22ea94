"""Training objectives for the recognizer.

Three parts: token-level structure loss, per-cell box objective (either
coordinate-token cross entropy or direct L1), and a contrastive
visual-alignment term tying each cell's decoder state to the image
feature pooled under its ground-truth box.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor


@dataclass(frozen=True)
class LossWeights:
    structure: float = 1.0
    box: float = 1.0
    visual: float = 1.0


def structure_loss(logits: Tensor, targets: Tensor, pad_id: int) -> Tensor:
    """Mean over the batch of each sequence's summed token NLL.

    logits (B, T, V) predict targets (B, T); padding positions are
    excluded from the sums.
    """
    logp = F.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    mask = targets != pad_id
    return (nll * mask).sum(dim=1).mean()


def coordinate_loss(logits: Tensor, targets: Tensor) -> Tensor:
    """Summed NLL of the four coordinate tokens, averaged over cells.

    logits (K, 4, V) predict targets (K, 4).  No cells means no loss.
    """
    if logits.shape[0] == 0:
        return logits.sum() * 0.0
    logp = F.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return nll.sum() / logits.shape[0]


def visual_alignment_loss(cell_states: Tensor, box_features: Tensor,
                          cell_to_image: Tensor,
                          temperature: float = 0.04) -> Tensor:
    """Contrastive alignment between cell states and pooled box features.

    Both inputs are (K, d) and row k of each describes the same cell.
    Each cell's positive is its own box feature; its negatives are the
    other cells of the same image.  Cosine similarities divided by the
    temperature feed a cross-entropy per cell, averaged over all cells.
    A single-cell image contributes exactly zero.
    """
    if cell_states.shape[0] == 0:
        return cell_states.sum() * 0.0
    if cell_states.shape != box_features.shape:
        raise ValueError("cell states and box features must align row-wise")
    f = F.normalize(cell_states, dim=1)
    g = F.normalize(box_features, dim=1)
    terms = []
    for image in torch.unique(cell_to_image):
        rows = torch.nonzero(cell_to_image == image, as_tuple=True)[0]
        sims = (f[rows] @ g[rows].T) / temperature
        terms.append(torch.diagonal(sims) - torch.logsumexp(sims, dim=1))
    return -torch.cat(terms).mean()


def l1_box_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over cells and coordinates; empty input is 0."""
    if pred.shape[0] == 0:
        return pred.sum() * 0.0
    return F.l1_loss(pred, target)


def total_loss(structure: Tensor, box: Tensor | None = None,
               visual: Tensor | None = None,
               weights: LossWeights = LossWeights()) -> Tensor:
    """Weighted sum of the provided parts; non-finite parts are an error."""
    parts = {"structure": (structure, weights.structure)}
    if box is not None:
        parts["box"] = (box, weights.box)
    if visual is not None:
        parts["visual"] = (visual, weights.visual)
    for name, (value, _) in parts.items():
        if not torch.isfinite(value):
            raise FloatingPointError(f"{name} loss is not finite")
    total = structure.new_zeros(())
    for value, weight in parts.values():
        total = total + weight * value
    return total
