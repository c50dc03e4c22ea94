"""Training loop for the recognizer on generated tables.

Single-process, in-memory batching.  Each step teacher-forces the
structure decoder, runs the box objective for every non-empty cell of
the batch at once, optionally adds the visual-alignment term, and logs a
JSON line.  A non-finite loss aborts the run.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig, config_from_dict, config_to_dict
from .core import quantize_box
from .datagen import Sample, generate_dataset
from .losses import (
    coordinate_loss,
    l1_box_loss,
    structure_loss,
    total_loss,
    visual_alignment_loss,
)
from .model import (
    SEQUENCE_HEAD,
    TableRecognizer,
    images_to_tensor,
    load_checkpoint,
    save_checkpoint,
)

DETERMINISM_ENV = "TABLESEQ_DETERMINISTIC"


@dataclass
class PreparedSample:
    """Tokenized sample with per-cell targets, ready to batch."""

    token_ids: list[int]
    boxes: torch.Tensor        # (K, 4) pixel coordinates
    coord_tokens: torch.Tensor  # (K, 4) quantized bins


def prepare_samples(samples: list[Sample], model: TableRecognizer
                    ) -> list[PreparedSample]:
    cfg = model.config
    out = []
    for sample in samples:
        ids = model.vocab.encode(sample.tokens(cfg.max_span))
        boxes = []
        bins = []
        for anchor in sample.grid.nonempty_anchors():
            box = anchor.cell.bbox
            boxes.append(box.as_tuple())
            bins.append(
                quantize_box(box, cfg.image_side, cfg.n_bins).as_tuple())
        out.append(PreparedSample(
            token_ids=ids,
            boxes=torch.tensor(boxes, dtype=torch.float32).reshape(-1, 4),
            coord_tokens=torch.tensor(bins, dtype=torch.long).reshape(-1, 4),
        ))
    return out


def collate(prepared: list[PreparedSample], pad_id: int):
    """Pad a batch into (inputs, targets) token tensors.

    Inputs drop each sequence's last token and targets drop the first,
    so position t predicts target t; short sequences pad on the right.
    """
    longest = max(len(p.token_ids) for p in prepared)
    inputs = torch.full((len(prepared), longest - 1), pad_id,
                        dtype=torch.long)
    targets = torch.full_like(inputs, pad_id)
    for i, p in enumerate(prepared):
        ids = torch.tensor(p.token_ids, dtype=torch.long)
        inputs[i, : len(ids) - 1] = ids[:-1]
        targets[i, : len(ids) - 1] = ids[1:]
    return inputs, targets


def gather_cells(prepared: list[PreparedSample], inputs: torch.Tensor,
                 trigger_ids) -> tuple[torch.Tensor, ...]:
    ids = torch.tensor(sorted(trigger_ids))
    rows, positions = torch.nonzero(torch.isin(inputs, ids), as_tuple=True)
    boxes = torch.cat([p.boxes for p in prepared])
    coord_tokens = torch.cat([p.coord_tokens for p in prepared])
    if rows.shape[0] != boxes.shape[0]:
        raise RuntimeError("trigger positions and cell targets disagree")
    return rows, positions, boxes, coord_tokens


class EpochBatcher:
    """Shuffled epochs, fixed batch size, remainder carried over."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = np.random.default_rng(seed)
        self.queue: list[int] = []

    def next_batch(self) -> list[int]:
        while len(self.queue) < self.batch_size:
            self.queue.extend(self.rng.permutation(self.n).tolist())
        batch, self.queue = (self.queue[: self.batch_size],
                             self.queue[self.batch_size :])
        return batch


def training_step(model: TableRecognizer, images: torch.Tensor,
                  prepared: list[PreparedSample],
                  cfg: ExperimentConfig) -> dict:
    """One forward/loss computation; returns the named loss parts."""
    inputs, targets = collate(prepared, model.vocab.pad_id)
    fmap, memory = model.encode(images)
    logits, hidden, _ = model.html_forward(inputs, memory)
    s_loss = structure_loss(logits, targets, model.vocab.pad_id)

    rows, positions, boxes, coord_tokens = gather_cells(
        prepared, inputs, model.vocab.trigger_ids)
    starts = hidden[rows, positions]
    if model.config.head == SEQUENCE_HEAD:
        coord_logits = model.coord_forward(
            starts, coord_tokens[:, :3], memory.index_select(0, rows))
        b_loss = coordinate_loss(coord_logits, coord_tokens)
    else:
        b_loss = l1_box_loss(model.regress_boxes(starts),
                             boxes / model.config.image_side)

    v_loss = None
    if cfg.visual_alignment:
        pooled = model.pool_box_features(fmap, boxes, rows)
        v_loss = visual_alignment_loss(starts, pooled, rows)

    loss = total_loss(s_loss, b_loss, v_loss, cfg.weights)
    parts = {"loss": float(loss.detach()),
             "structure": float(s_loss.detach()),
             "box": float(b_loss.detach())}
    if v_loss is not None:
        parts["visual"] = float(v_loss.detach())
    return {"total": loss, **parts}


def train(cfg: ExperimentConfig, out_dir, resume: bool = False) -> dict:
    """Train per the config, writing logs and a checkpoint to out_dir.

    With resume=True an existing checkpoint in out_dir continues toward
    cfg.optim.steps; the config must match except for the step budget,
    and the restored schedule keeps its original decay points.
    """
    if os.environ.get(DETERMINISM_ENV) == "1":
        torch.use_deterministic_algorithms(True)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / "checkpoint.pt"
    log_path = out_dir / "train_log.jsonl"

    samples = generate_dataset(cfg.data, cfg.n_train, seed=cfg.data_seed)

    torch.manual_seed(cfg.optim.seed)
    start_step = 0
    if resume and checkpoint_path.exists():
        model, payload = load_checkpoint(checkpoint_path, expect=cfg.model)
        start_step = payload["step"]
        stored = payload["extra"].get("experiment")
        if stored is not None:
            # a resumed run may only extend the step budget
            stored_cfg = config_from_dict(stored)
            aligned = dataclasses.replace(
                stored_cfg, optim=dataclasses.replace(
                    stored_cfg.optim, steps=cfg.optim.steps))
            if aligned != cfg:
                raise ValueError(
                    "checkpoint was trained with a different config")
    else:
        model = TableRecognizer(cfg.model)
        payload = None
    model.train()

    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.optim.lr,
                                  weight_decay=cfg.optim.weight_decay)
    milestones = sorted({max(1, int(f * cfg.optim.steps))
                         for f in cfg.optim.milestones})
    scheduler = torch.optim.lr_scheduler.MultiStepLR(
        optimizer, milestones=milestones, gamma=cfg.optim.gamma)
    if payload is not None:
        optimizer.load_state_dict(payload["optimizer_state"])
        scheduler.load_state_dict(payload["extra"]["scheduler"])

    prepared = prepare_samples(samples, model)
    images = images_to_tensor([s.image for s in samples])
    batcher = EpochBatcher(len(samples), cfg.optim.batch_size,
                           cfg.optim.seed)
    if resume and start_step:
        for _ in range(start_step):
            batcher.next_batch()

    def snapshot(step: int) -> None:
        save_checkpoint(
            checkpoint_path, model, optimizer=optimizer, step=step,
            extra={"scheduler": scheduler.state_dict(),
                   "experiment": config_to_dict(cfg)})

    last_parts: dict = {}
    every = cfg.optim.checkpoint_every
    with open(log_path, "a" if start_step else "w") as log:
        for step in range(start_step + 1, cfg.optim.steps + 1):
            batch = batcher.next_batch()
            optimizer.zero_grad()
            result = training_step(
                model, images[batch], [prepared[i] for i in batch], cfg)
            result["total"].backward()
            optimizer.step()
            scheduler.step()
            last_parts = {k: v for k, v in result.items() if k != "total"}
            if step % cfg.optim.log_every == 0 or step == cfg.optim.steps:
                record = {"step": step,
                          "lr": scheduler.get_last_lr()[0], **last_parts}
                log.write(json.dumps(record) + "\n")
                log.flush()
            if every and step % every == 0 and step < cfg.optim.steps:
                snapshot(step)

    snapshot(cfg.optim.steps)
    return {"steps": cfg.optim.steps, "checkpoint": str(checkpoint_path),
            **last_parts}
