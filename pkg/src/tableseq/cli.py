"""Command line interface.

Subcommands: generate (render a dataset to disk), train, eval (metrics
as JSON/CSV plus figures), infer (one image to structure HTML), and
visualize (attention and box overlays for one image).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .config import (
    ExperimentConfig,
    apply_overrides,
    config_from_dict,
    load_config,
    save_config,
)
from .datagen import export_dataset, generate_dataset, load_dataset
from .evaluate import detection_pools, evaluate_model
from .infer import greedy_decode
from .model import images_to_tensor, load_checkpoint
from .postproc import assemble_html
from .train import train


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    return cfg


def _add_config_options(parser) -> None:
    parser.add_argument("--config", help="experiment YAML file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field (repeatable)")


def _load_image(path, expected_side: int) -> np.ndarray:
    image = np.asarray(Image.open(path).convert("RGB"))
    if image.shape[0] != expected_side or image.shape[1] != expected_side:
        raise SystemExit(
            f"{path}: image is {image.shape[1]}x{image.shape[0]}, the "
            f"checkpoint expects {expected_side}x{expected_side}")
    return image


def _model_and_config(args):
    model, payload = load_checkpoint(args.checkpoint)
    stored = payload["extra"].get("experiment")
    if stored is not None:
        cfg = config_from_dict(stored)
    else:
        cfg = dataclasses.replace(_config_from_args(args), model=model.config)
    return model, cfg


def cmd_generate(args) -> int:
    cfg = _config_from_args(args)
    n = args.n if args.n is not None else cfg.n_train
    seed = args.seed if args.seed is not None else cfg.data_seed
    samples = generate_dataset(cfg.data, n, seed=seed)
    export_dataset(samples, args.out, cfg.data)
    print(f"wrote {n} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")
    stats = train(cfg, out, resume=args.resume)
    print(json.dumps(stats, indent=2))
    return 0


def cmd_eval(args) -> int:
    model, cfg = _model_and_config(args)
    if args.data:
        samples = load_dataset(args.data)
    elif args.split == "train":
        samples = generate_dataset(cfg.data, cfg.n_train, seed=cfg.data_seed)
    else:
        samples = generate_dataset(cfg.data, cfg.n_eval,
                                   seed=cfg.data_seed + 1)
    report = evaluate_model(model, samples, batch_size=args.batch_size,
                            keep_predictions=True)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(
        json.dumps(report.aggregate, indent=2, sort_keys=True) + "\n")
    with open(out / "per_sample.csv", "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=report.per_sample[0])
        writer.writeheader()
        writer.writerows(report.per_sample)

    from . import report as fig
    figures = out / "figures"
    fig.plot_metric_histograms(report.per_sample,
                               figures / "score_histograms.png")
    preds_by_image, gts_by_image = detection_pools(samples,
                                                   report.predictions)
    fig.plot_pr_curves(preds_by_image, gts_by_image,
                       figures / "pr_curves.png")
    for i in range(min(args.figures, len(samples))):
        fig.draw_boxes_figure(
            samples[i].image, gts_by_image[i],
            report.predictions[i].boxes, figures / f"boxes_{i:03d}.png")
    log_path = Path(args.checkpoint).parent / "train_log.jsonl"
    if log_path.exists():
        fig.plot_training_curves(log_path, figures / "training_curves.png")
    print(json.dumps(report.aggregate, indent=2, sort_keys=True))
    return 0


def cmd_infer(args) -> int:
    model, cfg = _model_and_config(args)
    image = _load_image(args.image, model.config.image_side)
    prediction = greedy_decode(model, images_to_tensor(image))[0]
    html = assemble_html(prediction.parse, [""] * len(prediction.boxes))
    result = {
        "tokens": prediction.tokens,
        "html": html,
        "boxes": [box.as_tuple() for box in prediction.boxes],
        "box_scores": prediction.box_scores,
        "truncated": prediction.truncated,
        "notes": list(prediction.notes),
    }
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(result, indent=2) + "\n")
    print(html)
    return 0


def cmd_visualize(args) -> int:
    model, cfg = _model_and_config(args)
    image = _load_image(args.image, model.config.image_side)
    prediction = greedy_decode(model, images_to_tensor(image))[0]
    from . import report as fig
    out = Path(args.out)
    boxes_path = fig.draw_boxes_figure(image, [], prediction.boxes,
                                       out / "boxes.png")
    paths = [boxes_path]
    if prediction.boxes:
        paths.append(fig.draw_attention_figure(
            image, prediction, out / "attention.png",
            max_cells=args.cells))
    for path in paths:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tableseq",
        description="table structure recognition on synthetic tables")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a dataset to a directory")
    _add_config_options(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--seed", type=int, help="dataset seed")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train a recognizer")
    _add_config_options(p)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, write a report")
    _add_config_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--data", help="exported dataset directory")
    p.add_argument("--split", choices=("train", "eval"), default="eval")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--figures", type=int, default=4,
                   help="box overlay figures to render")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="decode one image to HTML")
    _add_config_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", help="write the full result JSON here")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("visualize", help="attention and box figures")
    _add_config_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="figure directory")
    p.add_argument("--cells", type=int, default=4)
    p.set_defaults(fn=cmd_visualize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
