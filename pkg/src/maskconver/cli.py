"""``maskconver`` command line: gen-data, train, eval, infer, profile, grad-check.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import colorsys
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import tensor_io
from .config import ConfigError, ModelConfig, TrainConfig, load_config
from .data import SceneConfig, generate_dataset, load_dataset, save_dataset
from .labels import PanopticPrediction
from .numerics import NonFiniteError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("maskconver")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}") from None
    if h <= 0 or w <= 0:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def _emit(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=1, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _load_dataset(path):
    try:
        return load_dataset(path)
    except (OSError, tensor_io.TensorFormatError, ValueError) as e:
        raise DataError(f"cannot read dataset {path}: {e}") from e


# -- commands --------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    h, w = args.size
    try:
        cfg = SceneConfig(h, w, seed=args.seed, thing_classes=args.thing_classes,
                          stuff_classes=args.stuff_classes)
    except ValueError as e:
        raise UsageError(str(e)) from e
    if args.collisions and cfg.thing_classes < 2:
        raise UsageError("collision scenes need at least 2 thing classes")
    scenes = generate_dataset(args.count, cfg, args.collisions)
    try:
        save_dataset(args.out, scenes, cfg.categories)
    except OSError as e:
        raise DataError(f"cannot write dataset to {args.out}: {e}") from e
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return EXIT_OK


def _read_config(path) -> tuple[ModelConfig, TrainConfig]:
    if path is None:
        return ModelConfig(), TrainConfig()
    try:
        return load_config(path)
    except (OSError, json.JSONDecodeError, ConfigError, TypeError) as e:
        raise UsageError(f"bad config {path}: {e}") from e


def cmd_train(args) -> int:
    from dataclasses import replace

    from .training.loop import Trainer

    model_cfg, train_cfg = _read_config(args.config)
    if args.steps is not None:
        train_cfg = replace(train_cfg, steps=args.steps)
    images, labels, cats = _load_dataset(args.data)
    if not images:
        raise DataError(f"dataset {args.data} has no scenes")
    if model_cfg.num_classes != len(cats):
        model_cfg = replace(model_cfg, num_classes=len(cats))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    log_path.write_text("")
    trainer = Trainer(model_cfg, train_cfg, cats)
    history = trainer.fit(images, labels, log_path=log_path)
    trainer.save(out)
    if history:
        print(f"trained {len(history)} steps: L_total {history[0].total:.4f} -> {history[-1].total:.4f}")
    return EXIT_OK


def _load_model(checkpoint, use_ema: bool):
    from .model import MaskConverModel
    from .training.loop import load_checkpoint

    try:
        cfg, cats, params = load_checkpoint(checkpoint, use_ema)
    except (OSError, KeyError, json.JSONDecodeError, tensor_io.TensorFormatError) as e:
        raise DataError(f"cannot load checkpoint {checkpoint}: {e}") from e
    return MaskConverModel(cfg), cats, params


def cmd_eval(args) -> int:
    from .estimator import predict_panoptic
    from .metrics import evaluate

    images, labels, cats = _load_dataset(args.data)
    if not labels:
        raise DataError(f"dataset {args.data} has no scenes")
    if args.oracle:
        preds = [PanopticPrediction.from_label(l) for l in labels]
    else:
        if not args.checkpoint:
            raise UsageError("--checkpoint is required unless --oracle is given")
        model, ckpt_cats, params = _load_model(args.checkpoint, args.ema == "on")
        if tuple(ckpt_cats) != tuple(cats):
            raise DataError("category table of the checkpoint does not match the dataset")
        preds = predict_panoptic(model, params, np.stack(images), cats)
    report = evaluate(preds, labels).summary()
    report.update(num_images=len(labels), ema=args.ema == "on", oracle=bool(args.oracle))
    _emit(report, args.out)
    return EXIT_OK


def segment_colors(n: int) -> np.ndarray:
    """(n + 1) x 3 uint8 palette; index 0 (void) is black."""
    cols = [(0, 0, 0)] + [colorsys.hsv_to_rgb((i * 0.618034) % 1.0, 0.8, 0.95) for i in range(n)]
    return (np.array(cols) * 255).round().astype(np.uint8) if n else np.zeros((1, 3), np.uint8)


def write_ppm(path, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def cmd_infer(args) -> int:
    from .estimator import check_images, predict_panoptic

    try:
        image = tensor_io.load(args.image)
    except (OSError, tensor_io.TensorFormatError) as e:
        raise DataError(f"cannot read image {args.image}: {e}") from e
    if image.ndim != 3 or image.shape[0] != 3 or image.dtype != np.float32:
        raise DataError(f"image must be float32 3 x H x W, got {image.dtype} {image.shape}")
    try:
        batch = check_images(image)
    except ValueError as e:
        raise DataError(str(e)) from e
    model, cats, params = _load_model(args.checkpoint, args.ema == "on")
    pred = predict_panoptic(model, params, batch, cats)[0]
    pred.save(args.out)
    if args.render:
        write_ppm(args.render, segment_colors(len(pred.segments))[pred.segment_id_map])
    print(f"{len(pred.segments)} segments -> {args.out}.seg.mct")
    return EXIT_OK


def cmd_profile(args) -> int:
    from dataclasses import replace

    from .model import MaskConverModel

    if args.config:
        model_cfg, _ = _read_config(args.config)
    elif args.preset == "coco-resnet50":
        model_cfg = ModelConfig.coco_resnet50()
    else:
        model_cfg = ModelConfig()
    if args.head_kind:
        model_cfg = replace(model_cfg, head_kind=args.head_kind)
    cost = MaskConverModel(model_cfg).cost(args.input)
    doc = {name: c.as_dict() for name, c in cost.items()}
    doc["input"] = list(args.input)
    doc["head_kind"] = model_cfg.head_kind
    _emit(doc, args.out)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from . import gradsuite

    try:
        results = gradsuite.run_suite(args.seed, names=args.cases)
    except KeyError as e:
        raise UsageError(str(e)) from e
    print(gradsuite.format_table(results, args.tol))
    failed = [r.name for r in results if not r.passed(args.tol)]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all {len(results)} cases below {args.tol:g}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="maskconver", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=4)
    g.add_argument("--size", type=parse_size, default=(128, 128))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--collisions", type=int, default=0)
    g.add_argument("--thing-classes", type=int, default=2)
    g.add_argument("--stuff-classes", type=int, default=2)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train and write a checkpoint")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="PQ report over a dataset")
    e.add_argument("--checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--ema", choices=("on", "off"), default="on")
    e.add_argument("--oracle", action="store_true", help="score ground truth against itself")
    e.add_argument("--out", help="report path (default: stdout)")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="panoptic prediction for one MCT1 image")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--out", required=True, help="output prefix")
    i.add_argument("--render", help="write a PPM visualization here")
    i.add_argument("--ema", choices=("on", "off"), default="on")
    i.set_defaults(func=cmd_infer)

    pr = sub.add_parser("profile", help="analytic params and FLOPs")
    pr.add_argument("--config")
    pr.add_argument("--preset", choices=("desk", "coco-resnet50"), default="desk")
    pr.add_argument("--head-kind", choices=("depthwise", "dense"))
    pr.add_argument("--input", type=parse_size, default=(128, 128))
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_profile)

    gc = sub.add_parser("grad-check", help="finite-difference gradient suite")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--cases", nargs="*")
    gc.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"maskconver {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"maskconver {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteError as e:
        print(f"maskconver {args.command}: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
