"""Command-line interface.

Exit codes: 0 success, 2 validation error, 3 divergence, 4 I/O error. Errors
are reported on stderr as one ``kind: message`` line.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import torch

from . import __version__
from .backbone import ENV_VAR, load_backbone
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CycleStyleError, LoadError, ValidationError
from .images import load_image, save_image, to_tensor
from .inference import Stylizer
from .losses import LossWeights, baseline_direct_transfer
from .metrics import evaluate
from .regions import load_label_map, load_masks, load_palette, parse_palette
from .trainer import TrainConfig, json_lines_sink, retrain_for_new_style, train_pair

log = logging.getLogger("cyclestyle")

# defaults for flags a config file may also set
DEFAULTS = {
    "steps": 3000,
    "lr": 1e-3,
    "lambda_c": 1.0,
    "lambda_s": 1.0,
    "seed": 0,
    "mode": "full",
    "log_every": 1,
    "autosave_every": 500,
    "direction": "to_a",
    "bits": 8,
    "serial": False,
    "baseline_max_step": 0.05,
}
COMMAND_DEFAULTS = {"baseline": {"steps": 200}}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or TOML file of flag values; explicit flags win")
    p.add_argument("--backbone", help=f"VGG-19 weight file or random:<seed> (default: ${ENV_VAR}, else random:0)")
    p.add_argument("--seed", type=int)
    p.add_argument("--serial", action="store_true", default=None,
                   help="single-threaded deterministic execution")


def _add_pair(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--image-a", required=required, help="style photo a (PNG)")
    p.add_argument("--image-b", required=required, help="photo b (PNG)")
    p.add_argument("--mask-a", help="segmentation mask for image a; needs --mask-b")
    p.add_argument("--mask-b", help="segmentation mask for image b; needs --mask-a")
    p.add_argument("--palette", help='JSON mapping "#RRGGBB" to an integer label; without it, '
                                     "mask colors are numbered in increasing RGB order")


def _add_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda-c", type=float)
    p.add_argument("--lambda-s", type=float)
    p.add_argument("--log", help="JSON-lines training log file, or - for stdout")
    p.add_argument("--log-every", type=int)
    p.add_argument("--autosave-every", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cyclestyle", description="Photo style transfer between two photos.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network pair on two photos")
    _add_common(p)
    _add_pair(p)
    _add_training(p)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--ckpt", help="checkpoint to resume from")
    p.add_argument("--mode", choices=("full", "instance_norm_only"))

    p = sub.add_parser("retrain", help="adapt a checkpoint to a new pair (instance-norm parameters only)")
    _add_common(p)
    _add_pair(p)
    _add_training(p)
    p.add_argument("--ckpt", required=True, help="pre-trained checkpoint")
    p.add_argument("--out", required=True, help="checkpoint path to write")

    p = sub.add_parser("stylize", help="stylize an image with a trained checkpoint")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", "--image", dest="input", required=True, help="image to stylize")
    p.add_argument("--mask", help="segmentation mask of the input, in the training masks' colors")
    p.add_argument("--palette", help="palette JSON used to read --mask")
    p.add_argument("--direction", choices=("to_a", "to_b"))
    p.add_argument("--bits", type=int, choices=(8, 16))
    p.add_argument("--out", required=True, help="output PNG")

    p = sub.add_parser("eval", help="write an evaluation report for a checkpoint")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", help="report JSON path (default: stdout)")

    p = sub.add_parser("baseline", help="direct pixel optimization of content + style losses")
    _add_common(p)
    _add_pair(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--lambda-c", type=float)
    p.add_argument("--lambda-s", type=float)
    p.add_argument("--out", required=True, help="output PNG")

    p = sub.add_parser("make-toy", help="write the bundled toy photos and masks")
    p.add_argument("--out", required=True, help="directory")
    return parser


def _load_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            data = tomllib.loads(text.decode("utf-8"))
        else:
            data = json.loads(text)
    except ValueError as exc:
        raise ValidationError(f"bad config file {path}: {exc}") from exc
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and explicit flags (flags win)."""
    eff = dict(DEFAULTS)
    eff.update(COMMAND_DEFAULTS.get(args.command, {}))
    if getattr(args, "config", None):
        eff.update(_load_config_file(args.config))
    for k, v in vars(args).items():
        if v is not None and k != "config":
            eff[k] = v
    return eff


def _masks(cfg: dict, x_a, x_b):
    ma, mb = cfg.get("mask_a"), cfg.get("mask_b")
    if (ma is None) != (mb is None):
        raise ValidationError("--mask-a and --mask-b must be given together")
    if ma is None:
        return None
    return load_masks(ma, mb, cfg.get("palette"), shape_a=x_a.shape[:2], shape_b=x_b.shape[:2])


def _train_config(cfg: dict, mode: str) -> TrainConfig:
    return TrainConfig(
        weights=LossWeights(float(cfg["lambda_c"]), float(cfg["lambda_s"])),
        steps=int(cfg["steps"]), lr=float(cfg["lr"]), seed=int(cfg["seed"]), mode=mode,
        log_every=int(cfg["log_every"]), autosave_every=int(cfg["autosave_every"]),
        autosave_path=cfg["out"] + ".autosave" if cfg["steps"] > cfg["autosave_every"] else None,
    )


@contextlib.contextmanager
def _log_sink(target):
    if target is None:
        yield None
    elif target == "-":
        yield json_lines_sink(sys.stdout)
    else:
        try:
            fh = open(target, "w", encoding="utf-8")
        except OSError as exc:
            raise LoadError(f"cannot open log {target}: {exc}") from exc
        with fh:
            yield json_lines_sink(fh)


def cmd_train(cfg: dict) -> int:
    x_a, x_b = load_image(cfg["image_a"]), load_image(cfg["image_b"])
    masks = _masks(cfg, x_a, x_b)
    backbone = load_backbone(cfg.get("backbone"))
    init = load_checkpoint(cfg["ckpt"], backbone) if cfg.get("ckpt") else None
    tcfg = _train_config(cfg, cfg["mode"])
    with _log_sink(cfg.get("log")) as sink:
        ckpt = train_pair(x_a, x_b, masks, tcfg, backbone, init=init, sink=sink)
    save_checkpoint(ckpt, cfg["out"])
    return 0


def cmd_retrain(cfg: dict) -> int:
    x_a, x_b = load_image(cfg["image_a"]), load_image(cfg["image_b"])
    masks = _masks(cfg, x_a, x_b)
    backbone = load_backbone(cfg.get("backbone"))
    base = load_checkpoint(cfg["ckpt"], backbone)
    tcfg = _train_config(cfg, "instance_norm_only")
    with _log_sink(cfg.get("log")) as sink:
        ckpt = retrain_for_new_style(base, x_a, x_b, masks, tcfg, backbone, sink=sink)
    save_checkpoint(ckpt, cfg["out"])
    return 0


def _color_table(ckpt, palette):
    if palette is not None:
        return load_palette(palette)
    names = ckpt.manifest.get("region_names", {})
    colors = {lab: name for lab, name in names.items() if str(name).startswith("#")}
    if not colors:
        raise ValidationError("checkpoint records no mask colors; pass --palette")
    return parse_palette({c: int(lab) for lab, c in colors.items()})


def cmd_stylize(cfg: dict) -> int:
    ckpt = load_checkpoint(cfg["ckpt"])
    image = load_image(cfg["input"])
    labels = None
    if cfg.get("mask"):
        labels = load_label_map(cfg["mask"], _color_table(ckpt, cfg.get("palette")), shape=image.shape[:2])
    out = Stylizer(ckpt)(image, cfg["direction"], labels)
    save_image(cfg["out"], out, bits=int(cfg["bits"]))
    return 0


def cmd_eval(cfg: dict) -> int:
    backbone = load_backbone(cfg.get("backbone"))
    ckpt = load_checkpoint(cfg["ckpt"], backbone)
    report = evaluate(ckpt, backbone).to_json()
    if cfg.get("out"):
        try:
            Path(cfg["out"]).write_text(report + "\n")
        except OSError as exc:
            raise LoadError(f"cannot write report {cfg['out']}: {exc}") from exc
    else:
        print(report)
    return 0


def cmd_baseline(cfg: dict) -> int:
    x_a, x_b = load_image(cfg["image_a"]), load_image(cfg["image_b"])
    masks = _masks(cfg, x_a, x_b)
    backbone = load_backbone(cfg.get("backbone"))
    weights = LossWeights(float(cfg["lambda_c"]), float(cfg["lambda_s"]))
    res = baseline_direct_transfer(x_a, x_b, weights, backbone, int(cfg["steps"]), masks=masks,
                                   max_step=float(cfg["baseline_max_step"]))
    save_image(cfg["out"], res.image)
    log.info("baseline objective %.6g -> %.6g", res.objective[0], res.objective[-1])
    return 0


def cmd_make_toy(cfg: dict) -> int:
    from .toy import write_fixtures
    write_fixtures(cfg["out"])
    return 0


COMMANDS = {
    "train": cmd_train,
    "retrain": cmd_retrain,
    "stylize": cmd_stylize,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "make-toy": cmd_make_toy,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        print("config: " + json.dumps(cfg, sort_keys=True, default=str), file=sys.stderr)
        if cfg.get("serial"):
            torch.set_num_threads(1)
            torch.use_deterministic_algorithms(True)
        return COMMANDS[args.command](cfg)
    except CycleStyleError as exc:
        print(exc.reason(), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"io: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
