"""Command-line entry point for training, enhancement, and evaluation.

Exit codes: 0 success, 2 configuration/usage error, 3 data error, 4
checkpoint error. Diagnostic messages go to standard error. Values from a
``--config`` YAML file override the built-in defaults; explicit flags
override both.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as config_mod
from . import data as data_mod
from . import metrics as metrics_mod
from . import trainer as trainer_mod
from .checkpoint import load_checkpoint
from .errors import CheckpointError, ConfigError, DataError, ShapeError


def _add_train_flags(p):
    p.add_argument("--config", help="YAML config file (flags override it)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None, help="batch size")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--image-size", type=int, default=None, dest="image_size")


def build_parser():
    parser = argparse.ArgumentParser(prog="pugan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain-par", help="pretrain the parameter estimators")
    p.add_argument("--data", required=True, help="synthetic dataset root")
    p.add_argument("--out", required=True, help="run directory")
    _add_train_flags(p)
    p.set_defaults(func=cmd_pretrain_par)

    p = sub.add_parser("train", help="adversarial training of the full model")
    p.add_argument("--data", required=True, help="paired dataset root")
    p.add_argument("--par-ckpt", required=True, dest="par_ckpt")
    p.add_argument("--out", required=True, help="run directory")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance images with a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="image file or directory")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--save-intermediates", action="store_true", dest="save_intermediates",
                   help="also write the color-enhanced image, transmission, and depth")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="compute metrics over a directory of images")
    p.add_argument("--pred", required=True, help="predictions directory")
    p.add_argument("--gt", default=None, help="ground-truth directory")
    p.add_argument("--report", required=True, help="output report (.csv or .json)")
    p.add_argument("--metrics", default=None,
                   help="comma-separated subset of psnr,mse,uiqm,uciqe")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("make-fixtures", help="generate a physics-consistent fixture dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_fixtures)

    return parser


def _build_config(args, defaults):
    cfg = defaults
    if args.config:
        config_mod.apply_config_file(cfg, config_mod.load_config_file(args.config))
    for flag, field in (
        ("epochs", "epochs"),
        ("batch", "batch_size"),
        ("lr", "lr"),
        ("seed", "seed"),
        ("image_size", "image_size"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, field, value)
    cfg.data_root = args.data
    cfg.out_dir = args.out
    return cfg.validate()


def cmd_pretrain_par(args):
    cfg = _build_config(args, config_mod.par_defaults())
    dataset = data_mod.load_synthetic(args.data, image_size=cfg.image_size)
    trainer_mod.pretrain_par(dataset, cfg, run_dir=args.out)
    return 0


def cmd_train(args):
    cfg = _build_config(args, config_mod.pugan_defaults())
    dataset = data_mod.load_paired(args.data, "train", image_size=cfg.image_size)
    par_ckpt = load_checkpoint(args.par_ckpt)
    trainer_mod.train_pugan(dataset, par_ckpt, cfg, run_dir=args.out)
    return 0


def _input_images(path):
    path = Path(path)
    if path.is_file():
        return [path]
    if path.is_dir():
        files = sorted(
            p for p in path.iterdir() if p.suffix.lower() in data_mod.IMAGE_EXTENSIONS
        )
        if not files:
            raise DataError(f"no readable images under {path}")
        return files
    raise DataError(f"input path {path} does not exist")


def _tint_transmission(t):
    """Single-channel transmission rendered as a blue-tinted false-color image."""
    v = t.mean(dim=0, keepdim=True)
    return torch.cat([0.3 * v, 0.7 * v, v], dim=0)


def cmd_enhance(args):
    torch.manual_seed(args.seed)
    ckpt = load_checkpoint(args.ckpt)
    cfg, par, generator = trainer_mod.load_models_for_inference(ckpt)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in _input_images(args.input):
        image = data_mod.load_image(path, cfg.image_size).unsqueeze(0)
        enhanced, par_out = trainer_mod.enhance(par, generator, image)
        data_mod.save_image(enhanced[0], out_dir / f"{path.stem}.png")
        if args.save_intermediates:
            data_mod.save_image(par_out.j_prime[0], out_dir / f"{path.stem}.jprime.png")
            data_mod.save_image(_tint_transmission(par_out.t[0]), out_dir / f"{path.stem}.t.png")
            data_mod.save_image(par_out.d1[0], out_dir / f"{path.stem}.d1.png")
    return 0


def _load_dir_images(directory):
    stems = data_mod._collect_stems(directory)
    return {
        stem: np.asarray(data_mod.load_image(path).permute(1, 2, 0))
        for stem, path in stems.items()
    }


def cmd_eval(args):
    preds = _load_dir_images(args.pred)
    refs = None
    if args.gt:
        refs = _load_dir_images(args.gt)
        orphans = sorted(set(preds) ^ set(refs))
        if orphans:
            raise DataError(f"unmatched prediction/ground-truth stems: {orphans}")
    if args.metrics:
        names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    else:
        names = list(metrics_mod.ALL_METRICS if refs is not None
                     else metrics_mod.NO_REFERENCE_METRICS)
    try:
        report = metrics_mod.build_report(preds, refs, names)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report.write(args.report)
    agg = report.aggregates()
    print("  ".join(f"{k}={agg[k]:.4f}" for k in report.columns))
    return 0


def cmd_make_fixtures(args):
    parts = data_mod.fixture_components(args.count, args.size, args.seed)
    out = Path(args.out)
    synthetic = data_mod.SyntheticDataset(
        data_mod.SyntheticSample(degraded=p["degraded"], depth=p["depth"],
                                 beta=p["beta"], id=p["id"])
        for p in parts
    )
    paired = data_mod.PairedDataset(
        data_mod.PairedSample(degraded=p["degraded"], reference=p["clean"], id=p["id"])
        for p in parts
    )
    data_mod.save_synthetic(synthetic, out)
    data_mod.save_paired(paired, out, "train")
    print(f"wrote {args.count} fixture samples ({args.size}x{args.size}) under {out}")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
