"""Command-line entry point: synth, train, dehaze, eval, analyze.

Every failure prints one line ``dehazekit: error[<kind>]: <message>`` on
stderr and exits with a nonzero status.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import hazegen, imageio, metrics, trainer, wavelet
from . import tensor as T
from .tensor import ContractError, NumericFault, Tensor

DEPTH_SCALE = 4.0   # depth maps are stored as d / DEPTH_SCALE in 8 bits
IMAGE_SUFFIXES = {".ppm", ".png"}

EXIT_CODES = {"usage": 2, "contract": 3, "io": 4, "format": 5, "manifest": 6,
              "checkpoint": 7, "numeric": 8}


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

FLAG_TO_FIELD = {
    "levels": "levels", "channels": "channels", "blocks": "blocks", "crop": "crop",
    "batch": "batch", "lr": "lr", "steps": "steps", "wavelet": "wavelet",
    "subband_mode": "subband_mode", "lambda_project": "lambda_project",
    "lambda_reflect": "lambda_reflect", "lambda_retinex": "lambda_retinex",
    "lambda_color": "lambda_color", "lambda_stats": "lambda_stats", "use_dwsc": "use_dwsc",
    "seed": "seed",
}


def _coerce(name: str, raw: str):
    kinds = {f.name: f.type for f in fields(trainer.TrainConfig)}
    kind = kinds.get(name)
    if kind is None:
        raise CliError("usage", f"unknown config key {name!r}")
    try:
        if kind in ("bool", bool):
            if raw.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError
            return raw.lower() in ("1", "true", "yes")
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        return raw
    except ValueError:
        raise CliError("usage", f"bad value for {name}: {raw!r}") from None


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError("io", f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("usage", f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[key] = _coerce(key, value)
    return out


def build_config(args, n_hazy: int) -> trainer.TrainConfig:
    values = read_config_file(args.config) if args.config else {}
    for flag, name in FLAG_TO_FIELD.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    if args.epochs is not None:
        batch = values.get("batch", trainer.TrainConfig.batch)
        values["steps"] = max(1, math.ceil(args.epochs * n_hazy / batch))
    cfg = trainer.TrainConfig(**values)
    try:
        cfg.validate()
        wavelet.make_filters(cfg.wavelet)
    except (ContractError, wavelet.UnsupportedFamily) as exc:
        raise CliError("contract", str(exc)) from None
    if cfg.subband_mode not in ("broad", "ll-only"):
        raise CliError("contract", f"unknown subband mode {cfg.subband_mode!r}")
    return cfg


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _images_in(directory: Path) -> dict[str, Path]:
    if not directory.is_dir():
        raise CliError("io", f"not a directory: {directory}")
    return {p.stem: p for p in sorted(directory.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def _read(path) -> Tensor:
    try:
        return imageio.read_image(path)
    except imageio.ImageFormatError as exc:
        raise CliError("format", str(exc)) from None


def _load_split(data_dir: Path, holdout: int):
    rows = imageio.load_manifest(data_dir / "manifest.txt")
    train_rows = rows[holdout:]
    if len(train_rows) < 2:
        raise CliError("manifest", f"{data_dir / 'manifest.txt'}: need at least 2 training rows "
                                   f"after holding out {holdout}")
    half = (len(train_rows) + 1) // 2
    hazy = [_read(data_dir / r.hazy) for r in train_rows[:half]]
    clean = [_read(data_dir / r.clean) for r in train_rows[half:]]
    return hazy, clean


def dehaze_image(model: trainer.Model, x: Tensor) -> Tensor:
    """Reflect-pad odd sizes up to a multiple of 2**levels, run, crop back."""
    h, w = x.shape[2:]
    m = 2 ** max(model.enhancer.cfg.levels, 1)
    ph, pw = (-h) % m, (-w) % m
    if ph or pw:
        x = T.pad2d(x, (0, ph, 0, pw), "reflect" if min(h, w) > max(ph, pw) else "replicate")
    return T.crop(model.dehaze(x), h, w)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    if args.size % 2:
        raise CliError("contract", f"--size must be even, got {args.size}")
    ds = hazegen.make_toy_dataset(args.count, args.size, (args.beta_min, args.beta_max),
                                  (args.airlight_min, args.airlight_max), seed=args.seed,
                                  eval_count=args.count)
    ext = "." + args.format
    rows = []
    for i, (scene, hazy) in enumerate(zip(ds.scenes, ds.hazy)):
        name = f"scene_{i:04d}{ext}"
        imageio.write_image(out / "clean" / name, scene.clean)
        imageio.write_image(out / "hazy" / name, hazy)
        imageio.write_image(out / "depth" / name, np.clip(scene.depth.data / DEPTH_SCALE, 0, 1))
        rows.append(imageio.ManifestRow(f"clean/{name}", f"hazy/{name}", f"depth/{name}",
                                        scene.beta, float(scene.airlight)))
    (out / "manifest.txt").write_text(imageio.format_manifest(rows), encoding="utf-8")
    print(f"wrote {len(rows)} scenes to {out}")
    return 0


def cmd_train(args) -> int:
    data = Path(args.data)
    hazy, clean = _load_split(data, args.holdout)
    cfg = build_config(args, len(hazy))
    result = trainer.train(hazy, clean, cfg, log_every=args.log_every)
    ckpt = Path(args.out)
    trainer.save_checkpoint(ckpt, result.model, cfg)
    loss_csv = Path(args.loss_csv) if args.loss_csv else ckpt.with_suffix(".loss.csv")
    loss_csv.parent.mkdir(parents=True, exist_ok=True)
    loss_csv.write_text(trainer.history_to_csv(result.history), encoding="utf-8")
    if args.plot and result.history:
        from . import report
        report.plot_loss_curves(result.history, loss_csv.with_suffix(".png"), trainer.LOSS_COLUMNS)
    last = result.history[-1][-1] if result.history else float("nan")
    print(f"trained {cfg.steps} steps on {len(hazy)} hazy / {len(clean)} clean images; "
          f"final total loss {last:.5f}; checkpoint {ckpt}")
    return 0


def cmd_dehaze(args) -> int:
    model, _ = trainer.load_checkpoint(args.checkpoint)
    src, dst = Path(args.input), Path(args.output)
    if src.is_dir():
        jobs = [(p, dst / p.name) for p in _images_in(src).values()]
    else:
        jobs = [(src, dst)]
    for a, b in jobs:
        imageio.write_image(b, dehaze_image(model, _read(a)))
    print(f"dehazed {len(jobs)} image(s)")
    return 0


def _paired(pred_dir: Path, ref_dir: Path) -> list[tuple[str, Path, Path]]:
    pred, ref = _images_in(pred_dir), _images_in(ref_dir)
    missing = sorted(set(pred) ^ set(ref))
    if missing:
        raise CliError("contract", "unmatched files: " + ", ".join(
            f"{m} (only in {pred_dir if m in pred else ref_dir})" for m in missing))
    if not pred:
        raise CliError("contract", f"no images found in {pred_dir}")
    return [(k, pred[k], ref[k]) for k in sorted(pred)]


def cmd_eval(args) -> int:
    rows = []
    for name, p, r in _paired(Path(args.pred), Path(args.ref)):
        a, b = _read(p), _read(r)
        if a.shape != b.shape:
            raise CliError("contract", f"{name}: size {a.shape[2:]} vs {b.shape[2:]}")
        rows.append((name, metrics.evaluate(a, b)))
    table = metrics.format_table(rows)
    print(table)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(metrics.reports_to_csv(rows), encoding="utf-8")
        out.with_suffix(".txt").write_text(table + "\n", encoding="utf-8")
    return 0


def cmd_analyze(args) -> int:
    hazy, dehazed, clean = _read(args.hazy), _read(args.dehazed), _read(args.clean)
    if not (hazy.shape == dehazed.shape == clean.shape):
        raise CliError("contract", f"image sizes differ: {hazy.shape[2:]}, {dehazed.shape[2:]}, "
                                   f"{clean.shape[2:]}")
    rows = [("hazy", metrics.channel_diff(hazy, clean)),
            ("dehazed", metrics.channel_diff(dehazed, clean)),
            ("clean", metrics.channel_diff(clean, clean))]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "channel_diff.csv").write_text(metrics.channel_diff_csv(rows), encoding="utf-8")
    hists = {name: metrics.channel_histogram(img, args.bins)
             for name, img in (("hazy", hazy), ("dehazed", dehazed), ("clean", clean))}
    for name, h in hists.items():
        (out / f"histogram_{name}.csv").write_text(metrics.histogram_csv(h), encoding="utf-8")
    if args.plot:
        from . import report
        report.plot_histograms(hists, out / "histograms.png")
        report.plot_channel_diffs(rows[:2], out / "channel_diff.png")
    print(f"{'':<10}{'R':>8}{'G':>8}{'B':>8}")
    for name, d in rows:
        print(f"{name:<10}{d[0]:>8.2f}{d[1]:>8.2f}{d[2]:>8.2f}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dehazekit", description="Unpaired single-image dehazing toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a procedural hazy dataset with a manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=32)
    s.add_argument("--size", type=int, default=96)
    s.add_argument("--beta-min", type=float, default=0.3)
    s.add_argument("--beta-max", type=float, default=1.0)
    s.add_argument("--airlight-min", type=float, default=0.8)
    s.add_argument("--airlight-max", type=float, default=1.0)
    s.add_argument("--format", choices=("ppm", "png"), default="ppm")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train on the hazy/clean halves of a manifest")
    t.add_argument("--data", required=True, help="directory holding manifest.txt")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--loss-csv", help="default: <checkpoint>.loss.csv")
    t.add_argument("--holdout", type=int, default=0, help="leading manifest rows kept out of training")
    t.add_argument("--config", help="key=value file; command-line flags take precedence")
    t.add_argument("--seed", type=int)
    t.add_argument("--levels", type=int)
    t.add_argument("--channels", type=int)
    t.add_argument("--blocks", type=int)
    t.add_argument("--crop", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--steps", type=int)
    t.add_argument("--epochs", type=float, help="passes over the hazy half; overrides --steps")
    t.add_argument("--lambda-project", type=float)
    t.add_argument("--lambda-reflect", type=float)
    t.add_argument("--lambda-retinex", type=float)
    t.add_argument("--lambda-color", type=float)
    t.add_argument("--lambda-stats", type=float, help="clean-statistics weight inside the colour term")
    t.add_argument("--dwsc", dest="use_dwsc", action=argparse.BooleanOptionalAction, default=None,
                   help="--no-dwsc swaps the wavelet layers for plain depthwise convolutions")
    t.add_argument("--wavelet", choices=("haar", "db2"))
    t.add_argument("--subband-mode", choices=("broad", "ll-only"))
    t.add_argument("--log-every", type=int, default=50)
    t.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True,
                   help="render the loss curve PNG next to the CSV")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("dehaze", help="dehaze one image or every image in a directory")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--input", required=True)
    d.add_argument("--output", required=True)
    d.set_defaults(func=cmd_dehaze)

    e = sub.add_parser("eval", help="PSNR / SSIM / CIEDE2000 / channel diffs over matching files")
    e.add_argument("--pred", required=True)
    e.add_argument("--ref", required=True)
    e.add_argument("--out", help="CSV path; a .txt table is written alongside")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="per-channel differences and histograms for one scene")
    a.add_argument("--hazy", required=True)
    a.add_argument("--dehazed", required=True)
    a.add_argument("--clean", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--bins", type=int, default=32)
    a.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    a.set_defaults(func=cmd_analyze)
    return p


def _classify(exc: Exception) -> str:
    if isinstance(exc, CliError):
        return exc.kind
    if isinstance(exc, imageio.ManifestError):
        return "manifest"
    if isinstance(exc, imageio.ImageFormatError):
        return "format"
    if isinstance(exc, trainer.CheckpointError):
        return "checkpoint"
    if isinstance(exc, NumericFault):
        return "numeric"
    if isinstance(exc, ContractError):
        return "contract"
    return "io"


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (CliError, imageio.ManifestError, imageio.ImageFormatError, trainer.CheckpointError,
            NumericFault, ContractError, OSError) as exc:
        kind = _classify(exc)
        msg = " ".join(str(exc).split())
        print(f"dehazekit: error[{kind}]: {msg}", file=sys.stderr)
        return EXIT_CODES[kind]


if __name__ == "__main__":
    sys.exit(main())
