"""Command line: simulate -> build -> train -> sample -> enhance -> evaluate, plus grid."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import config as cfgmod
from .config import ConfigError, TrainConfig, apply_overrides, load_config, write_echo
from .data import (
    AugmentPlan,
    DatasetManifest,
    batch_to_images,
    build_dataset,
    list_pngs,
    load_dataset_images,
    load_scenes,
    read_png,
    write_png,
)
from .enhance import EnhanceConfig, enhance_pipeline
from .fieldsim import SceneGeometry, generate_scenes
from .metrics import EvalConfig, evaluate_sets
from .models import checkpoint as ckpt_io
from .models.nets import ConvVAE, UNetDenoiser
from .models.schedule import DiffusionSchedule
from .models.train import MODEL_KINDS, Trainer, ddpm_sample, default_weights, vae_sample, write_log_csv

logger = logging.getLogger("mfigen")


def _existing_dir(path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"input directory not found: {p}")
    return p


def _existing_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input file not found: {p}")
    return p


# ---------------------------------------------------------------------------
# model construction shared by train and sample
# ---------------------------------------------------------------------------

def build_model(cfg: TrainConfig, h: int, w: int):
    if cfg.model.startswith("ddpm"):
        return UNetDenoiser(tuple(cfg.channels), cfg.time_dim, cfg.groups, seed=cfg.seed)
    return ConvVAE((h, w), cfg.latent_dim, tuple(cfg.channels), seed=cfg.seed)


def schedule_of(cfg: TrainConfig) -> DiffusionSchedule:
    return DiffusionSchedule(cfg.T, cfg.beta_start, cfg.beta_end)


def resolved_weights(cfg: TrainConfig):
    a0, b0 = default_weights(cfg.model)
    return (a0 if cfg.alpha is None else cfg.alpha, b0 if cfg.beta is None else cfg.beta)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> None:
    cfg = apply_overrides(
        load_config(args.config, "simulate"),
        {"samples": args.samples, "pin_configs": args.pin_configs, "offsets": args.offsets, "seed": args.seed},
    )
    if cfg.height != cfg.width:
        raise ValueError("simulate produces square scans; height must equal width")
    geo = SceneGeometry(grid=cfg.height, pitch=cfg.pitch)
    scenes = generate_scenes(cfg.samples, cfg.pin_configs, cfg.offsets, cfg.seed, geo)
    build_dataset(scenes, None, args.out, cfg.seed, cfg.height, cfg.width, cfg.pitch, cfg.scan_height)
    write_echo(args.out, "simulate", cfg)
    print(f"simulated {len(scenes)} scenes into {args.out}")


def cmd_build(args) -> None:
    src = _existing_dir(args.input)
    cfg = apply_overrides(load_config(args.config, "build"), {"seed": args.seed})
    manifest = DatasetManifest.load(src)
    g = manifest.global_
    size = g["H"]
    shifts = cfg.shifts if cfg.shifts is not None else AugmentPlan.default(size).shifts
    plan = AugmentPlan(list(cfg.gaussian_sigmas), list(cfg.pink_amplitudes), list(cfg.rotations),
                       [tuple(s) for s in shifts])
    scenes = load_scenes(src)
    out = build_dataset(scenes, plan, args.out, cfg.seed, g["H"], g["W"], g["pitch"], g["scan_height"])
    write_echo(args.out, "build", cfg, {"input": str(args.input)})
    print(f"built {len(out.entries)} entries into {args.out}")


def cmd_train(args) -> None:
    data_dir = _existing_dir(args.data)
    cfg = apply_overrides(
        load_config(args.config, "train"),
        {"model": args.model, "steps": args.steps, "seed": args.seed, "alpha": args.alpha, "beta": args.beta,
         "lr": args.lr, "batch_size": args.batch_size, "T": args.T},
    )
    if cfg.model not in MODEL_KINDS:
        raise ConfigError(f"unknown model {cfg.model!r}; expected one of {MODEL_KINDS}")
    data = load_dataset_images(data_dir)
    h, w = data.shape[2:]
    alpha, beta = resolved_weights(cfg)
    model = build_model(cfg, h, w)
    logger.info("%s model with %d parameters", cfg.model, model.num_parameters())
    trainer = Trainer(cfg.model, model, data, steps=cfg.steps, batch_size=cfg.batch_size, lr=cfg.lr,
                      alpha=alpha, beta=beta, seed=cfg.seed, sched=schedule_of(cfg))
    model_config = dict(asdict(cfg), alpha=alpha, beta=beta, height=h, width=w)
    if args.resume:
        ck = ckpt_io.load(_existing_file(args.resume))
        if ck.kind != cfg.model:
            raise ValueError(f"checkpoint kind {ck.kind!r} does not match --model {cfg.model!r}")
        ckpt_io.restore_trainer(trainer, ck)
    trainer.run(cfg.log_every)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_io.save(out / "checkpoint.pimf", ckpt_io.from_trainer(trainer, model_config))
    write_log_csv(out / "train_log.csv", trainer.log)
    write_echo(out, "train", cfg, {"data": str(args.data), "resume": args.resume})
    last = trainer.log[-1] if trainer.log else {}
    print(f"trained {cfg.model} for {trainer.step} steps; final total {last.get('total', float('nan')):.5f}")


def load_model(path: Path):
    ck = ckpt_io.load(path)
    c = ck.config
    tcfg = cfgmod.from_dict(TrainConfig, {k: v for k, v in c.items() if k not in ("height", "width")})
    model = build_model(tcfg, c["height"], c["width"])
    model.load_arrays(ck.params)
    logger.info("loaded %s model with %d parameters", ck.kind, model.num_parameters())
    return ck, tcfg, model


def cmd_sample(args) -> None:
    path = _existing_file(args.checkpoint)
    cfg = apply_overrides(load_config(args.config, "sample"), {"n": args.n, "seed": args.seed})
    ck, tcfg, model = load_model(path)
    h, w = ck.config["height"], ck.config["width"]
    if ck.kind.startswith("ddpm"):
        x = ddpm_sample(model, schedule_of(tcfg), cfg.n, cfg.seed, h, w, chunk=cfg.chunk)
    else:
        x = vae_sample(model, cfg.n, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, px in enumerate(batch_to_images(x)):
        write_png(out / f"sample_{i:04d}.png", px)
    write_echo(out, "sample", cfg, {"checkpoint": str(args.checkpoint)})
    print(f"wrote {cfg.n} samples to {out}")


def cmd_enhance(args) -> None:
    src = _existing_dir(args.input)
    cfg = apply_overrides(
        load_config(args.config, "enhance"),
        {"saturation": args.saturation, "brightness": args.brightness, "contrast": args.contrast},
    )
    factors = EnhanceConfig(cfg.saturation, cfg.brightness, cfg.contrast)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = list_pngs(src)
    for p in paths:
        write_png(out / p.name, enhance_pipeline(read_png(p), factors))
    write_echo(out, "enhance", cfg, {"input": str(args.input)})
    print(f"enhanced {len(paths)} images into {out}")


def cmd_evaluate(args) -> None:
    ref, gen = _existing_dir(args.ref), _existing_dir(args.gen)
    cfg = apply_overrides(load_config(args.config, "evaluate"),
                          {"embedding": args.embedding, "windowed_ssim": args.windowed_ssim or None})
    report = evaluate_sets(ref, gen, EvalConfig(embedding=cfg.embedding, windowed_ssim=cfg.windowed_ssim))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    write_echo(out, "evaluate", cfg, {"ref": str(args.ref), "gen": str(args.gen)})
    print(report.table())


def contact_sheet(rows: List[List[np.ndarray]], pad: int = 2) -> np.ndarray:
    """Tile images row by row on a white background."""
    h, w = rows[0][0].shape[:2]
    ncols = max(len(r) for r in rows)
    sheet = np.full((len(rows) * (h + pad) + pad, ncols * (w + pad) + pad, 3), 255, dtype=np.uint8)
    for i, row in enumerate(rows):
        for j, im in enumerate(row):
            if im.shape[:2] != (h, w):
                raise ValueError("all grid images must share one resolution")
            y, x = pad + i * (h + pad), pad + j * (w + pad)
            sheet[y:y + h, x:x + w] = im
    return sheet


def cmd_grid(args) -> None:
    cfg = apply_overrides(load_config(args.config, "grid"), {"cols": args.cols})
    dirs = [_existing_dir(d) for d in args.input]
    if len(dirs) == 1:
        imgs = [read_png(p) for p in list_pngs(dirs[0])]
        rows = [imgs[i:i + cfg.cols] for i in range(0, len(imgs), cfg.cols)]
    else:
        rows = [[read_png(p) for p in list_pngs(d)[: cfg.cols]] for d in dirs]
    rows = [r for r in rows if r]
    if not rows:
        raise ValueError("no PNG images found for the grid")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_png(out / "grid.png", contact_sheet(rows, cfg.pad))
    write_echo(out, "grid", cfg, {"input": [str(d) for d in args.input]})
    print(f"wrote {out / 'grid.png'}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfigen", description="Physics-regularized MFI generation toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render Biot-Savart defect scenes into a dataset")
    s.add_argument("--samples", type=int)
    s.add_argument("--pin-configs", type=int)
    s.add_argument("--offsets", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("build", help="augment a simulated dataset")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("train", help="train a diffusion or VAE model")
    s.add_argument("--model", choices=MODEL_KINDS)
    s.add_argument("--data", required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--T", type=int)
    s.add_argument("--resume")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw images from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("enhance", help="saturation/brightness/contrast enhancement")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--saturation", type=float)
    s.add_argument("--brightness", type=float)
    s.add_argument("--contrast", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("evaluate", help="score generated images against references")
    s.add_argument("--ref", required=True)
    s.add_argument("--gen", required=True)
    s.add_argument("--embedding")
    s.add_argument("--windowed-ssim", action="store_true")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("grid", help="tile PNG directories into a contact sheet")
    s.add_argument("--in", dest="input", nargs="+", required=True)
    s.add_argument("--cols", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_grid)

    for sp in sub.choices.values():
        sp.add_argument("--config", help="JSON file with command parameters")
        # SUPPRESS keeps a top-level -v from being reset by the subcommand default
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
    return p


def run(argv: Optional[List[str]] = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"mfigen {args.command}: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 1
        logger.debug("command failed", exc_info=True)
        print(f"mfigen {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())
