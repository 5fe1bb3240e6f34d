"""Command-line entry point.

Commands: ``pretrain``, ``finetune``, ``edit``, ``bench``, ``sweep``.
Global flags: ``--config PATH``, ``--seed N``, ``--out DIR``,
``--set key=value`` (repeatable). Exit codes: 0 success, 2 configuration
or input error, 3 runtime/numeric error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import datagen, fileio, guidance
from .config import RunConfig, apply_override, load_config, write_resolved
from .denoiser import epsilon_mse, init_model, load_checkpoint, pretrain, save_checkpoint
from .errors import ConfigError, FormatError, ToydiffError
from .finetune import (EditConfig, config_from_preset, edit_image,
                       finetune_multistep_baseline, finetune_single_step,
                       resolve_preset)
from .rng import Rng
from .sampler import reconstruction_sweep, write_sweep_csv
from .schedule import make_linear_schedule
from .fileio import read_pgm, write_pgm

log = logging.getLogger("toydiff")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

# Seed substream assignment (documented so runs are replayable):
# 0 dataset, 1 model init, 2 pretraining, 3 fine-tuning, 4 editing, 5 bench.
S_DATA, S_INIT, S_TRAIN, S_FINETUNE, S_EDIT, S_BENCH = range(6)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="toydiff",
        description="Diffusion-based attribute editing on toy images, "
                    "with instrumented cost accounting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("pretrain", "train the noise predictor from scratch"),
        ("finetune", "adapt a pretrained model to an attribute edit"),
        ("edit", "apply a (fine-tuned) checkpoint to PGM images"),
        ("bench", "run the inference/training cost benchmarks"),
        ("sweep", "run the encoder round-trip fidelity sweep"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override global seed")
        p.add_argument("--out", type=str, default=None, help="override output directory")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key")
        if name != "pretrain":
            p.add_argument("--checkpoint", type=str, default=None,
                           help="pretrained checkpoint (overrides config)")
        if name == "edit":
            p.add_argument("inputs", nargs="+", help="input P5 PGM files")
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, raw = item.partition("=")
        apply_override(cfg, key, raw)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    ckpt = getattr(args, "checkpoint", None)
    if ckpt is not None:
        cfg.checkpoint = ckpt
    return cfg


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out / "resolved_config.json")
    return out


def _load_model(cfg: RunConfig):
    if not cfg.checkpoint:
        raise ConfigError("this command needs a pretrained checkpoint "
                          "(--checkpoint or config key 'checkpoint')")
    if not Path(cfg.checkpoint).exists():
        raise ConfigError(f"checkpoint not found: {cfg.checkpoint}")
    return load_checkpoint(cfg.checkpoint).model


def _dataset(cfg: RunConfig, rng: Rng):
    return datagen.generate_dataset(cfg.dataset.count, cfg.dataset.side, rng)


def _edit_setup(cfg: RunConfig, model):
    """Embedder with registered labels plus the resolved EditConfig."""
    preset = resolve_preset(cfg.edit.preset)
    embedder = guidance.make_embedder(model.image_dim, cfg.embedder.dim,
                                      cfg.embedder.seed)
    data = _dataset(cfg, Rng(cfg.seed).spawn(S_DATA))
    y_ref, y_tar = datagen.attribute_direction(preset.attribute, preset.polarity,
                                               data, embedder)
    overrides = {}
    for name in ("variant", "t0", "tau_enc", "tau_dec", "lam", "lr", "n_iter"):
        value = getattr(cfg.edit, name)
        if value is not None:
            overrides[name] = value
    if cfg.edit.resample_latents:
        overrides["resample_latents"] = True
    edit_cfg = config_from_preset(preset, model.schedule.timesteps, y_ref, y_tar,
                                  seed=cfg.seed, **overrides)
    return embedder, data, edit_cfg, preset


def cmd_pretrain(cfg: RunConfig) -> int:
    out = _prepare_out(cfg)
    rng = Rng(cfg.seed)
    sched = make_linear_schedule(cfg.schedule.timesteps, cfg.schedule.beta_start,
                                 cfg.schedule.beta_end)
    data = _dataset(cfg, rng.spawn(S_DATA))
    model = init_model(data.side * data.side, sched, rng.spawn(S_INIT),
                       cfg.model.hidden_width, cfg.model.time_embed_dim)
    model = pretrain(model, data, cfg.pretrain.steps, cfg.pretrain.lr,
                     cfg.pretrain.batch, rng.spawn(S_TRAIN))
    final = epsilon_mse(model, data, rng.spawn(S_TRAIN + 100))
    path = out / "checkpoint.ckpt"
    save_checkpoint(path, model, meta={"steps": cfg.pretrain.steps,
                                       "seed": cfg.seed, "final_loss": final})
    print(f"checkpoint written to {path} (eval mse {final:.5f})")
    return EXIT_OK


def cmd_finetune(cfg: RunConfig) -> int:
    out = _prepare_out(cfg)
    model = _load_model(cfg)
    embedder, data, edit_cfg, preset = _edit_setup(cfg, model)
    images = data.images[: 8]
    fn = finetune_single_step if edit_cfg.variant == "single_step" \
        else finetune_multistep_baseline
    tuned, report = fn(model, images, edit_cfg, embedder,
                       Rng(cfg.seed).spawn(S_FINETUNE))
    save_checkpoint(out / "finetuned.ckpt", tuned,
                    meta={"preset": cfg.edit.preset, "seed": cfg.seed})
    report.to_csv(out / "finetune_report.csv")
    print(f"variant={edit_cfg.variant} iterations={edit_cfg.n_iter} "
          f"images={len(images)} loss_bearing_nfe={report.recorded_evals} "
          f"nfe_per_iteration={report.per_iteration_nfe} "
          f"peak_retained_elems={report.peak_retained}")
    return EXIT_OK


def cmd_edit(cfg: RunConfig, inputs) -> int:
    out = _prepare_out(cfg)
    model = _load_model(cfg)
    embedder, data, edit_cfg, preset = _edit_setup(cfg, model)
    side = cfg.dataset.side
    rng = Rng(cfg.seed).spawn(S_EDIT)
    for k, name in enumerate(inputs):
        img = read_pgm(name)
        if img.shape != (side, side):
            raise ConfigError(f"{name}: expected {side}x{side}, got "
                              f"{img.shape[1]}x{img.shape[0]}")
        x0 = img.ravel()
        edited = edit_image(model, x0, edit_cfg, model.schedule, rng.spawn(k)).data
        dest = out / (Path(name).stem + ".edited.pgm")
        write_pgm(dest, edited.reshape(side, side))
        for attr in ("brightness", "size"):
            before = datagen.attribute_measure(attr, x0)
            after = datagen.attribute_measure(attr, edited)
            print(f"{name}: {attr} {before:.4f} -> {after:.4f}")
        print(f"{name}: wrote {dest}")
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    out = _prepare_out(cfg)
    model = _load_model(cfg)
    embedder, data, edit_cfg, preset = _edit_setup(cfg, model)
    b = cfg.bench
    images = data.images[: b.images]
    rng = Rng(cfg.seed).spawn(S_BENCH)

    cfg_ours = dataclasses.replace(edit_cfg, t0=b.t0, tau_dec=b.tau_dec,
                                   variant="single_step", n_iter=b.iters)
    cfg_base = dataclasses.replace(cfg_ours, variant="baseline",
                                   tau_enc=b.tau_enc)
    ours, baseline = bench_mod.bench_inference(model, images, cfg_ours, cfg_base,
                                               runs=b.runs, rng=rng.spawn(0))
    ratio = baseline.nfe / ours.nfe
    print(f"inference NFE: baseline={baseline.nfe} ours={ours.nfe} "
          f"ratio={ratio:.2f}")
    reports = [ours, baseline]

    cfgs_baseline = [
        dataclasses.replace(cfg_base, tau_dec=td) for td in b.tau_dec_list
    ]
    training = bench_mod.bench_training(model, images, embedder, cfg_ours,
                                        cfgs_baseline, runs=max(2, b.runs // 2),
                                        rng=rng.spawn(1))
    reports.extend(training)
    bench_mod.write_report(reports, out / "bench.csv")
    bench_mod.write_report_json(reports, out / "bench.json",
                                config={"seed": cfg.seed})
    print(f"reports written to {out / 'bench.csv'}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    out = _prepare_out(cfg)
    model = _load_model(cfg)
    s = cfg.sweep
    rng = Rng(cfg.seed)
    heldout = datagen.generate_dataset(s.images, cfg.dataset.side,
                                       rng.spawn(S_DATA + 50))
    t0_list = [int(round(f * model.schedule.timesteps)) for f in s.t0_fracs]
    rows = reconstruction_sweep(heldout.images, t0_list, model, model.schedule,
                                rng.spawn(S_BENCH), s.tau_enc, s.tau_dec, s.seeds)
    write_sweep_csv(rows, out / "sweep.csv")
    for r in rows:
        print(f"t0={r.t0} encoder={r.encoder} rel_l2={r.rel_l2:.4f} "
              f"corr={r.correlation:.4f}")
    print(f"sweep written to {out / 'sweep.csv'}")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.command == "pretrain":
            return cmd_pretrain(cfg)
        if args.command == "finetune":
            return cmd_finetune(cfg)
        if args.command == "edit":
            return cmd_edit(cfg, args.inputs)
        if args.command == "bench":
            return cmd_bench(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ToydiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())
