"""Command-line entry point.

Settings come from three layers, later ones winning: built-in defaults, an
optional flat ``key = value`` file given with ``--config``, and explicit
flags. Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .data import SYNTHETIC_KINDS, SeriesDataset, load_csv, normalize, synthetic, window_starts, gather_windows
from .data import SPLIT_PRESETS, ratio_sizes
from .errors import ConfigurationError, TimeFormerError
from .model import VARIANTS, ModelConfig, load_checkpoint, save_checkpoint
from .reports import Report
from .train_eval import (
    GAMMA_GRID, TrainConfig, benchmark_attention, evaluate, run_ablation, run_experiment, sweep_gamma,
    sweep_scales,
)

logger = logging.getLogger("timeformer")

COMMANDS = ("train", "eval", "ablate", "sweep-gamma", "sweep-scales", "bench", "export-attention", "synth")


def _int_list(text: str) -> list[int]:
    return [int(t) for t in str(text).replace(";", ",").split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in str(text).replace(";", ",").split(",") if t.strip()]


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


# name -> (type, default, help); every entry is both a --flag and a config-file key
OPTIONS = {
    "data": (str, None, "CSV file (header row, optional leading timestamp column)"),
    "synthetic": (str, None, f"synthetic series kind: {', '.join(SYNTHETIC_KINDS)}"),
    "length": (int, 2000, "synthetic series length"),
    "channels": (int, 3, "synthetic channel count"),
    "data_seed": (int, 0, "seed of the synthetic generator"),
    "noise": (float, None, "synthetic noise scale (kind-specific default)"),
    "preset": (str, None, f"split preset: {', '.join(sorted(SPLIT_PRESETS))}"),
    "lookback": (int, 96, "look-back window L_h"),
    "horizon": (_int_list, [96], "forecast horizon(s) L_f, comma separated"),
    "scales": (int, 1, "number of scales S"),
    "gamma": (float, 0.1, "decay rate of the attention modulation"),
    "variant": (str, "full", f"model variant: {', '.join(VARIANTS)}"),
    "d_model": (int, 64, "model width"),
    "heads": (int, 4, "attention heads"),
    "ffn_hidden": (int, 128, "hidden width of the feed-forward nets"),
    "conv_kernel": (int, 3, "embedding convolution kernel (odd)"),
    "depth": (int, 1, "attention blocks per stage"),
    "activation": (str, "relu", "feed-forward activation: relu or gelu"),
    "mask_padding": (_bool, False, "exclude zero padding from intra-patch attention keys"),
    "renormalize_rows": (_bool, False, "renormalize attention rows after masking"),
    "epochs": (int, 100, "training epochs"),
    "batch_size": (int, 32, "training batch size (windows)"),
    "lr": (float, 0.005, "Adam learning rate"),
    "seed": (int, 0, "base seed; repeat i uses seed + i"),
    "repeats": (int, 5, "independent training repeats"),
    "early_stop": (int, None, "early-stopping patience in epochs (off by default)"),
    "lr_plateau": (int, None, "halve lr after this many epochs without validation gain"),
    "max_batches": (int, None, "cap on training batches per epoch"),
    "denormalized": (_bool, False, "also report raw-scale errors"),
    "out": (str, "runs", "output directory"),
    "gammas": (_float_list, list(GAMMA_GRID), "gamma grid for sweep-gamma"),
    "scale_values": (_int_list, [1, 2, 3, 4], "S grid for sweep-scales"),
    "d": (int, 64, "head dimension for bench"),
    "t_values": (_int_list, [16, 64, 256, 1024], "token counts for bench"),
    "batch": (int, 8, "sequences per timed forward in bench"),
    "bench_repeats": (int, 10, "timing repeats per point in bench"),
    "checkpoint": (str, None, "model checkpoint file"),
    "split": (str, "test", "split used by eval / export-attention"),
    "window": (int, 0, "window index within the split for export-attention"),
    "channel": (int, 0, "channel for export-attention"),
    "stage": (str, "intra", "intra or inter for export-attention"),
    "scale": (int, 1, "scale (1-based) for export-attention"),
    "head": (int, 0, "attention head for export-attention"),
    "layer": (int, 0, "block index within the stage for export-attention"),
    "patch": (int, -1, "patch index for intra-stage export (default: last)"),
    "output": (str, None, "output CSV path for synth"),
}

_BOOL_FLAGS = {"mask_padding", "renormalize_rows", "denormalized"}


class UsageError(Exception):
    pass


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = OPTIONS[key][0](value)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timeformer", description="TimeFormer / MoSA forecasting toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key = value settings file")
        p.add_argument("-v", "--verbose", action="store_true")
        for key, (typ, default, help_) in OPTIONS.items():
            flag = "--" + key.replace("_", "-")
            if key in _BOOL_FLAGS:
                p.add_argument(flag, dest=key, action="store_const", const=True, default=None, help=help_)
            else:
                p.add_argument(flag, dest=key, type=typ, default=None, help=f"{help_} (default: {default})")
    return parser


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    settings = {k: v[1] for k, v in OPTIONS.items()}
    if args.config:
        settings.update(parse_config_file(args.config))
    for key in OPTIONS:
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    return argparse.Namespace(command=args.command, verbose=args.verbose, **settings)


def load_dataset_from(opts) -> SeriesDataset:
    if bool(opts.data) == bool(opts.synthetic):
        raise UsageError("give exactly one of --data PATH or --synthetic KIND")
    if opts.data:
        ds = load_csv(opts.data)
    else:
        ds = synthetic(opts.synthetic, opts.length, opts.channels, seed=opts.data_seed, noise=opts.noise)
    if opts.preset:
        key = opts.preset.lower()
        if key not in SPLIT_PRESETS:
            raise ConfigurationError(f"unknown preset {opts.preset!r}; known: {', '.join(sorted(SPLIT_PRESETS))}")
        sizes = SPLIT_PRESETS[key]
    else:
        sizes = ratio_sizes(ds.length)
    ds = dataclasses.replace(ds, split_sizes=tuple(sizes))
    return normalize(ds)


def model_config_from(opts, horizon: Optional[int] = None) -> ModelConfig:
    return ModelConfig(
        lookback=opts.lookback, horizon=horizon or opts.horizon[0], num_scales=opts.scales, d_model=opts.d_model,
        num_heads=opts.heads, gamma=opts.gamma, conv_kernel=opts.conv_kernel, ffn_hidden=opts.ffn_hidden,
        variant=opts.variant, depth=opts.depth, activation=opts.activation, mask_padding=opts.mask_padding,
        renormalize_rows=opts.renormalize_rows,
    )


def train_config_from(opts) -> TrainConfig:
    return TrainConfig(epochs=opts.epochs, batch_size=opts.batch_size, lr=opts.lr, seed=opts.seed,
                       early_stop_patience=opts.early_stop, repeats=opts.repeats,
                       lr_plateau_patience=opts.lr_plateau, max_batches_per_epoch=opts.max_batches)


def _announce(report: Report, paths: dict) -> None:
    sys.stdout.write(report.to_text())
    sys.stdout.write(f"wrote {paths['csv']}\n")


def cmd_train(opts) -> int:
    ds = load_dataset_from(opts)
    report, models = run_experiment(ds, model_config_from(opts), train_config_from(opts), opts.horizon,
                                    denormalized=opts.denormalized, keep_models=True)
    out = Path(opts.out)
    out.mkdir(parents=True, exist_ok=True)
    for (h, seed), model in models.items():
        save_checkpoint(out / f"model_h{h}_s{seed}.tfm", model, ds.norm_mean, ds.norm_std)
    rep = report.to_report("train")
    rep.meta["split_sizes"] = list(ds.split_sizes)
    _announce(rep, rep.write(out, "train"))
    return 0


def cmd_eval(opts) -> int:
    if not opts.checkpoint:
        raise UsageError("eval needs --checkpoint")
    model, _, _, header = load_checkpoint(opts.checkpoint)
    ds = load_dataset_from(opts)
    scores = evaluate(model, ds, opts.split, denormalized=opts.denormalized)
    row = {"horizon": model.config.horizon, **scores}
    rep = Report("eval", [row], {"checkpoint": str(opts.checkpoint), "model": header["config"],
                                 "seeds": [header.get("seed", 0)], "dataset": ds.source, "split": opts.split})
    _announce(rep, rep.write(opts.out, "eval"))
    return 0


def cmd_ablate(opts) -> int:
    ds = load_dataset_from(opts)
    rep = run_ablation(ds, model_config_from(opts), train_config_from(opts), opts.horizon)
    _announce(rep, rep.write(opts.out, "ablation"))
    return 0


def cmd_sweep_gamma(opts) -> int:
    ds = load_dataset_from(opts)
    rep = sweep_gamma(ds, model_config_from(opts), train_config_from(opts), opts.gammas)
    _announce(rep, rep.write(opts.out, "sweep_gamma"))
    return 0


def cmd_sweep_scales(opts) -> int:
    ds = load_dataset_from(opts)
    rep = sweep_scales(ds, model_config_from(opts), train_config_from(opts), opts.scale_values)
    _announce(rep, rep.write(opts.out, "sweep_scales"))
    return 0


def cmd_bench(opts) -> int:
    rep = benchmark_attention(opts.t_values, d=opts.d, batch=opts.batch, repeats=opts.bench_repeats,
                              gamma=opts.gamma, seed=opts.seed)
    _announce(rep, rep.write(opts.out, "bench"))
    return 0


def export_attention_matrix(model, ds: SeriesDataset, split: str = "test", window: int = 0, channel: int = 0,
                            stage: str = "intra", scale: int = 1, head: int = 0, layer: int = 0,
                            patch: int = -1) -> np.ndarray:
    """Run one window through ``model`` and return one head's ``[T, T]`` attention matrix."""
    cfg = model.config
    starts = window_starts(ds.split_range(split), cfg.lookback, cfg.horizon)
    if not 0 <= window < len(starts):
        raise ConfigurationError(f"window {window} out of range (split {split} has {len(starts)} windows)")
    n = ds.n_channels
    if not 0 <= channel < n:
        raise ConfigurationError(f"channel {channel} out of range (dataset has {n})")
    x, _ = gather_windows(ds.model_values, starts[window:window + 1], cfg.lookback, cfg.horizon)
    model.forecast(x)
    if hasattr(model, "branches"):
        if not 1 <= scale <= len(model.branches):
            raise ConfigurationError(f"scale {scale} out of range 1..{len(model.branches)}")
        branch = model.branches[scale - 1]
        blocks = branch.attention_blocks(stage)
    else:
        if scale != 1:
            raise ConfigurationError("vanilla transformer models have a single scale")
        branch, blocks = None, model.attention_blocks(stage)
    if not 0 <= layer < len(blocks):
        raise ConfigurationError(f"layer {layer} out of range 0..{len(blocks) - 1}")
    block = blocks[layer]
    if not 0 <= head < block.config.num_heads:
        raise ConfigurationError(f"head {head} out of range 0..{block.config.num_heads - 1}")
    attn = block.last_attention  # [rows, H, T, T]
    if branch is not None and branch.segmented and stage == "intra":
        per_channel = attn.shape[0] // n
        p = patch if patch >= 0 else per_channel + patch
        if not 0 <= p < per_channel:
            raise ConfigurationError(f"patch {patch} out of range (0..{per_channel - 1})")
        row = channel * per_channel + p
    else:
        row = channel
    matrix = np.array(attn[row, head])
    if block.config.causal and np.any(np.triu(matrix, k=1) != 0.0):
        raise ConfigurationError("causal attention matrix has non-zero entries above the diagonal")
    return matrix


def write_matrix_csv(path, matrix: np.ndarray) -> None:
    lines = [",".join(repr(float(v)) for v in row) for row in matrix]
    Path(path).write_text("\n".join(lines) + "\n")


def write_pgm(path, matrix: np.ndarray, comment: str = "") -> None:
    """Plain (P2) graymap; pixel = round(255 * value / max value)."""
    top = float(matrix.max()) if matrix.size else 0.0
    pixels = np.zeros(matrix.shape, dtype=int) if top <= 0 else np.rint(255.0 * matrix / top).astype(int)
    rows, cols = matrix.shape
    out = ["P2"]
    if comment:
        out.append(f"# {comment}")
    out += [f"{cols} {rows}", "255"]
    out += [" ".join(str(v) for v in row) for row in pixels]
    Path(path).write_text("\n".join(out) + "\n")


def cmd_export_attention(opts) -> int:
    if not opts.checkpoint:
        raise UsageError("export-attention needs --checkpoint")
    if opts.stage not in ("intra", "inter"):
        raise UsageError("--stage must be intra or inter")
    model, _, _, _ = load_checkpoint(opts.checkpoint)
    ds = load_dataset_from(opts)
    matrix = export_attention_matrix(model, ds, opts.split, opts.window, opts.channel, opts.stage, opts.scale,
                                     opts.head, opts.layer, opts.patch)
    out = Path(opts.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"attention_{opts.stage}_s{opts.scale}_h{opts.head}"
    write_matrix_csv(out / f"{stem}.csv", matrix)
    write_pgm(out / f"{stem}.pgm", matrix, comment=f"{opts.stage} scale={opts.scale} head={opts.head}")
    sys.stdout.write(f"wrote {out / stem}.csv and {out / stem}.pgm ({matrix.shape[0]}x{matrix.shape[1]})\n")
    return 0


def cmd_synth(opts) -> int:
    if not opts.synthetic:
        raise UsageError("synth needs --synthetic KIND")
    ds = synthetic(opts.synthetic, opts.length, opts.channels, seed=opts.data_seed, noise=opts.noise)
    target = Path(opts.output) if opts.output else Path(opts.out) / f"{opts.synthetic}.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(ds.column_names)] + [",".join(repr(float(v)) for v in row) for row in ds.values]
    target.write_text("\n".join(lines) + "\n")
    sys.stdout.write(f"wrote {target} ({ds.length} rows, {ds.n_channels} channels)\n")
    return 0


HANDLERS = {
    "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "sweep-gamma": cmd_sweep_gamma,
    "sweep-scales": cmd_sweep_scales, "bench": cmd_bench, "export-attention": cmd_export_attention,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve(args)
        return HANDLERS[opts.command](opts)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"timeformer: error: {exc}\n")
        return 2
    except (TimeFormerError, OSError) as exc:
        sys.stderr.write(f"timeformer: error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
