"""Command-line workflows wiring the library into reproducible runs.

Subcommands: prepare-data, train, eval, sr, count-params, grad-check.
Every value can come from an explicit flag, a key=value config file
(``--config``), or the built-in default, in that order of precedence.
Commands that produce an output directory echo their fully resolved
configuration there as ``config.txt``; feeding that file back through
``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .checkpoint import CheckpointError, load_checkpoint
from .data import load_image, load_index, prepare_dataset, save_image
from .metrics import (bicubic_upscaler, evaluate_upscaler, network_upscaler,
                      write_report_csv)
from .model import (ModelConfig, Variant, audit_shapes, build_network,
                    count_params, forward, param_breakdown)
from .autograd import Tensor
from .train import TrainingDiverged, TrainSchedule, train

__all__ = ["main"]

_VARIANTS = [v.value for v in Variant]

# defaults double as the type table for config-file coercion
_MODEL_DEFAULTS = {
    "variant": "dbdn",
    "scale": 2,
    "blocks": 16,
    "layers": 8,
    "nr": 64,
    "ng": 0,          # 0 means "same as nr"
}
_WO_COMP_DEFAULTS = {"blocks": 1, "layers": 128, "ng": 16}

_DEFAULTS = {
    "prepare-data": {
        "hr_dir": "", "out": "", "scales": "2,3,4",
    },
    "train": {
        **_MODEL_DEFAULTS,
        "data": "", "out": "", "seed": 0, "steps": 1_000_000, "batch": 16,
        "lr": 1e-4, "halve_every": 200_000, "patch": 96,
        "checkpoint_every": 1000, "log_every": 1, "resume": "",
        "deterministic": False,
    },
    "eval": {
        "data": "", "out": "", "checkpoint": "", "baseline": "", "scale": 0,
        "save_images": False, "workers": 1,
    },
    "sr": {
        "checkpoint": "", "input": "", "output": "",
    },
    "count-params": {**_MODEL_DEFAULTS},
    "grad-check": {"op": "", "seed": 0},
}


class UsageError(ValueError):
    """Invalid flag/config combinations; exits with status 2."""


def _coerce(raw: str, template) -> object:
    if isinstance(template, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise UsageError(f"expected a boolean, got {raw!r}")
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    return raw


def _read_config_file(path: Path, defaults: dict) -> dict:
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("command="):
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key = key.strip()
        if key not in defaults:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(raw.strip(), defaults[key])
    return values


def _resolve(args: argparse.Namespace, command: str) -> dict:
    """Merge defaults < config file < explicit flags."""
    cfg = dict(_DEFAULTS[command])
    if command in ("train", "count-params") and getattr(args, "variant", None) == "wo-comp":
        cfg.update(_WO_COMP_DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        cfg.update(_read_config_file(Path(config_path), cfg))
    for key in cfg:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            cfg[key] = flag_value
    return cfg


def _echo_config(cfg: dict, command: str, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"command={command}"]
    lines += [f"{k}={cfg[k]}" for k in sorted(cfg)]
    (out_dir / "config.txt").write_text("\n".join(lines) + "\n")


def _model_config(cfg: dict) -> ModelConfig:
    ng = cfg["ng"] or cfg["nr"]
    return ModelConfig(variant=Variant(cfg["variant"]), blocks=cfg["blocks"],
                       layers=cfg["layers"], n_r=cfg["nr"], n_g=ng,
                       scale=cfg["scale"])


# ---------------------------------------------------------------------------
# Commands


def cmd_prepare_data(args) -> int:
    cfg = _resolve(args, "prepare-data")
    if not cfg["hr_dir"] or not cfg["out"]:
        raise UsageError("prepare-data needs --hr-dir and --out")
    scales = [int(s) for s in str(cfg["scales"]).replace(",", " ").split()]
    out = Path(cfg["out"])
    index = prepare_dataset(cfg["hr_dir"], scales, out)
    _echo_config(cfg, "prepare-data", out)
    print(f"prepared {len(index)} images at scales {scales} -> {out}")
    for rel, reason in index.skipped:
        print(f"  skipped {rel}: {reason}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args, "train")
    if not cfg["data"] or not cfg["out"]:
        raise UsageError("train needs --data and --out")
    index = load_index(cfg["data"])
    model_cfg = _model_config(cfg)
    sched = TrainSchedule(lr0=cfg["lr"], halve_every=cfg["halve_every"],
                          total_steps=cfg["steps"], batch=cfg["batch"],
                          hr_patch=cfg["patch"])
    out = Path(cfg["out"])
    _echo_config(cfg, "train", out)
    try:
        result = train(model_cfg, index, sched, cfg["seed"], out,
                       checkpoint_every=cfg["checkpoint_every"],
                       log_every=cfg["log_every"],
                       resume=cfg["resume"] or None,
                       deterministic=cfg["deterministic"])
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    last = result.checkpoints[-1]
    if result.final_loss is None:
        print(f"no steps run; initial checkpoint at {last}")
    else:
        print(f"ran {result.steps_run} steps, final loss {result.final_loss:.6g}, "
              f"checkpoint {last}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args, "eval")
    if not cfg["data"] or not cfg["out"]:
        raise UsageError("eval needs --data and --out")
    if bool(cfg["checkpoint"]) == bool(cfg["baseline"]):
        raise UsageError("eval needs exactly one of --checkpoint or --baseline")
    index = load_index(cfg["data"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    image_dir = out / "images" if cfg["save_images"] else None
    if cfg["baseline"]:
        if cfg["baseline"] != "bicubic":
            raise UsageError(f"unknown baseline {cfg['baseline']!r}")
        if not cfg["scale"]:
            raise UsageError("--baseline bicubic needs --scale")
        scale = cfg["scale"]
        upscale = bicubic_upscaler(scale)
        label = "bicubic"
    else:
        net = load_checkpoint(cfg["checkpoint"])
        if cfg["scale"] and cfg["scale"] != net.config.scale:
            print(f"error: checkpoint is x{net.config.scale} but --scale "
                  f"{cfg['scale']} was requested", file=sys.stderr)
            return 1
        scale = net.config.scale
        upscale = network_upscaler(net)
        label = Path(cfg["checkpoint"]).name
    report = evaluate_upscaler(upscale, index, scale, image_dir=image_dir)
    _echo_config(cfg, "eval", out)
    csv_path = write_report_csv(report, out / "eval.csv")
    print(f"{label} {report.summary()}")
    for name, reason in report.skipped:
        print(f"  skipped {name}: {reason}")
    print(f"report: {csv_path}")
    return 0


def cmd_sr(args) -> int:
    cfg = _resolve(args, "sr")
    if not cfg["checkpoint"] or not cfg["input"] or not cfg["output"]:
        raise UsageError("sr needs --checkpoint, --input and --output")
    net = load_checkpoint(cfg["checkpoint"])
    img = load_image(cfg["input"])
    x = Tensor(np.ascontiguousarray(img.transpose(2, 0, 1))[None])
    y = forward(net, x)
    sr = np.clip(y.data[0].transpose(1, 2, 0), 0.0, 1.0)
    save_image(cfg["output"], sr)
    print(f"wrote {sr.shape[1]}x{sr.shape[0]} image to {cfg['output']}")
    return 0


def cmd_count_params(args) -> int:
    cfg = _resolve(args, "count-params")
    net = build_network(_model_config(cfg), rng_seed=0)
    audit_shapes(net)
    total = count_params(net)
    width = max(len(name) for name, _ in param_breakdown(net))
    for name, n in param_breakdown(net):
        print(f"{name:<{width}}  {n:>12,}")
    print(f"{'total':<{width}}  {total:>12,}")
    return 0


def cmd_grad_check(args) -> int:
    cfg = _resolve(args, "grad-check")
    op = cfg["op"] or None
    results = gradcheck.run_suite(op=op, seed=cfg["seed"])
    failed = False
    for name, err in results.items():
        ok = err < gradcheck.THRESHOLD
        failed |= not ok
        print(f"{name:<18} max relative error {err:.3e}  "
              f"{'ok' if ok else 'FAIL'}")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# Parser


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", choices=_VARIANTS, default=None)
    p.add_argument("--scale", type=int, choices=(2, 3, 4), default=None)
    p.add_argument("--blocks", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--nr", type=int, default=None)
    p.add_argument("--ng", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bidense",
        description="Bi-dense convolutional single-image super-resolution engine.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="crop HR images and cache bicubic LR versions")
    p.add_argument("--hr-dir", dest="hr_dir", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--scales", default=None, help="comma-separated, e.g. 2,3,4")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    _add_model_flags(p)
    p.add_argument("--data", default=None, help="prepared dataset directory")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--halve-every", dest="halve_every", type=int, default=None)
    p.add_argument("--patch", type=int, default=None, help="HR patch size")
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int, default=None)
    p.add_argument("--log-every", dest="log_every", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--deterministic", action="store_true", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or the bicubic baseline")
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--baseline", default=None, help="'bicubic'")
    p.add_argument("--scale", type=int, choices=(2, 3, 4), default=None)
    p.add_argument("--save-images", dest="save_images", action="store_true", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sr", help="super-resolve one image with a checkpoint")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--input", default=None)
    p.add_argument("--output", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("count-params", help="print the parameter breakdown of a config")
    _add_model_flags(p)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("grad-check", help="finite-difference check of every op")
    p.add_argument("--op", choices=gradcheck.OP_NAMES, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
