"""Command-line front end: dataset generation, training, evaluation, cost
accounting, and attention-map export.

Settings resolve in three layers: built-in defaults, then a key=value
config file, then explicit flags. Every run echoes its effective settings
to <out>/config.resolved, which is itself a valid config file, so a run
can be reproduced with --config alone. Exit codes: 0 success, 2 config
error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .baseline import (
    baseline_cost,
    build_baseline,
    evaluate_baseline,
    load_baseline,
    save_baseline,
    train_baseline,
)
from .cost import count_cost
from .data import (
    DatasetError,
    SyntheticSpec,
    export_dataset,
    generate,
    load_dataset,
    read_pgm,
    split,
    write_pgm,
)
from .model import build_model, load_model, model_forward, save_model
from .selector import write_topk_csv
from .tensor import NumericError, Tensor, tensor_to_csv
from .train import TrainConfig, evaluate, train


class ConfigError(ValueError):
    """Bad config file key/value or inconsistent settings."""


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


# key -> (type, default, help); key spelling uses dashes, as on the CLI
_OPTIONS: dict[str, tuple] = {
    "synthetic": (bool, False, "use the in-memory synthetic dataset"),
    "dataset": (str, "", "dataset directory containing manifest.csv"),
    "model": (str, "sparse", "model family: sparse or baseline"),
    "seed": (int, None, "RNG seed (fallback: SPARSEATTN_SEED, then 0)"),
    "epochs": (int, 20, "training epochs"),
    "batch": (int, 32, "batch size"),
    "lr": (float, 1e-3, "learning rate"),
    "wd": (float, 1e-4, "decoupled weight decay"),
    "gamma": (float, 2.0, "focal focusing parameter"),
    "lambda-contrast": (float, 0.1, "contrastive loss weight"),
    "lambda-distill": (float, 0.02, "distillation loss weight"),
    "tau": (float, 0.07, "contrastive temperature"),
    "emphasis": (float, 2.0, "distillation target sharpening exponent"),
    "k-init": (int, 8000, "initial pixel budget"),
    "k-min": (int, 1500, "minimum pixel budget"),
    "k-max": (int, 0, "maximum pixel budget (0 = full image)"),
    "k-step-up": (int, 80, "budget increase step"),
    "k-step-down": (int, 50, "budget decrease step"),
    "ema-beta": (float, 0.2, "loss EMA coefficient"),
    "k-alpha": (float, 0.2, "budget momentum coefficient"),
    "dim": (int, 4, "token embedding dimension"),
    "heads": (int, 2, "fine attention heads"),
    "hidden": (int, 64, "classifier hidden width"),
    "samples-per-class": (int, 100, "synthetic samples per class"),
    "image-size": (int, 32, "synthetic image edge length"),
    "noise-sigma": (float, 0.05, "synthetic background noise sigma"),
    "k": (int, 0, "pixel budget for cost accounting (0 = from checkpoint)"),
    "json": (bool, False, "emit JSON instead of a table"),
    "baseline": (bool, False, "also report the dense baseline cost"),
}

_PATH_FLAGS = ("out", "config", "checkpoint", "image")


def _read_config_file(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {text!r}")
        key, _, raw = text.partition("=")
        key = key.strip()
        if key not in _OPTIONS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        typ = _OPTIONS[key][0]
        try:
            values[key] = _parse_bool(raw) if typ is bool else typ(raw.strip())
        except (ValueError, ConfigError) as err:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {err}") from err
    return values


def _resolve(args: argparse.Namespace) -> dict:
    """Defaults, then config file, then explicit flags."""
    settings = {key: spec[1] for key, spec in _OPTIONS.items()}
    if args.config:
        settings.update(_read_config_file(Path(args.config)))
    for key in _OPTIONS:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            settings[key] = value
    if settings["seed"] is None:
        env = os.environ.get("SPARSEATTN_SEED")
        try:
            settings["seed"] = int(env) if env else 0
        except ValueError as err:
            raise ConfigError(f"SPARSEATTN_SEED is not an integer: {env!r}") from err
    if settings["model"] not in ("sparse", "baseline"):
        raise ConfigError(f"unknown model {settings['model']!r}")
    return settings


def _write_resolved(settings: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for key in sorted(_OPTIONS):
        value = settings[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key}={value}")
    (out_dir / "config.resolved").write_text("\n".join(lines) + "\n")


def _load_data(settings: dict):
    if settings["synthetic"]:
        spec = SyntheticSpec(image_size=settings["image-size"],
                             seed=settings["seed"],
                             noise_sigma=settings["noise-sigma"],
                             samples_per_class=settings["samples-per-class"])
        return generate(spec), spec.class_count
    if not settings["dataset"]:
        raise ConfigError("either --synthetic or --dataset is required")
    data = load_dataset(settings["dataset"])
    if not data:
        raise DatasetError(f"dataset at {settings['dataset']} is empty")
    classes = max(s.label for s in data) + 1
    return data, classes


def _train_config(settings: dict) -> TrainConfig:
    return TrainConfig(
        epochs=settings["epochs"], batch_size=settings["batch"],
        learning_rate=settings["lr"], weight_decay=settings["wd"],
        seed=settings["seed"], gamma=settings["gamma"],
        lambda_contrast=settings["lambda-contrast"],
        lambda_distill=settings["lambda-distill"],
        tau=settings["tau"], emphasis=settings["emphasis"],
    )


def _build_from_settings(settings: dict, image_shape, classes: int):
    return build_model(
        seed=settings["seed"], image_shape=image_shape, class_count=classes,
        dim=settings["dim"], heads=settings["heads"], hidden=settings["hidden"],
        k_init=settings["k-init"], k_min=settings["k-min"],
        k_max=settings["k-max"] or None,
        ema_beta=settings["ema-beta"], k_alpha=settings["k-alpha"],
        k_step_up=settings["k-step-up"], k_step_down=settings["k-step-down"],
    )


def cmd_gen(args) -> int:
    settings = _resolve(args)
    out_dir = Path(args.out)
    spec = SyntheticSpec(image_size=settings["image-size"], seed=settings["seed"],
                         noise_sigma=settings["noise-sigma"],
                         samples_per_class=settings["samples-per-class"])
    export_dataset(generate(spec), out_dir)
    _write_resolved(settings, out_dir)
    print(f"wrote {spec.class_count * spec.samples_per_class} images to {out_dir}")
    return 0


def cmd_train(args) -> int:
    settings = _resolve(args)
    out_dir = Path(args.out)
    data, classes = _load_data(settings)
    train_set, test_set = split(data, 0.8, settings["seed"])
    shape = train_set[0].pixels.data.shape
    config = _train_config(settings)
    _write_resolved(settings, out_dir)

    if settings["model"] == "baseline":
        net = build_baseline(settings["seed"], shape, classes)
        ckpt_path = out_dir / "checkpoint.satb"
        try:
            net, logs = train_baseline(net, train_set, config)
        except NumericError as err:
            save_baseline(net, ckpt_path)
            print(f"numeric abort: {err}; last-good checkpoint at {ckpt_path}",
                  file=sys.stderr)
            return 4
        save_baseline(net, ckpt_path)
        metrics = evaluate_baseline(net, test_set) if test_set else None
    else:
        model = _build_from_settings(settings, shape, classes)
        ckpt_path = out_dir / "checkpoint.satm"
        try:
            model, logs = train(model, train_set, config)
        except NumericError as err:
            save_model(model, ckpt_path)
            print(f"numeric abort: {err}; last-good checkpoint at {ckpt_path}",
                  file=sys.stderr)
            return 4
        save_model(model, ckpt_path)
        metrics = evaluate(model, test_set) if test_set else None

    with open(out_dir / "metrics.jsonl", "w") as fh:
        for record in logs:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        if metrics is not None:
            fh.write(json.dumps({"final_test": metrics.to_dict()}, sort_keys=True) + "\n")
    if metrics is not None:
        print(f"test accuracy {metrics.accuracy:.4f}  f1 {metrics.f1:.4f}  "
              f"k {metrics.k_mean:.0f} ({metrics.k_percent:.1f}% of pixels)")
    print(f"checkpoint: {ckpt_path}")
    return 0


def _load_any_checkpoint(path: Path):
    if not path.exists():
        raise DatasetError(f"checkpoint not found: {path}")
    magic = path.open("rb").read(4)
    if magic == b"SATM":
        return "sparse", load_model(path)
    if magic == b"SATB":
        return "baseline", load_baseline(path)
    raise DatasetError(f"{path}: unrecognized checkpoint magic {magic!r}")


def cmd_eval(args) -> int:
    settings = _resolve(args)
    kind, model = _load_any_checkpoint(Path(args.checkpoint))
    data, _ = _load_data(settings)
    metrics = evaluate(model, data) if kind == "sparse" else evaluate_baseline(model, data)
    if settings["json"]:
        print(json.dumps(metrics.to_dict(), sort_keys=True))
    else:
        print(f"accuracy   {metrics.accuracy:.4f}")
        print(f"precision  {metrics.precision:.4f} (weighted)")
        print(f"recall     {metrics.recall:.4f} (weighted)")
        print(f"f1         {metrics.f1:.4f} (weighted)")
        print(f"k          {metrics.k_mean:.1f} ({metrics.k_percent:.2f}% of image)")
        print("confusion (rows = true):")
        for row in metrics.confusion:
            print("  " + " ".join(f"{v:6d}" for v in row))
    return 0


def _print_cost(title: str, report) -> None:
    print(title)
    print(f"  parameters    {report.parameters}")
    for stage, flops in report.stage_flops.items():
        print(f"  {stage:<12}  {flops} MACs")
    print(f"  total         {report.total_flops} MACs")
    print(f"  % image       {report.pixel_percent:.2f}")


def cmd_cost(args) -> int:
    settings = _resolve(args)
    if args.checkpoint:
        kind, model = _load_any_checkpoint(Path(args.checkpoint))
        if kind == "baseline":
            report = baseline_cost(model)
            payload = {"baseline": report.to_dict()}
            if settings["json"]:
                print(json.dumps(payload, sort_keys=True))
            else:
                _print_cost("dense baseline", report)
            return 0
        shape = model.image_shape
        k = settings["k"] or model.controller.k
    else:
        size = settings["image-size"]
        shape = (size, size)
        model = _build_from_settings(settings, shape, 3)
        k = settings["k"] or model.controller.k
    k = max(1, min(k, shape[0] * shape[1]))
    report = count_cost(model, shape, k)
    payload = {"sparse": report.to_dict()}
    if settings["baseline"]:
        base = baseline_cost(build_baseline(settings["seed"], shape, model.class_count))
        payload["baseline"] = base.to_dict()
        payload["flops_ratio"] = report.total_flops / base.total_flops
    if settings["json"]:
        print(json.dumps(payload, sort_keys=True))
    else:
        _print_cost(f"sparse model (k={k})", report)
        if settings["baseline"]:
            base_report = baseline_cost(build_baseline(settings["seed"], shape,
                                                       model.class_count))
            _print_cost("dense baseline", base_report)
            print(f"  flops ratio   {report.total_flops / base_report.total_flops:.3f}")
    return 0


def cmd_viz(args) -> int:
    kind, model = _load_any_checkpoint(Path(args.checkpoint))
    if kind != "sparse":
        raise DatasetError("viz needs a sparse-model checkpoint")
    image_path = Path(args.image)
    pixels = read_pgm(image_path)
    if pixels.shape != tuple(model.image_shape):
        raise DatasetError(
            f"image shape {pixels.shape} does not match model {model.image_shape}"
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = image_path.stem

    h, w = pixels.shape
    k = max(1, min(model.controller.k, h * w))
    image = Tensor(pixels)
    logits, diag = model_forward(model, image, k, training=False)

    coarse_map = diag.coarse.attention_map.data
    write_pgm(out_dir / f"{stem}_coarse.pgm", coarse_map)
    tensor_to_csv(diag.coarse.attention_map, out_dir / f"{stem}_coarse.csv")

    importance = diag.fine.pixel_importance.data[:k]
    scores = [coarse_map[p.row, p.col] for p in diag.pixels]
    write_topk_csv(out_dir / f"{stem}_topk.csv", diag.pixels, scores, importance)

    fine_map = np.zeros((h, w))
    peak = importance.max()
    if peak > 0:
        for i, p in enumerate(diag.pixels):
            fine_map[p.row, p.col] = importance[i] / peak
    write_pgm(out_dir / f"{stem}_fine.pgm", fine_map)

    print(f"predicted class {int(np.argmax(logits.data))}; "
          f"maps written to {out_dir}/{stem}_*.pgm")
    return 0


def _add_options(parser: argparse.ArgumentParser, keys) -> None:
    for key in keys:
        typ, _, help_text = _OPTIONS[key]
        flag = f"--{key}"
        if typ is bool:
            parser.add_argument(flag, action="store_const", const=True,
                                default=None, help=help_text)
        else:
            parser.add_argument(flag, type=typ, default=None, help=help_text)


_TRAIN_KEYS = [k for k in _OPTIONS if k not in ("k", "json", "baseline")]
_DATA_KEYS = ["synthetic", "dataset", "seed", "samples-per-class",
              "image-size", "noise-sigma", "json"]
_COST_KEYS = ["seed", "image-size", "dim", "heads", "hidden", "k-init", "k-min",
              "k-max", "ema-beta", "k-alpha", "k-step-up", "k-step-down",
              "k", "json", "baseline"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparseattn",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic PGM dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default="", help="key=value config file")
    _add_options(p, ["seed", "samples-per-class", "image-size", "noise-sigma"])
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model and write checkpoint + logs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default="", help="key=value config file")
    _add_options(p, _TRAIN_KEYS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default="", help="key=value config file")
    _add_options(p, _DATA_KEYS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cost", help="report parameters and per-stage FLOPs")
    p.add_argument("--checkpoint", default="")
    p.add_argument("--config", default="", help="key=value config file")
    _add_options(p, _COST_KEYS)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("viz", help="export attention maps for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="input PGM image")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_viz)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except DatasetError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except NumericError as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
