"""Command-line entry point.

Commands: prep, train, eval, predict, gradcheck, params, export-plot.
Global flags: --config <key=value file>, --seed, --classes. Precedence is
defaults < config file < explicit command-line flags. Errors go to stderr
with a nonzero exit; machine-readable outputs go to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import gradcheck as gc
from . import metrics, pipeline
from .errors import ResEMGNetError, UsageError
from .model import (ModelConfig, init_params, load_checkpoint, named_tensors,
                    parameter_count, predict, forward, save_checkpoint)
from .optim import TrainConfig, TrainLog, train
from .pipeline import SplitSpec, class_names

CONFIG_SCHEMA = {
    "learning_rate": float,
    "epochs": int,
    "batch_size": int,
    "lr_decay_factor": float,
    "lr_plateau_patience": int,
    "min_lr": float,
    "early_stop_patience": int,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_epsilon": float,
    "rng_seed": int,
    "num_classes": int,
    "input_length": int,
    "train_frac": float,
    "val_frac": float,
    "test_frac": float,
    "zscore": bool,
}

_BOOL_TOKENS = {"true": True, "1": True, "yes": True,
                "false": False, "0": False, "no": False}


def load_config_file(path: str) -> dict:
    """Parse a flat key=value config file; unknown keys are errors."""
    out: dict = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}") from e
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got "
                                 f"{line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in CONFIG_SCHEMA:
                raise UsageError(f"{path}:{lineno}: unknown config key "
                                 f"{key!r}")
            typ = CONFIG_SCHEMA[key]
            try:
                if typ is bool:
                    out[key] = _BOOL_TOKENS[value.lower()]
                else:
                    out[key] = typ(value)
            except (KeyError, ValueError):
                raise UsageError(f"{path}:{lineno}: bad {typ.__name__} value "
                                 f"{value!r} for {key}") from None
    return out


class Settings:
    """Merged view of defaults, config file and command-line flags."""

    def __init__(self, args: argparse.Namespace):
        self.file_cfg = load_config_file(args.config) if args.config else {}
        self.args = args

    def get(self, key: str, flag_value=None):
        if flag_value is not None:
            return flag_value
        if key in self.file_cfg:
            return self.file_cfg[key]
        return None

    def seed(self) -> int:
        return self.get("rng_seed", self.args.seed) or 0

    def classes(self) -> int:
        return self.get("num_classes", self.args.classes) or 3

    def train_config(self) -> TrainConfig:
        kwargs = {}
        for key in ("learning_rate", "epochs", "batch_size",
                    "lr_decay_factor", "lr_plateau_patience", "min_lr",
                    "early_stop_patience", "adam_beta1", "adam_beta2",
                    "adam_epsilon"):
            v = self.get(key, getattr(self.args, key, None))
            if v is not None:
                kwargs[key] = v
        return TrainConfig(rng_seed=self.seed(), **kwargs)

    def split_spec(self) -> SplitSpec:
        kwargs = {}
        for key in ("train_frac", "val_frac", "test_frac"):
            v = self.get(key, getattr(self.args, key, None))
            if v is not None:
                kwargs[key] = v
        return SplitSpec(rng_seed=self.seed(), **kwargs)

    def zscore(self) -> bool:
        flag = getattr(self.args, "zscore", None)
        return bool(self.get("zscore", True if flag else None))


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_prep(settings: Settings, args) -> int:
    report = pipeline.prep_dataset(
        args.manifest, args.out_dir, settings.split_spec(),
        num_classes=settings.classes(), zscore=settings.zscore(),
        window_len=args.window_len, target_len=args.target_len)
    report_path = f"{args.out_dir}/split_report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    for name, info in report["splits"].items():
        _info(f"{name}: {info['windows']} windows from "
              f"{len(info['subjects'])} subjects -> {info['path']}")
    _info(f"split report: {report_path}")
    return 0


def cmd_train(settings: Settings, args) -> int:
    train_records = pipeline.unpack_dataset(args.train_data)
    val_records = pipeline.unpack_dataset(args.val_data)
    num_classes = settings.classes()
    window_len = train_records[0].samples.shape[0]
    cfg_len = settings.get("input_length", getattr(args, "input_length", None))
    if cfg_len is not None and cfg_len != window_len:
        raise UsageError(f"configured input_length {cfg_len} does not match "
                         f"dataset window length {window_len}")
    model_cfg = ModelConfig(num_classes=num_classes, input_length=window_len,
                            rng_seed=settings.seed())
    tcfg = settings.train_config()

    def progress(rec):
        _info(f"epoch {rec.epoch}: train_loss={rec.train_loss:.4f} "
              f"val_loss={rec.val_loss:.4f} val_acc={rec.val_accuracy:.4f} "
              f"lr={rec.lr:g}")

    params, log = train(model_cfg, train_records, val_records, tcfg,
                        progress=progress)
    save_checkpoint(params, args.checkpoint_out)
    log.to_ndjson(args.log_out)
    _info(f"checkpoint: {args.checkpoint_out}")
    _info(f"training log: {args.log_out}")
    return 0


def cmd_eval(settings: Settings, args) -> int:
    params = load_checkpoint(args.checkpoint)
    records = pipeline.unpack_dataset(args.data)
    if not records:
        raise UsageError("dataset is empty")
    bad = max(r.label for r in records)
    if bad >= params.num_classes:
        raise UsageError(f"class-count mismatch: dataset has label {bad} but "
                         f"checkpoint has {params.num_classes} classes")
    names = class_names(params.num_classes)
    labels = [r.label for r in records]
    preds = [predict(params, r.samples) for r in records]
    cm = metrics.confusion(labels, preds, params.num_classes)
    report = metrics.build_report(cm, names)
    print(metrics.format_report_text(report))
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump(metrics.report_to_dict(report), fh, indent=2)
            fh.write("\n")
        _info(f"report JSON: {args.json_out}")
    return 0


def cmd_predict(settings: Settings, args) -> int:
    params = load_checkpoint(args.checkpoint)
    names = class_names(params.num_classes)
    samples = pipeline.read_signal_file(args.signal)
    recording = pipeline.Tensor.wrap(samples.reshape(-1, 1))
    windows = pipeline.segment_windows(recording, args.window_len)
    for idx, win in enumerate(windows):
        x = pipeline.resample_to_length(win, args.target_len)
        if settings.zscore():
            x = pipeline.zscore_window(x)
        probs, _ = forward(params, x)
        cls = int(np.argmax(probs.data))
        probs_txt = " ".join(f"{p:.4f}" for p in probs.data)
        print(f"{idx}\t{names[cls]}\t{probs_txt}")
    return 0


def cmd_gradcheck(settings: Settings, args) -> int:
    seeds = tuple(int(s) for s in args.seeds.split(","))
    reports = gc.run_battery(seeds=seeds,
                             include_end_to_end=not args.no_end_to_end)
    all_passed = True
    for rep in reports:
        status = "PASS" if rep.passed else "FAIL"
        all_passed &= rep.passed
        print(f"{status}  {rep.name:<28} max_rel={rep.max_rel_error:.3e}  "
              f"threshold={rep.threshold:g}  checked={rep.n_checked} "
              f"skipped={rep.n_skipped}")
    if args.json_out:
        payload = {"passed": all_passed,
                   "checks": [rep.to_dict() for rep in reports]}
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    return 0 if all_passed else 1


def cmd_params(settings: Settings, args) -> int:
    cfg = ModelConfig(num_classes=settings.classes(),
                      rng_seed=settings.seed())
    params = init_params(cfg)
    per_layer: dict[str, int] = {}
    for name, t in named_tensors(params):
        layer = name.split(".")[0]
        per_layer[layer] = per_layer.get(layer, 0) + t.data.size
    for layer, count in per_layer.items():
        print(f"{layer:<12} {count:>8}")
    print(f"{'total':<12} {parameter_count(params):>8}")
    return 0


def cmd_export_plot(settings: Settings, args) -> int:
    records = pipeline.unpack_dataset(args.data)
    names = class_names(settings.classes())
    n = args.num_windows
    if n > len(records):
        _info(f"warning: requested {n} windows but dataset has "
              f"{len(records)}; clamping")
        n = len(records)
    if n < 1:
        raise UsageError("need at least one window to export")
    by_class: dict[int, list[int]] = {}
    for i, rec in enumerate(records):
        by_class.setdefault(rec.label, []).append(i)
    # round-robin across classes so small exports show one window per class
    queues = [list(by_class[c]) for c in sorted(by_class)]
    chosen: list[int] = []
    while len(chosen) < n:
        for q in queues:
            if q and len(chosen) < n:
                chosen.append(q.pop(0))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("window,time_index,amplitude,label\n")
        for w, i in enumerate(chosen):
            rec = records[i]
            if rec.label >= len(names):
                raise UsageError(f"label {rec.label} out of range for "
                                 f"{len(names)} classes; pass --classes")
            label = names[rec.label]
            for t, v in enumerate(rec.samples.data[:, 0]):
                fh.write(f"{w},{t},{v:.9g},{label}\n")
    _info(f"wrote {n} windows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resemgnet",
        description="EMG window classifier: preprocessing, training, "
                    "evaluation and gradient checking.")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed for every random generator")
    parser.add_argument("--classes", type=int, choices=(2, 3), default=None,
                        help="number of target classes (default 3)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="ingest a manifest into packed datasets")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--train-frac", dest="train_frac", type=float)
    p.add_argument("--val-frac", dest="val_frac", type=float)
    p.add_argument("--test-frac", dest="test_frac", type=float)
    p.add_argument("--zscore", action="store_true", default=None,
                   help="standardize each window after resampling")
    p.add_argument("--window-len", type=int, default=pipeline.WINDOW_SAMPLES)
    p.add_argument("--target-len", type=int, default=pipeline.TARGET_SAMPLES)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train", help="train and write the best checkpoint")
    p.add_argument("--train-data", required=True)
    p.add_argument("--val-data", required=True)
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--log-out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--min-lr", dest="min_lr", type=float)
    p.add_argument("--plateau-patience", dest="lr_plateau_patience", type=int)
    p.add_argument("--early-stop-patience", dest="early_stop_patience",
                   type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify every window of a raw "
                                       "signal file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--signal", required=True)
    p.add_argument("--window-len", type=int, default=pipeline.WINDOW_SAMPLES)
    p.add_argument("--target-len", type=int, default=pipeline.TARGET_SAMPLES)
    p.add_argument("--zscore", action="store_true", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="run the finite-difference suite")
    p.add_argument("--seeds", default="0,1,2",
                   help="comma-separated seeds (default 0,1,2)")
    p.add_argument("--no-end-to-end", action="store_true")
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="print per-layer parameter counts")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("export-plot", help="dump sample windows as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("-n", "--num-windows", dest="num_windows", type=int,
                   default=3)
    p.set_defaults(func=cmd_export_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = Settings(args)
        return args.func(settings, args)
    except ResEMGNetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
