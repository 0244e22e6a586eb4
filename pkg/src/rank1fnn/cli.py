"""Command-line entry point: ``rank1fnn {synth,train,eval,gradcheck,params}``.

Machine-readable CSV goes to stdout, diagnostics to stderr.  Exit codes:
1 gradient check failed, 2 configuration error, 3 data error, 4 training
diverged.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import data as dp
from .gradcheck import TOLERANCE, check_gradients, random_problem
from .metrics import accuracy, confusion_matrix, per_class_accuracy
from .model import DenseFNN, Rank1FNN, load_model, param_count, save_model
from .training import TrainConfig, TrainingDivergedError, train_dense, train_rank1

log = logging.getLogger("rank1fnn")

EXIT_GRADCHECK = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ints(text: str) -> tuple:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


@dataclass
class ExperimentConfig:
    model: str = "rank1"
    dims: tuple = (5, 5, 8)
    hidden: int = 8
    classes: int = 3
    learning_rate: float = 0.05
    max_epochs: int = 500
    tolerance: float = 1e-8
    seed: int = 0
    init_scale: float = 0.1
    slope: float = 1.0
    # synthetic | patches | hsc
    data: str = "synthetic"
    noise_sigma: float = 0.1
    synth_per_class: int = 100
    test_per_class: int = 200
    patches: str = "patches.hsp"
    patch_labels: str = "patch_labels.csv"
    cube: str = ""
    labels: str = ""
    patch_size: int = 5
    normalize: bool = True
    min_class_size: int = 0
    samples_per_class: tuple = (50,)
    out: str = "out"

    _parsers = {
        "dims": _parse_ints,
        "samples_per_class": _parse_ints,
        "normalize": _parse_bool,
    }

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            default = known[key].default
            parse = cls._parsers.get(key, type(default))
            try:
                kwargs[key] = parse(raw) if isinstance(raw, str) else raw
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.model not in ("rank1", "dense"):
            raise ConfigError(f"model must be rank1 or dense, got {self.model!r}")
        if self.data not in ("synthetic", "patches", "hsc"):
            raise ConfigError(f"data must be synthetic, patches or hsc, got {self.data!r}")
        if not self.dims or any(p < 1 for p in self.dims):
            raise ConfigError(f"dims must be positive integers, got {self.dims}")
        if self.hidden < 1:
            raise ConfigError("hidden must be at least 1")
        if self.classes < 2:
            raise ConfigError("classes must be at least 2")
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ConfigError("patch_size must be a positive odd integer")
        if not self.samples_per_class or any(n < 1 for n in self.samples_per_class):
            raise ConfigError("samples_per_class must list positive integers")
        if self.noise_sigma < 0 or self.synth_per_class < 1 or self.test_per_class < 0:
            raise ConfigError("noise_sigma, synth_per_class or test_per_class out of range")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.max_epochs, self.tolerance,
                           self.seed, self.init_scale, self.slope)


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip()] = value.strip()
    return values


def build_config(args) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = value.strip()
    for key in ("seed", "out", "dims", "hidden", "classes"):
        value = getattr(args, key, None)
        if value is not None:
            values[key] = value
    return ExperimentConfig.from_mapping(values)


# -- data sources ------------------------------------------------------------

def _load_full_dataset(cfg: ExperimentConfig) -> dp.LabeledDataset:
    if cfg.data == "synthetic":
        n = max(cfg.samples_per_class) + cfg.test_per_class
        return dp.generate_synthetic(cfg.dims, cfg.classes, n, cfg.noise_sigma, cfg.seed)
    try:
        if cfg.data == "patches":
            ds = dp.load_patch_set(cfg.patches, cfg.patch_labels)
        else:
            cube = dp.load_cube(cfg.cube)
            if cfg.normalize:
                cube = dp.normalize_bands(cube)
            ds = dp.extract_patches(cube, dp.load_labels(cfg.labels), cfg.patch_size)
    except OSError as exc:
        raise dp.DataError(str(exc)) from None
    if cfg.min_class_size > 0:
        ds = dp.select_classes(ds, cfg.min_class_size)
    if ds.dims != tuple(cfg.dims) or ds.n_classes != cfg.classes:
        raise dp.DataError(
            f"data has dims {ds.dims} and {ds.n_classes} classes; config says "
            f"{tuple(cfg.dims)} and {cfg.classes}"
        )
    return ds


def _split(cfg: ExperimentConfig, ds: dp.LabeledDataset, n: int):
    return dp.per_class_split(ds, n, cfg.seed)


# -- commands ----------------------------------------------------------------

def cmd_synth(cfg: ExperimentConfig, args) -> int:
    ds = dp.generate_synthetic(cfg.dims, cfg.classes, cfg.synth_per_class, cfg.noise_sigma, cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dp.save_patch_set(ds, out / "patches.hsp", out / "patch_labels.csv")
    hist = ds.histogram
    print(f"{ds.n_classes} classes, {hist[0]} each", file=sys.stderr)
    print("class,count")
    for k, count in enumerate(hist, start=1):
        print(f"{k},{count}")
    return 0


def cmd_train(cfg: ExperimentConfig, args) -> int:
    ds = _load_full_dataset(cfg)
    trainer = train_rank1 if cfg.model == "rank1" else train_dense
    root = Path(cfg.out)
    for n in cfg.samples_per_class:
        train, test = _split(cfg, ds, n)
        out = root if len(cfg.samples_per_class) == 1 else root / f"n{n}"
        out.mkdir(parents=True, exist_ok=True)
        log.info("training %s on %d samples (%d/class)", cfg.model, len(train), n)
        model, report = trainer(train, cfg.dims, cfg.hidden, cfg.classes, cfg.train_config())
        save_model(model, out / "model.txt")
        (out / "train_report.csv").write_text(report.to_csv())
        test_acc = accuracy(model.predict(test.samples), test.labels) if len(test) else float("nan")
        log.info("%d epochs, stopped by %s", report.epochs_run, report.terminated_by)
        print(f"accuracy,{report.train_accuracy!r},{test_acc!r}")
    return 0


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    try:
        model = load_model(args.model)
    except OSError as exc:
        raise dp.DataError(f"cannot read model: {exc}") from None
    except ValueError as exc:
        raise dp.DataError(str(exc)) from None
    if tuple(model.input_dims) != tuple(cfg.dims) or model.class_count != cfg.classes:
        raise dp.DataError(
            f"model expects dims {model.input_dims} and {model.class_count} classes; data has "
            f"{tuple(cfg.dims)} and {cfg.classes}"
        )
    ds = _load_full_dataset(cfg)
    if args.split != "all":
        n = args.samples_per_class or cfg.samples_per_class[0]
        train, test = _split(cfg, ds, n)
        ds = train if args.split == "train" else test
    pred = model.predict(ds.samples) if len(ds) else np.empty(0, dtype=np.int64)
    conf = confusion_matrix(pred, ds.labels, ds.n_classes)
    lines = [f"accuracy,{accuracy(pred, ds.labels)!r}"]
    for k, acc in enumerate(per_class_accuracy(conf), start=1):
        lines.append(f"class,{k},{int(conf[k - 1].sum())},{float(acc)!r}")
    for k, row in enumerate(conf, start=1):
        lines.append("confusion," + str(k) + "," + ",".join(str(int(c)) for c in row))
    text = "\n".join(lines) + "\n"
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"eval_{args.split}.csv").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_gradcheck(cfg: ExperimentConfig, args) -> int:
    model, ds = random_problem(cfg.seed)
    errors = check_gradients(model, ds, corrupt=args.corrupt_block)
    print("block,max_rel_error,status")
    ok = True
    for block, err in errors.items():
        passed = err < TOLERANCE
        ok &= passed
        print(f"{block},{err:.3e},{'pass' if passed else 'fail'}")
    return 0 if ok else EXIT_GRADCHECK


def cmd_params(cfg: ExperimentConfig, args) -> int:
    rank1 = param_count("rank1", cfg.dims, cfg.hidden, cfg.classes)
    dense = param_count("dense", cfg.dims, cfg.hidden, cfg.classes)
    print(f"rank1,{rank1}")
    print(f"dense,{dense}")
    print(f"ratio,{dense / rank1:.2f}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "params": cmd_params,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", help="RNG seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--dims", help="input dims, e.g. 5,5,8")
    common.add_argument("--hidden", help="hidden neurons Q")
    common.add_argument("--classes", help="class count C")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rank1fnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic rank-1 dataset")
    sub.add_parser("train", parents=[common], help="train and report accuracy")
    p_eval = sub.add_parser("eval", parents=[common], help="evaluate a saved model")
    p_eval.add_argument("--model", required=True, help="model file from 'train'")
    p_eval.add_argument("--split", choices=("train", "test", "all"), default="test")
    p_eval.add_argument("--samples-per-class", type=int,
                        help="split size used at training time (default: first configured)")
    p_grad = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p_grad.add_argument("--corrupt-block", help=argparse.SUPPRESS)
    sub.add_parser("params", parents=[common], help="parameter counts")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except dp.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
