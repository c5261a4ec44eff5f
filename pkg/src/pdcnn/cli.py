"""Command-line entry point: dataset generation, training, evaluation,
architecture search, and diagnostics.

Every command is deterministic given its flags (seeds included): repeated
invocations produce byte-identical outputs. Wall-clock timing is therefore
written only when --timing is passed. Exit codes: 0 success, 1 runtime or
data error, 2 usage error.

Options may also come from a flat key=value config file (--config); explicit
flags win, and unknown config keys are errors.
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import diag as G
from . import search as S
from .arch import (ArchConfig, build_pdcnn, parse_arch_file, parse_kv_file,
                   param_count)
from .layers import ShapeError
from .network import load_model, save_model
from .optim import (SgdConfig, evaluate, read_curve_csv, train,
                    write_curve_csv)
from .tensor import Rng, mix_seed

STREAM_SPLIT = 5


class UsageError(Exception):
    pass


# per-command option tables: name -> (type, default); None default = required
_COMMON_TRAIN_OPTS = {
    "lr": (float, 0.01),
    "momentum": (float, 0.9),
    "weight_decay": (float, 0.0005),
    "batch_size": (int, 32),
    "lr_drop": (float, 0.1),
    "lr_patience": (int, 20),
    "crop": (int, 0),       # 0 = take the arch file's input_size, else 224
    "dtype": (str, "float32"),
    "seed": (int, 0),
}

_OPTS = {
    "gendata": {
        "out": (str, ""),
        "n_per_class": (int, 10),
        "size": (int, 64),
        "difficulty": (float, 0.5),
        "seed": (int, 0),
    },
    "train": {
        **_COMMON_TRAIN_OPTS,
        "manifest": (str, ""),
        "out": (str, ""),
        "depths": (str, ""),
        "arch": (str, ""),
        "epochs": (int, 30),
    },
    "eval": {
        "model": (str, ""),
        "manifest": (str, ""),
    },
    "search": {
        **_COMMON_TRAIN_OPTS,
        "manifest": (str, ""),
        "out": (str, ""),
        "arch": (str, ""),
        "epochs": (int, 10),
        "candidates": (str, "3,4,5"),
        "max_branches": (int, 4),
        "replay": (str, ""),
    },
    "diag": {
        "model": (str, ""),
        "curve": (str, ""),
        "time": (str, ""),
        "out": (str, ""),
        "window": (int, 10),
        "tol": (float, 0.005),
    },
}

_HELP = {
    "time": "t,n,e (e.g. 8.32633,3,967)",
    "depths": "comma-separated branch depths, e.g. 4,3,4",
    "replay": "fixture CSV (depths,error) for table-driven search",
    "out": "output directory",
    "manifest": "dataset manifest CSV",
}


def _require(args, command, *keys):
    for key in keys:
        if not getattr(args, key):
            raise UsageError(f"{command} requires --{key.replace('_', '-')} "
                             f"(flag or config file)")

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _merge_config(args, command):
    """Fill unset options from the config file, then from defaults."""
    table = _OPTS[command]
    file_values = {}
    if getattr(args, "config", None):
        raw = parse_kv_file(args.config)
        for key, text in raw.items():
            if key not in table and key not in ("rotate", "timing"):
                raise UsageError(f"unknown config key {key!r} for {command}")
            if key in ("rotate", "timing"):
                low = text.lower()
                if low not in _BOOL_TRUE | _BOOL_FALSE:
                    raise UsageError(f"config key {key} must be boolean, got {text!r}")
                file_values[key] = low in _BOOL_TRUE
            else:
                typ, _ = table[key]
                file_values[key] = typ(text)
    for key, (typ, default) in table.items():
        if getattr(args, key, None) is None:
            setattr(args, key, file_values.get(key, default))
    for key in ("rotate", "timing"):
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, file_values.get(key, False))


def _parse_depths(text):
    try:
        depths = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad depths list {text!r}; expected e.g. 4,3,4")
    if not depths:
        raise UsageError(f"bad depths list {text!r}")
    return depths


def _arch_config(args):
    """Read the optional architecture description file into (ArchConfig, dict)."""
    arch_d = parse_arch_file(args.arch) if getattr(args, "arch", "") else {}
    config = ArchConfig(**{k: arch_d[k] for k in (
        "conv1_stride", "conv1_padding", "pool_window", "pool_stride",
        "lrn_radius", "lrn_k", "lrn_alpha", "lrn_beta", "filter_scale",
        "init_sigma") if k in arch_d})
    return config, arch_d


def _arch_setup(args):
    """Resolve architecture description file plus flags into (depths, variants,
    config, crop, channels)."""
    config, arch_d = _arch_config(args)
    depths = _parse_depths(args.depths) if getattr(args, "depths", "") \
        else arch_d.get("depths")
    if not depths:
        raise UsageError("no architecture given: pass --depths or --arch FILE")
    crop = args.crop or arch_d.get("input_size", 224)
    channels = arch_d.get("input_channels", 3)
    return depths, arch_d.get("variants"), config, crop, channels


def _np_dtype(name):
    if name not in ("float32", "float64"):
        raise UsageError(f"dtype must be float32 or float64, got {name!r}")
    return np.dtype(name)


def cmd_gendata(args):
    _merge_config(args, "gendata")
    _require(args, "gendata", "out")
    ds = D.gen_synthetic(args.n_per_class, args.size, args.difficulty,
                         args.seed, args.out)
    print(f"records={len(ds)}")
    return 0


def _load_split(args, crop):
    dataset = D.load_manifest(args.manifest, crop_size=crop)
    if args.rotate:
        dataset = D.rotate_augment(dataset)
    return D.split_batches(dataset, Rng(mix_seed(args.seed, STREAM_SPLIT)))


def cmd_train(args):
    _merge_config(args, "train")
    _require(args, "train", "manifest", "out")
    depths, variants, config, crop, channels = _arch_setup(args)
    spec = build_pdcnn(depths, variants=variants,
                       input_shape=(channels, crop, crop), config=config)
    train_set, test_set = _load_split(args, crop)
    cfg = SgdConfig(learning_rate=args.lr, momentum=args.momentum,
                    weight_decay=args.weight_decay, batch_size=args.batch_size,
                    max_epochs=args.epochs, lr_drop=args.lr_drop,
                    lr_patience=args.lr_patience)
    net, curve = train(spec, train_set, test_set, cfg, args.seed,
                       dtype=_np_dtype(args.dtype))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_curve_csv(curve, out / "curve.csv", timing=args.timing)
    save_model(net, out / "model.bin")
    _write_train_report(out / "report.txt", net, curve, args)
    print(f"trained depths={','.join(str(d) for d in depths)} "
          f"epochs={len(curve)} out={out}")
    return 0


def _write_train_report(path, net, curve, args):
    best = min(curve.records, key=lambda r: r.test_error, default=None)
    conv_epoch = G.detect_convergence(curve)
    lines = [
        f"best_test_error={best.test_error:.6f}" if best else "best_test_error=none",
        f"best_epoch={best.epoch}" if best else "best_epoch=none",
        f"convergence_epoch={conv_epoch if conv_epoch is not None else 'none'}",
        f"param_count={param_count(net.spec)}",
        f"epochs_run={len(curve)}",
        "test_protocol=center_crop_no_flip",
    ]
    if args.timing:
        lines.append(f"train_seconds={sum(r.seconds for r in curve.records):.3f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_eval(args):
    _merge_config(args, "eval")
    _require(args, "eval", "model", "manifest")
    net = load_model(args.model)
    crop = net.spec.input_shape[1]
    dataset = D.load_manifest(args.manifest, crop_size=crop)
    error = evaluate(net, dataset)
    print(f"error_rate={error:.6f}")
    return 0


def _read_fixture(path):
    fixture = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["depths", "error"]:
            raise ValueError(f"{path}: fixture header must be depths,error, "
                             f"got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 columns")
            depths = tuple(int(v) for v in row[0].split(",") if v.strip())
            fixture[depths] = float(row[1])
    return fixture


def cmd_search(args):
    _merge_config(args, "search")
    _require(args, "search", "out")
    candidates = _parse_depths(args.candidates)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.replay:
        oracle = S.replay_oracle(_read_fixture(args.replay))
        input_shape = (3, 224, 224)
        config = None
    else:
        if not args.manifest:
            raise UsageError("search needs --replay FIXTURE.csv or --manifest PATH")
        config, arch_d = _arch_config(args)
        crop = args.crop or arch_d.get("input_size", 224)
        train_set, test_set = _load_split(args, crop)
        input_shape = (arch_d.get("input_channels", 3), crop, crop)
        cfg = SgdConfig(learning_rate=args.lr, momentum=args.momentum,
                        weight_decay=args.weight_decay,
                        batch_size=args.batch_size, max_epochs=args.epochs,
                        lr_drop=args.lr_drop, lr_patience=args.lr_patience)
        oracle = S.train_eval_oracle(train_set, test_set, cfg, args.seed,
                                     input_shape, config,
                                     dtype=_np_dtype(args.dtype))
    try:
        spec, trace = S.greedy_pdcnn_search(candidates, oracle,
                                            args.max_branches,
                                            input_shape=input_shape,
                                            config=config)
    except S.SearchError as err:
        G.emit_report(err.trace, out / "search.csv")
        print(f"search failed: {err}", file=sys.stderr)
        return 1
    G.emit_report(trace, out / "search.csv")
    for rnd in trace.rounds:
        if rnd.chosen:
            error = next(c.error for c in rnd.candidates
                         if c.depths == rnd.chosen)
            print(f"round {rnd.number}: chose "
                  f"{','.join(str(d) for d in rnd.chosen)} (error {error:.6f})")
        else:
            print(f"round {rnd.number}: stop (no improvement)")
    print(f"winner={','.join(str(d) for d in trace.winner)}")
    return 0


def cmd_diag(args):
    _merge_config(args, "diag")
    if not (args.time or args.model or args.curve):
        raise UsageError("diag needs --time t,n,e and/or --model and/or --curve")
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    if args.time:
        parts = args.time.split(",")
        if len(parts) != 3:
            raise UsageError(f"--time expects t,n,e, got {args.time!r}")
        t, n, e = float(parts[0]), int(parts[1]), int(parts[2])
        total = G.convergence_time(t, n, e)
        print(f"T={total}")
        if out:
            G.emit_report(G.ConvergenceReport(t, n, e, total),
                          out / "convergence.csv")
    if args.model:
        report = G.filter_variance(load_model(args.model))
        if report.mean_variance is not None:
            print(f"mean_variance={report.mean_variance:.6g}")
        if out:
            G.emit_report(report, out / "variance.csv")
    if args.curve:
        curve = read_curve_csv(args.curve)
        epoch = G.detect_convergence(curve, window=args.window, tol=args.tol)
        print(f"convergence_epoch={epoch if epoch is not None else 'none'}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pdcnn",
        description="Paralleled deep convolutional network training engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_table_opts(p, command):
        for key, (typ, default) in _OPTS[command].items():
            flag = "--" + key.replace("_", "-")
            extra = _HELP.get(key, "")
            p.add_argument(flag, type=typ, default=None,
                           help=f"{extra} (default {default!r})".strip())
        p.add_argument("--config", default=None,
                       help="key=value config file; flags win")

    p = sub.add_parser("gendata", help="write a synthetic dataset")
    add_table_opts(p, "gendata")
    p.set_defaults(func=cmd_gendata)

    p = sub.add_parser("train", help="train a network on a manifest dataset")
    p.add_argument("--rotate", action="store_true", default=None,
                   help="apply 90/180/270-degree rotation augmentation "
                        "before the train/test split")
    p.add_argument("--timing", action="store_true", default=None,
                   help="record wall-clock seconds (breaks byte-reproducibility)")
    add_table_opts(p, "train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model on a manifest")
    add_table_opts(p, "eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("search", help="greedy branch-selection search")
    p.add_argument("--rotate", action="store_true", default=None)
    p.add_argument("--timing", action="store_true", default=None)
    add_table_opts(p, "search")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("diag", help="diagnostics: filter variance, "
                                    "convergence epoch, T = t*n*e")
    add_table_opts(p, "diag")
    p.set_defaults(func=cmd_diag)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    except (ValueError, OSError, ShapeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
