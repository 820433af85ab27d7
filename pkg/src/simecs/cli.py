"""``simecs`` command line: train, eval and experiment.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import csv
import os
import sys

import numpy as np

from . import data as data_mod
from . import experiments
from .simec import SimEcConfig, evaluate, load_model, save_model, train
from .similarity import (
    TargetSpec,
    binarize,
    center,
    label_similarity,
    median_gamma,
    normalize_range,
    random_mask,
    rbf_kernel,
    simpson_similarity,
)

TARGETS = ("label", "rbf", "simpson", "lowrank")


class UsageError(Exception):
    pass


def read_config(path):
    """Parse UTF-8 ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def build_problem(opts, data_dir=None, seed=0):
    """Features, full target and observation mask described by a config mapping.

    Returns ``(x, TargetSpec, synthetic)``. The target is centered and scaled
    into [-1, 1]; with ``missing_fraction > 0`` the mask hides entries of the
    centered matrix.
    """
    dataset = opts.get("dataset", "digits")
    target = opts.get("target", "lowrank" if dataset == "lowrank" else "rbf")
    if target not in TARGETS:
        raise UsageError(f"unknown target {target!r}; choose from {', '.join(TARGETS)}")
    m = int(opts.get("m", 500))
    missing = float(opts.get("missing_fraction", 0.0))

    if dataset == "lowrank" or target == "lowrank":
        if target != "lowrank" or dataset != "lowrank":
            raise UsageError("the lowrank target needs dataset=lowrank (and vice versa)")
        x, s = experiments.lowrank_problem(m, int(opts.get("rank", 10)), float(opts.get("noise", 0.5)),
                                           seed, int(opts.get("input_dim", 50)))
        synthetic = True
    elif dataset == "digits":
        classes = opts.get("classes")
        classes = tuple(int(c) for c in classes.split(",")) if classes else None
        ds = data_mod.load_digits(data_dir, m, classes=classes, seed=seed, train_fraction=1.0)
        x = data_mod.preprocess(ds).features
        synthetic = ds.synthetic
        if target == "label":
            raw = label_similarity(ds.labels)
        elif target == "rbf":
            gamma = float(opts["gamma"]) if opts.get("gamma") else median_gamma(x)
            raw = rbf_kernel(x, gamma)
        else:
            raw = simpson_similarity(binarize(ds.features))
        s = normalize_range(center(raw))
    else:
        raise UsageError(f"unknown dataset {dataset!r}; choose digits or lowrank")

    mask = random_mask(s.shape, missing, seed=seed + 1) if missing > 0 else None
    return x, TargetSpec(s, mask), synthetic


def model_config(opts, input_dim, seed):
    keys = {k: v for k, v in opts.items() if k in SimEcConfig.__dataclass_fields__}
    keys["input_dim"] = str(input_dim)
    keys["seed"] = str(seed)
    keys.setdefault("embed_dim", "10")
    return SimEcConfig.from_mapping(keys)


def _metrics_rows(rel, per, gram, gram_per):
    rows = [("relation_mse", rel)]
    if gram is not None:
        rows.append(("gram_mse", gram))
    if len(per) > 1:
        rows += [(f"relation_mse_slice{j}", v) for j, v in enumerate(per)]
    return rows


def _write_kv_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        for key, value in rows:
            w.writerow([key, format(value, ".17g") if isinstance(value, float) else value])


def _print_rows(rows):
    for key, value in rows:
        print(f"{key}={format(value, '.17g') if isinstance(value, float) else value}")


def _seed(args, opts):
    return args.seed if args.seed is not None else int(opts.get("seed", 0))


def _scaled_m(opts, scale):
    if scale != 1.0 and "m" in opts:
        opts = dict(opts, m=str(max(2, int(round(int(opts["m"]) * scale)))))
    return opts


def cmd_train(args):
    if not args.config:
        raise UsageError("train needs --config")
    if not args.out:
        raise UsageError("train needs --out (model path)")
    opts = _scaled_m(read_config(args.config), args.scale)
    seed = _seed(args, opts)
    x, target, synthetic = build_problem(opts, args.data_dir, seed)
    cfg = model_config(opts, x.shape[1], seed)
    model, report = train(cfg, x, target)
    save_model(model, args.out)
    rows = report.as_rows()
    csv_rows = [r for r in rows if r[0] != "wall_time"]
    csv_rows += [(f"loss_epoch{i}", v) for i, v in enumerate(report.losses)]
    _write_kv_csv(report_path(args.out), csv_rows)
    _print_rows(rows + [("synthetic_data", str(synthetic).lower()), ("model", args.out)])
    return 0


def report_path(model_path):
    return os.path.splitext(model_path)[0] + "_report.csv"


def cmd_eval(args):
    if not args.config or not args.model:
        raise UsageError("eval needs --config and --model")
    opts = _scaled_m(read_config(args.config), args.scale)
    seed = _seed(args, opts)
    model = load_model(args.model)
    x, target, _ = build_problem(opts, args.data_dir, seed)
    if x.shape[1] != model.config.input_dim or target.shape[1] <= model.target_column_ids.max():
        print(f"error: data shape {x.shape} / target shape {target.shape} do not match model "
              f"(input_dim={model.config.input_dim}, n_targets={model.target_column_ids.size})",
              file=sys.stderr)
        return 1
    rows = _metrics_rows(*evaluate(model, x, target))
    _print_rows(rows)
    if args.out:
        _write_kv_csv(args.out, rows)
    return 0


def cmd_experiment(args):
    name = args.experiment
    if name is None:
        raise UsageError(f"experiment needs --experiment NAME ({', '.join(experiments.EXPERIMENTS)})")
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    kw = {"seed": seed, "m": max(10, int(round(experiments.DEFAULT_M[name] * args.scale)))}
    if name != "dual":
        kw["data_dir"] = args.data_dir
    if args.epochs:
        kw["epochs"] = args.epochs
    result = experiments.RUNNERS[name](**kw)
    path = os.path.join(out_dir, f"{name}.csv")
    result.write_csv(path)
    for value, method, err in result.sorted_rows():
        print(f"{name} sweep={value:g} method={method} mse={err:.6g}")
    print(f"wrote {path} (synthetic data: {str(result.synthetic).lower()}, "
          f"{result.wall_time:.1f}s)")
    return 0


def make_parser():
    parser = argparse.ArgumentParser(prog="simecs", description="Similarity encoders")
    parser.add_argument("command", choices=("train", "eval", "experiment"))
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--data-dir", default=os.environ.get("SIMECS_DATA_DIR"),
                        help="directory with MNIST IDX files (default: $SIMECS_DATA_DIR)")
    parser.add_argument("--out", help="model path (train), CSV path (eval) or output dir (experiment)")
    parser.add_argument("--model", help="model file for eval")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--scale", type=float, default=1.0, help="multiplier on the number of points")
    parser.add_argument("--experiment", choices=experiments.EXPERIMENTS)
    parser.add_argument("--epochs", type=int, default=None, help="override training epochs (experiment)")
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    if args.scale <= 0:
        parser.print_usage(sys.stderr)
        print("simecs: error: --scale must be > 0", file=sys.stderr)
        return 2
    handler = {"train": cmd_train, "eval": cmd_eval, "experiment": cmd_experiment}[args.command]
    try:
        return handler(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"simecs: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"simecs: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
