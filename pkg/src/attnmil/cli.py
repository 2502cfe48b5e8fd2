"""``attnmil`` command line: gen, train, predict, crossval, compare.

Settings resolve as flags > ``--config`` file > defaults. Config files are
flat ``key = value`` lines using the long flag names (``epochs = 500``).
Exit codes: 0 ok, 2 usage or contract error, 1 internal error; failures
print one line ``attnmil: error[<kind>]: <reason>`` to stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from attnmil.dataset import (
    DatasetError,
    MilDataset,
    SyntheticSpec,
    apply_standardizer,
    fit_standardizer,
    generate_synthetic,
    load_dataset,
    pad_bag_duplicate,
    standardize_bags,
    write_dataset,
)
from attnmil.eval import (
    METRICS,
    EvalError,
    compare_values,
    oversample_negative_bags,
    read_report_dir,
    run_crossval,
    write_report,
)
from attnmil.io import atomic_write_rows, atomic_write_text
from attnmil.models import (
    METHODS,
    AttentionMilModel,
    TrainConfig,
    TrainingError,
    load_model,
    pad_target,
    save_model,
    score_bag,
    train_model,
)
from attnmil.nncore import ShapeError, derive_rng

PROG = "attnmil"

DEFAULTS = {
    "seed": 0,
    "method": "attention_mil",
    "folds": 5,
    "repetitions": 20,
    "oversample": 60,
    "epochs": 500,
    "lr": 1e-4,
    "pad_duplicate": False,
    "no_standardize": False,
    "pos": 82,
    "neg": 28,
    "dim": 103,
    "min_size": 1,
    "max_size": 12,
    "shift": 2.0,
    "signal_dims": None,
}

_TYPES = {
    "seed": int, "folds": int, "repetitions": int, "oversample": int, "epochs": int,
    "lr": float, "pos": int, "neg": int, "dim": int, "min_size": int, "max_size": int,
    "shift": float, "signal_dims": int, "method": str, "data": str, "out": str, "model": str,
}
_BOOLS = ("pad_duplicate", "no_standardize", "synthetic")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--out", help="output directory (gen: dataset file path)")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--folds", type=int)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--oversample", type=int, help="synthetic negative bags added per training set")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--pad-duplicate", action="store_const", const=True, dest="pad_duplicate")
    p.add_argument("--no-standardize", action="store_const", const=True, dest="no_standardize")


def _synthetic_flags(p: argparse.ArgumentParser):
    p.add_argument("--pos", type=int, help="positive bags")
    p.add_argument("--neg", type=int, help="negative bags")
    p.add_argument("--dim", type=int, help="feature dimension")
    p.add_argument("--min-size", type=int, dest="min_size")
    p.add_argument("--max-size", type=int, dest="max_size")
    p.add_argument("--shift", type=float, help="witness shift")
    p.add_argument("--signal-dims", type=int, dest="signal_dims")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen", help="write a synthetic instance-row dataset and .meta sidecar")
    _common(p)
    _synthetic_flags(p)

    p = sub.add_parser("train", help="train on a dataset, save the model and attention report")
    _common(p)
    p.add_argument("--data", help="instance-row CSV")

    p = sub.add_parser("predict", help="score a dataset with a saved model")
    _common(p)
    p.add_argument("--model", help="model file written by train")
    p.add_argument("--data", help="instance-row CSV")

    p = sub.add_parser("crossval", help="repeated stratified k-fold evaluation")
    _common(p)
    p.add_argument("--data", help="instance-row CSV")
    p.add_argument("--synthetic", action="store_const", const=True,
                   help="generate the dataset from the synthetic flags instead of --data")
    _synthetic_flags(p)

    p = sub.add_parser("compare", help="paired Wilcoxon comparison of two crossval reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--out", help="comparison CSV path")
    return parser


def read_config_file(path: str) -> dict[str, object]:
    out: dict[str, object] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key in _BOOLS:
            out[key] = value.lower() in ("1", "true", "yes", "on")
        elif key in _TYPES:
            try:
                out[key] = _TYPES[key](value)
            except ValueError:
                raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
        else:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
    return out


def resolve(args: argparse.Namespace) -> dict[str, object]:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(read_config_file(args.config))
    for key, value in vars(args).items():
        if key in ("config", "command") or value is None:
            continue
        cfg[key] = value
    return cfg


def _write_resolved(out_dir: Path, cfg: dict[str, object]):
    lines = [f"{k} = {cfg[k]}\n" for k in sorted(cfg) if k != "config"]
    atomic_write_text(out_dir / "resolved_config.txt", "".join(lines))


def _train_config(cfg) -> TrainConfig:
    return TrainConfig(learning_rate=float(cfg["lr"]), epochs=int(cfg["epochs"]), seed=int(cfg["seed"]),
                       oversample_count=int(cfg["oversample"]), pad_duplicate=bool(cfg["pad_duplicate"]),
                       standardize=not cfg["no_standardize"])


def _synthetic_spec(cfg) -> SyntheticSpec:
    try:
        return SyntheticSpec(n_pos=int(cfg["pos"]), n_neg=int(cfg["neg"]), feature_dim=int(cfg["dim"]),
                             bag_size_range=(int(cfg["min_size"]), int(cfg["max_size"])),
                             witness_shift=float(cfg["shift"]), n_signal_dims=None if cfg["signal_dims"] is None else int(cfg["signal_dims"]),
                             seed=int(cfg["seed"]))
    except DatasetError as exc:
        raise UsageError(str(exc)) from None


def _require(cfg, key, flag):
    if not cfg.get(key):
        raise UsageError(f"{flag} is required")
    return cfg[key]


def _out_dir(cfg) -> Path:
    out = Path(_require(cfg, "out", "--out"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _load(path) -> MilDataset:
    if not Path(path).exists():
        raise UsageError(f"dataset {path} does not exist")
    try:
        return load_dataset(path)
    except DatasetError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands


def cmd_gen(cfg) -> int:
    spec = _synthetic_spec(cfg)
    ds = generate_synthetic(spec)
    out = Path(cfg.get("out") or "dataset.csv")
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_dataset(out, ds)
    except OSError as exc:
        raise UsageError(f"cannot write {out}: {exc.strerror}") from None
    n_pos = int(ds.labels.sum())
    print(f"wrote {out}: {len(ds)} bags ({n_pos} positive, {len(ds) - n_pos} negative), "
          f"{ds.n_instances} instances, dim {ds.feature_dim}")
    return 0


def cmd_train(cfg) -> int:
    ds = _load(_require(cfg, "data", "--data"))
    out = _out_dir(cfg)
    config = _train_config(cfg)
    method = str(cfg["method"])
    bags = list(ds.bags)
    std = fit_standardizer(bags) if config.standardize else None
    train = standardize_bags(std, bags) if std else bags
    if config.oversample_count:
        train = oversample_negative_bags(train, config.oversample_count, derive_rng(config.seed, 2))
    pad = pad_target(ds.bags) if config.pad_duplicate and method != "mi_svm" else None
    if pad:
        train = [pad_bag_duplicate(b, pad) for b in train]
    model = train_model(method, train, config, derive_rng(config.seed, 1))
    save_model(out / "model.txt", model, std, pad)
    _write_predictions(out, model, std, pad, ds)
    _write_resolved(out, cfg)
    print(f"trained {method} on {len(ds)} bags; model written to {out / 'model.txt'}")
    return 0


def _score_all(model, std, pad, ds: MilDataset):
    if model.feature_dim != ds.feature_dim:
        raise ShapeError(f"model expects {model.feature_dim} features, dataset has {ds.feature_dim}")
    results = []
    for bag in ds.bags:
        b = apply_standardizer(std, bag) if std is not None else bag
        if pad:
            b = pad_bag_duplicate(b, max(pad, b.size))
        results.append((bag, *score_bag(model, b)))
    return results


def _write_predictions(out: Path, model, std, pad, ds: MilDataset):
    results = _score_all(model, std, pad, ds)
    attention = isinstance(model, AttentionMilModel)
    head = ["bag_id", "probability_or_score", "label"] + (["alpha"] if attention else [])
    rows = [head]
    att_rows = [["bag_id", "instance_index", "alpha", "is_padding"]]
    for bag, score, label, report in results:
        row = [bag.bag_id, format(float(score), ".17g"), label]
        if attention:
            row.append(";".join(format(float(a), ".17g") for a in report.weights))
            att_rows.extend(report.rows())
        rows.append(row)
    atomic_write_rows(out / "predictions.csv", rows)
    if attention:
        atomic_write_rows(out / "attention.csv", att_rows)


def cmd_predict(cfg) -> int:
    model_path = Path(_require(cfg, "model", "--model"))
    if not model_path.exists():
        raise UsageError(f"model {model_path} does not exist")
    ds = _load(_require(cfg, "data", "--data"))
    out = _out_dir(cfg)
    model, std, header = load_model(model_path)
    pad = int(header["pad_size"]) if "pad_size" in header else None
    _write_predictions(out, model, std, pad, ds)
    print(f"scored {len(ds)} bags; predictions written to {out / 'predictions.csv'}")
    return 0


def cmd_crossval(cfg) -> int:
    if cfg.get("synthetic"):
        ds = generate_synthetic(_synthetic_spec(cfg))
    else:
        ds = _load(_require(cfg, "data", "--data (or --synthetic)"))
    out = _out_dir(cfg)
    config = _train_config(cfg)
    report = run_crossval(ds, str(cfg["method"]), config, repetitions=int(cfg["repetitions"]),
                          k=int(cfg["folds"]), master_seed=int(cfg["seed"]))
    write_report(report, out)
    _write_resolved(out, cfg)
    for metric, agg in report.summary().items():
        mean = "NA" if agg.mean is None else f"{agg.mean:.3f}"
        sem = "NA" if agg.sem is None else f"{agg.sem:.3f}"
        print(f"{metric:9s} {mean} (SEM {sem})")
    return 0


def cmd_compare(args) -> int:
    meta_a, vals_a = _read_report(args.report_a)
    meta_b, vals_b = _read_report(args.report_b)
    for key in ("master_seed", "repetitions", "folds", "plan_hash"):
        if meta_a.get(key) != meta_b.get(key):
            raise UsageError(f"reports are not paired: {key} differs "
                             f"({meta_a.get(key)} vs {meta_b.get(key)})")
    rows = [["metric", "method_a", "method_b", "mean_a", "mean_b", "direction", "p_value"]]
    for m in METRICS:
        res = compare_values(meta_a["method"], meta_b["method"], m, vals_a[m], vals_b[m])
        rows.append([m, res.method_a, res.method_b, format(res.mean_a, ".17g"),
                     format(res.mean_b, ".17g"), res.direction, format(res.p_value, ".17g")])
        print(f"{m:9s} {res.direction} p={res.p_value:.4g}")
    out = Path(args.out) if args.out else Path(args.report_a) / "comparison.csv"
    atomic_write_rows(out, rows)
    return 0


def _read_report(path):
    try:
        return read_report_dir(path)
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot read report {path}: {exc}") from None


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: gen, train, predict, crossval or compare")
        if args.command == "compare":
            return cmd_compare(args)
        cfg = resolve(args)
        return {"gen": cmd_gen, "train": cmd_train, "predict": cmd_predict,
                "crossval": cmd_crossval}[args.command](cfg)
    except UsageError as exc:
        _fail("usage", exc)
        return 2
    except (DatasetError, ShapeError, EvalError, TrainingError, ValueError) as exc:
        _fail("contract", exc)
        return 2
    except Exception as exc:  # noqa: BLE001
        _fail("internal", f"{type(exc).__name__}: {exc}")
        return 1


def _fail(kind, exc):
    msg = " ".join(str(exc).split())
    print(f"{PROG}: error[{kind}]: {msg}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
