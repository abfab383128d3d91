"""``coscov`` command-line entry point.

Exit codes: 0 success, 1 configuration or checkpoint error, 2 data error,
3 numeric abort, 4 search finished with failed cells.

A config file is JSON with optional ``model``, ``train`` and ``data``
sections; flags given on the command line override file values.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

from . import gradcheck
from .checkpoint import load_checkpoint
from .cos_layers import export_filters_csv
from .data import Dataset, load_directory, load_manifest, make_synthetic
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .model import ModelConfig, build, compare_parameters, count_parameters
from .search import MockOracle, SearchSpace, backbone, greedy_search, read_accuracy_table, training_measure
from .trainer import TrainConfig, ablation, evaluate, fit, sweep_memory_vq

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_SEARCH_FAILED = 1, 2, 3, 4

DATA_DEFAULTS: dict[str, Any] = {
    "dir": None, "manifest": None, "synthetic": False,
    "classes": 4, "per_class": 125, "seed": 0, "target_hz": 16000,
}
_SECTIONS = ("model", "train", "data")

log = logging.getLogger("coscov")


# -- config resolution --------------------------------------------------------
def read_config_file(path: str | None) -> dict[str, dict[str, Any]]:
    if not path:
        return {s: {} for s in _SECTIONS}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    for key in doc:
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config section {key!r} (expected one of {list(_SECTIONS)})")
    out = {s: dict(doc.get(s) or {}) for s in _SECTIONS}
    for key in out["data"]:
        if key not in DATA_DEFAULTS:
            raise ConfigError(f"unknown data config key {key!r}")
    return out


def _set(section: dict, key: str, value) -> None:
    if value is not None:
        section[key] = value


def resolve(args) -> dict[str, dict[str, Any]]:
    """Merge file values with flag overrides; flags win."""
    cfg = read_config_file(getattr(args, "config", None))
    m, t, d = cfg["model"], cfg["train"], cfg["data"]
    _set(m, "kind", getattr(args, "kind", None))
    _set(m, "num_classes", getattr(args, "num_classes", None))
    seed = getattr(args, "seed", None)
    _set(m, "seed", seed)
    _set(t, "seed", seed)
    for key in ("epochs", "lr", "batch_size", "patience", "optimizer"):
        _set(t, key, getattr(args, key, None))
    _set(d, "dir", getattr(args, "data_dir", None))
    _set(d, "manifest", getattr(args, "manifest", None))
    if getattr(args, "synthetic", False):
        d["synthetic"] = True
    _set(d, "classes", getattr(args, "classes", None))
    _set(d, "per_class", getattr(args, "per_class", None))
    cfg["data"] = {**DATA_DEFAULTS, **d}
    return cfg


def load_data(source: dict[str, Any]) -> Dataset:
    sources = [k for k in ("dir", "manifest") if source.get(k)] + (["synthetic"] if source.get("synthetic") else [])
    if len(sources) != 1:
        raise ConfigError(f"choose exactly one data source (--data-dir, --manifest or --synthetic); got {sources or 'none'}")
    if source.get("manifest"):
        return load_manifest(source["manifest"])
    if source.get("dir"):
        return load_directory(source["dir"], seed=source["seed"], target_hz=source["target_hz"])
    return make_synthetic(source["classes"], source["per_class"], seed=source["seed"])


def model_config(section: dict[str, Any], dataset: Dataset | None = None) -> ModelConfig:
    section = dict(section)
    if dataset is not None:
        if "num_classes" not in section:
            section["num_classes"] = dataset.num_classes
        elif section["num_classes"] != dataset.num_classes:
            raise ConfigError(f"num_classes={section['num_classes']} but the data has {dataset.num_classes} classes")
    return ModelConfig.from_dict(section)


def echo(command: str, **parts) -> None:
    """Write the fully resolved configuration to stderr as one JSON object."""
    doc = {"command": command}
    for k, v in parts.items():
        doc[k] = v.to_dict() if hasattr(v, "to_dict") else v
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


# -- commands -----------------------------------------------------------------
def cmd_train(args) -> int:
    cfg = resolve(args)
    ds = load_data(cfg["data"])
    mc = model_config(cfg["model"], ds)
    t = dict(cfg["train"])
    if args.out:
        t["checkpoint_dir"] = args.out
    tc = TrainConfig.from_dict(t)
    echo("train", model=mc, train=tc, data=cfg["data"])
    model, report = fit(mc, tc, ds, log_fn=lambda msg: print(msg, file=sys.stderr))
    if args.out:
        ds.save_manifest(Path(args.out) / "manifest.json")
    print(f"best_val_accuracy {report.best_val_accuracy:.4f}")
    if report.test_accuracy is not None:
        print(f"test_accuracy {report.test_accuracy:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve(args)
    model = load_checkpoint(args.checkpoint)
    ds = load_data(cfg["data"])
    echo("eval", model=model.config, data=cfg["data"], split=args.split, checkpoint=args.checkpoint)
    if model.config.num_classes != ds.num_classes:
        raise ConfigError(f"checkpoint has {model.config.num_classes} classes, data has {ds.num_classes}")
    pad = TrainConfig.from_dict(cfg["train"]).pad_or_trim_to
    acc, _ = evaluate(model, ds, args.split, pad_or_trim_to=pad)
    print(f"{acc:.4f}")
    return 0


def cmd_param_count(args) -> int:
    cfg = resolve(args)
    mc = model_config(cfg["model"])
    echo("param-count", model=mc)
    cmp = compare_parameters(mc)
    cos_rows = count_parameters(build(mc))["rows"] if mc.kind != "plain-cnn" else cmp["coscov"]["rows"]
    cnn_rows = cmp["plain-cnn"]["rows"]
    blocks = list(dict.fromkeys([*cos_rows, *cnn_rows]))
    print(f"{'block':<12} {'coscov':>10} {'plain-cnn':>10}")
    for b in blocks:
        print(f"{b:<12} {cos_rows.get(b, 0):>10} {cnn_rows.get(b, 0):>10}")
    print(f"{'total':<12} {sum(cos_rows.values()):>10} {cmp['plain-cnn']['total']:>10}")
    print(f"backbone {cmp['backbone_total']} vs {cmp['plain-cnn']['total']}: reduction {cmp['reduction_pct']:.2f}%")
    return 0


def cmd_gradcheck(args) -> int:
    echo("gradcheck", seed=args.seed, ops=args.ops, instances=args.instances)
    perturb = None
    if args.perturb:
        factor = 1.0 + args.perturb
        perturb = lambda op, name, g: g * factor  # noqa: E731
    try:
        results = gradcheck.run(args.ops, seed=args.seed, instances=args.instances, perturb=perturb)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from exc
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_export_filters(args) -> int:
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
    else:
        model = build(model_config(resolve(args)["model"]))
    echo("export-filters", model=model.config, layer=args.layer, out=args.out)
    items = model.bank_items()
    if args.layer:
        items = [(n, b) for n, b in items if n == args.layer]
        if not items:
            names = [n for n, _ in model.bank_items()]
            raise ConfigError(f"no cosine layer named {args.layer!r}; available: {names}")
    rows = export_filters_csv(args.out, items)
    print(f"wrote {rows} rows to {args.out}")
    return 0


def _load_space(path: str | None, num_classes: int | None) -> SearchSpace:
    doc = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read search space {path}: {exc}") from exc
    known = {"filter_candidates", "pool_candidates", "runs", "backbone"}
    for key in doc:
        if key not in known:
            raise ConfigError(f"unknown search space key {key!r}")
    bb = dict(doc.get("backbone") or {})
    base = backbone(num_classes or bb.pop("num_classes", 10)).to_dict()
    base.update(bb)
    kw = {k: doc[k] for k in ("filter_candidates", "pool_candidates", "runs") if k in doc}
    return SearchSpace(backbone=ModelConfig.from_dict(base), **kw)


def cmd_search(args) -> int:
    if args.mock_oracle or args.pool_oracle:
        try:
            filters = read_accuracy_table(args.mock_oracle) if args.mock_oracle else {}
            pools = read_accuracy_table(args.pool_oracle) if args.pool_oracle else {}
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read accuracy table: {exc}") from exc
        oracle = MockOracle(filters, pools)
        stages = [s for s, tab in (("filters", filters), ("pools", pools)) if tab]
        space = _load_space(args.space, args.num_classes)
        space.runs = 1
        if filters:
            space.filter_candidates = oracle.candidates("filters")
        if pools:
            space.pool_candidates = oracle.candidates("pools")
        measure = oracle
    else:
        cfg = resolve(args)
        ds = load_data(cfg["data"])
        space = _load_space(args.space, ds.num_classes)
        measure = training_measure(ds, TrainConfig.from_dict(cfg["train"]))
        stages = ["filters", "pools"]
    echo("search", space={"backbone": space.backbone.to_dict(), "filter_candidates": space.filter_candidates,
                          "pool_candidates": space.pool_candidates, "runs": space.runs}, stages=stages)
    result = greedy_search(space, measure, stages)
    for st in result.stages:
        print(f"{st.stage}: {st.chosen}")
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            st.save_csv(Path(args.out) / f"{st.stage}.csv")
    for stage, layer, value, msg in result.failed:
        print(f"failed {stage} layer {layer + 1} candidate {value}: {msg}", file=sys.stderr)
    return EXIT_SEARCH_FAILED if result.failed else 0


def cmd_sweep(args) -> int:
    cfg = resolve(args)
    grid = {"memory_sizes": [10, 100, 500], "embedding_counts": [64, 256, 512], "runs_per_cell": 5}
    if args.grid:
        try:
            user = json.loads(Path(args.grid).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read grid {args.grid}: {exc}") from exc
        for key in user:
            if key not in grid:
                raise ConfigError(f"unknown grid key {key!r}")
        grid.update(user)
    ds = load_data(cfg["data"])
    mc = model_config({**cfg["model"], "kind": "vqccm"}, ds)
    tc = TrainConfig.from_dict(cfg["train"])
    echo("sweep", model=mc, train=tc, data=cfg["data"], grid=grid)
    res = sweep_memory_vq(mc, tc, ds, grid["memory_sizes"], grid["embedding_counts"], grid["runs_per_cell"],
                          jobs=args.jobs)
    print("memory_size," + ",".join(f"k={k}" for k in res.embedding_counts))
    for m, row in zip(res.memory_sizes, res.grid):
        print(f"{m}," + ",".join(f"{v:.4f}" for v in row))
    if args.out:
        res.save_csv(args.out)
    return 0


def cmd_ablation(args) -> int:
    cfg = resolve(args)
    ds = load_data(cfg["data"])
    mc = model_config(cfg["model"], ds)
    tc = TrainConfig.from_dict(cfg["train"])
    echo("ablation", model=mc, train=tc, data=cfg["data"], runs=args.runs)
    task = "synthetic" if cfg["data"].get("synthetic") else str(cfg["data"].get("dir") or cfg["data"].get("manifest"))
    res = ablation(mc, tc, ds, runs=args.runs, jobs=args.jobs, task=task)
    print(res.table())
    if args.out:
        res.save_csv(args.out)
    return 0


# -- parser -------------------------------------------------------------------
def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-dir", help="directory of class subfolders holding .wav files")
    p.add_argument("--manifest", help="dataset manifest JSON written by a previous train run")
    p.add_argument("--synthetic", action="store_true", help="use the synthetic sine dataset")
    p.add_argument("--classes", type=int, help="synthetic classes (default 4)")
    p.add_argument("--per-class", type=int, help="synthetic clips per class (default 125)")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config with model/train/data sections")
    p.add_argument("--seed", type=int)
    p.add_argument("--kind", choices=["coscov", "vqccm", "plain-cnn"])
    p.add_argument("--num-classes", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--optimizer", choices=["adam", "sgd"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="coscov", description="Cosine-filter raw-audio classifiers.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint + report")
    _train_flags(p)
    _data_flags(p)
    p.add_argument("--out", help="output directory for model.ckpt, report.json/.csv and manifest.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print the accuracy of a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--config")
    _data_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("param-count", help="parameter counts for the cosine model and its plain-CNN twin")
    p.add_argument("--config")
    p.add_argument("--kind", choices=["coscov", "vqccm", "plain-cnn"])
    p.add_argument("--num-classes", type=int)
    p.set_defaults(func=cmd_param_count)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ops", nargs="+", default=["all"], help=f"any of {gradcheck.OP_NAMES} or 'all'")
    p.add_argument("--instances", type=int, default=gradcheck.INSTANCES)
    p.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-filters", help="dump generated cosine filter values as CSV")
    p.add_argument("--checkpoint")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--kind", choices=["coscov", "vqccm"])
    p.add_argument("--num-classes", type=int)
    p.add_argument("--layer", help="layer name such as layer1, head or reader2.ccl (default: all)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_filters)

    p = sub.add_parser("search", help="greedy per-layer search over filter lengths, then pool windows")
    p.add_argument("--space", help="JSON with filter_candidates, pool_candidates, runs, backbone")
    p.add_argument("--mock-oracle", help="filter-size accuracy table CSV used instead of training")
    p.add_argument("--pool-oracle", help="pool-size accuracy table CSV used instead of training")
    p.add_argument("--out", help="directory for the filters.csv / pools.csv tables")
    _train_flags(p)
    _data_flags(p)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("sweep", help="memory size x codebook size grid of max accuracies")
    p.add_argument("--grid", help="JSON with memory_sizes, embedding_counts, runs_per_cell")
    p.add_argument("--out", help="CSV path for the grid")
    p.add_argument("--jobs", type=int, default=1)
    _train_flags(p)
    _data_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablation", help="four-way memory/VQ ablation table")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--out", help="CSV path for per-run accuracies")
    p.add_argument("--jobs", type=int, default=1)
    _train_flags(p)
    _data_flags(p)
    p.set_defaults(func=cmd_ablation)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
