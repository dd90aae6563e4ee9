"""Command-line entry point: ``deepcat {train,eval,sweep,gradcheck,export-embeddings}``.

Exit codes: 0 success, 1 configuration/format error, 2 runtime/data error,
3 verification failure (gradcheck).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import gradcheck
from ._io import atomic_write
from .config import ExperimentConfig, config_from_flat, parse_config
from .container import load_model, save_model
from .errors import ConfigurationError, DeepCatError, FormatError
from .eval import (
    accuracy,
    centers_sweep,
    export_embeddings,
    format_summary,
    human_fit,
    metrics_json,
    summarize_sweep,
    train_run,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3

logger = logging.getLogger("deepcat")


def load_dataset(spec) -> data_mod.LabeledDataset:
    if spec.source == "blobs":
        ds = data_mod.gen_blobs(spec.classes, spec.per_class, spec.dim, spec.separation, spec.seed)
    elif spec.source == "multimodal":
        ds = data_mod.gen_multimodal(spec.classes, spec.modes, spec.per_mode, spec.dim, spec.seed, spacing=spec.spacing)
    elif spec.source == "idx":
        ds = data_mod.load_idx(spec.images, spec.labels)
    else:
        ds = data_mod.load_cifar10_binary(spec.paths)
    if spec.limit is not None:
        ds = ds.subset(np.arange(min(spec.limit, len(ds))))
    return ds


def load_splits(cfg: ExperimentConfig):
    ds = load_dataset(cfg.data)
    return data_mod.split(ds, cfg.data.train_fraction, cfg.data.split_seed)


def _load_human(path, n_classes):
    return None if path is None else data_mod.load_human_csv(path, n_classes)


def _prepare(args) -> ExperimentConfig:
    cfg = parse_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, output=replace(cfg.output, dir=args.out))
    if getattr(args, "human", None) is not None:
        cfg = replace(cfg, eval=replace(cfg.eval, human=args.human))
    return cfg


def round_to_float32(net, head):
    """Snap parameters to the values a saved model will hold."""
    for p in net.parameters() + head.parameters():
        p.data = p.data.astype(np.float32).astype(np.float64)


def cmd_train(args) -> int:
    cfg = _prepare(args)
    train, validation = load_splits(cfg)
    human = _load_human(cfg.eval.human, train.n_classes)
    net, head, metrics = train_run(cfg.model, train, validation, cfg.train, None, cfg.output.run_id)
    round_to_float32(net, head)
    metrics.validation_accuracy = accuracy(net, head, validation)
    if human is not None:
        metrics.human_crossentropy = human_fit(net, head, validation, human)

    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / f"{cfg.output.run_id}.dcm"
    save_model(model_path, net, head, cfg.to_flat())
    atomic_write(out / f"{cfg.output.run_id}.metrics.json", metrics_json([metrics]))
    print(json.dumps({"model": str(model_path), "validation_accuracy": metrics.validation_accuracy,
                      "human_crossentropy": metrics.human_crossentropy}))
    return EXIT_OK


def _model_and_config(args):
    container = load_model(args.model)
    net, head = container.build()
    if getattr(args, "config", None):
        cfg = parse_config(args.config)
    else:
        try:
            cfg = config_from_flat(container.config)
        except ConfigurationError as exc:
            raise FormatError(f"config snapshot in model is invalid: {exc}") from None
    return net, head, cfg


def cmd_eval(args) -> int:
    net, head, cfg = _model_and_config(args)
    _, validation = load_splits(cfg)
    report = {"n": len(validation), "accuracy": accuracy(net, head, validation)}
    human_path = args.human or cfg.eval.human
    if human_path is not None:
        report["human_crossentropy"] = human_fit(net, head, validation, _load_human(human_path, head.n_classes))
    print(json.dumps(report))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _prepare(args)
    if not cfg.eval.sweep:
        raise ConfigurationError("sweep needs a non-empty eval.sweep grid")
    train, validation = load_splits(cfg)
    human = _load_human(cfg.eval.human, train.n_classes)
    metrics = centers_sweep(
        cfg.model,
        train,
        human=human,
        k_values=cfg.eval.sweep,
        replications=cfg.eval.replications,
        base_seed=cfg.train.seed,
        config=cfg.train,
        validation=validation,
        jobs=args.jobs,
    )
    summary = format_summary(summarize_sweep(metrics))
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / f"{cfg.output.run_id}.sweep.json", metrics_json(metrics))
    atomic_write(out / f"{cfg.output.run_id}.sweep.txt", summary)
    sys.stdout.write(summary)
    failed = sum(m.error is not None for m in metrics)
    return EXIT_RUNTIME if failed == len(metrics) else EXIT_OK


def cmd_gradcheck(args) -> int:
    return EXIT_OK if gradcheck.main() else EXIT_VERIFY


def cmd_export_embeddings(args) -> int:
    net, head, cfg = _model_and_config(args)
    _, validation = load_splits(cfg)
    seed = cfg.train.seed if args.seed is None else args.seed
    out = Path(args.out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{cfg.output.run_id}.embeddings.csv"
    export_embeddings(net, head, validation, min(cfg.eval.embed_sample, len(validation)), seed, path)
    print(str(path))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepcat", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model and save it with its metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--human")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model on its validation split")
    p.add_argument("--model", required=True)
    p.add_argument("--config", help="take the data section from this file instead of the model's snapshot")
    p.add_argument("--human")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="number-of-centers sweep over eval.sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--human")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and head")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-embeddings", help="write validation features and centers as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DeepCatError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
