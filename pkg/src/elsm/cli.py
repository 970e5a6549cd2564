"""Command-line entry point: ``elsm <subcommand> ...``.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or config error.
Log verbosity comes from the ``ELSM_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import data_io, evaluation
from .generator import generate_network
from .model_core import HyperParams
from .trainer import (CheckpointError, CheckpointMismatchError, NonFiniteLossError, TrainConfig,
                      Trainer)

log = logging.getLogger("elsm")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


def _read_config(path, what: str) -> dict:
    if path is None:
        raise ConfigError(f"--config is required for {what}")
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return raw


def _train_config(raw: dict, variant: str | None = None) -> TrainConfig:
    if variant is not None:
        raw = dict(raw, variant=variant)
    try:
        return TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid training config: {exc}") from exc


def _write_manifest(out: Path, args, config, seed, inputs, outputs, started, extra=None):
    manifest = {
        "subcommand": args.command,
        "argv": args.argv,
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "version": __version__,
        "started_utc": datetime.fromtimestamp(started, tz=timezone.utc).isoformat(),
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    if extra:
        manifest.update(extra)
    data_io.save_json(manifest, out / "manifest.json")


def cmd_generate(args) -> int:
    raw = _read_config(args.config, "generate")
    extras = {k: raw.pop(k) for k in ("weighted", "poisson_w", "poisson_b") if k in raw}
    try:
        params = HyperParams.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid generator config: {exc}") from exc
    started = time.time()
    out = generate_network(params, args.seed, **extras)
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    data_io.save_network(out.network, dest / "network.net")
    data_io.save_ground_truth(out.trajectory, dest / "truth.json")
    _write_manifest(dest, args, {**params.to_dict(), **extras}, args.seed, {"config": args.config},
                    ["network.net", "truth.json"], started)
    return EXIT_OK


def cmd_train(args) -> int:
    network = data_io.load_network(args.data)
    started = time.time()
    if args.resume:
        expect = None
        if args.config:
            expect = _train_config(_read_config(args.config, "train"), args.variant)
        trainer = Trainer.from_checkpoint(args.resume, network, expect=expect)
        if expect is not None:
            trainer.config.epochs = expect.epochs
    else:
        trainer = Trainer(network, _train_config(_read_config(args.config, "train"),
                                                 args.variant))
    config = trainer.config
    resumed_from = trainer.epoch
    trainer.run()
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    trainer.save_checkpoint(dest / "checkpoint.ckpt")
    data_io.save_embeddings(trainer.model.embeddings(network), dest / "embeddings.json",
                            config.variant)
    data_io.write_training_log(trainer.log, dest / "training_log.csv")
    _write_manifest(dest, args, config.to_dict(), config.seed,
                    {"data": args.data, "config": args.config, "resume": args.resume},
                    ["checkpoint.ckpt", "embeddings.json", "training_log.csv"], started,
                    {"epochs_completed": trainer.epoch, "resumed_at_epoch": resumed_from})
    return EXIT_OK


def cmd_cluster(args) -> int:
    if not 1 <= args.k_min <= args.k_max:
        raise ConfigError("need 1 <= --k-min <= --k-max")
    emb = data_io.load_embeddings(args.embeddings)
    network = data_io.load_network(args.graph)
    Z = emb["nu"]
    if Z.shape[:2] != (network.T, network.n):
        raise ConfigError(f"embeddings shape {Z.shape[:2]} does not match graph "
                          f"({network.T}, {network.n})")
    started = time.time()
    result = evaluation.community_pipeline(Z, network, (args.k_min, args.k_max), seed=args.seed)
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    data_io.write_community_csv(result, dest / "communities.csv")
    data_io.save_json(result.to_dict(), dest / "communities.json")
    _write_manifest(dest, args, {"k_min": args.k_min, "k_max": args.k_max}, args.seed,
                    {"embeddings": args.embeddings, "graph": args.graph},
                    ["communities.csv", "communities.json"], started)
    return EXIT_OK


def cmd_linkpred(args) -> int:
    network = data_io.load_network(args.data)
    config = None
    if args.config:
        config = _train_config(_read_config(args.config, "linkpred"))
    baselines = [b.strip() for b in args.baselines.split(",") if b.strip()]
    unknown = set(baselines) - {"bas"}
    if unknown:
        raise ConfigError(f"unknown baselines: {sorted(unknown)}")
    if network.T < 3:
        raise ConfigError("link prediction needs at least 3 snapshots")
    started = time.time()

    def fit(history):
        trainer = Trainer(history, config)
        trainer.run()
        return trainer.model

    res = evaluation.rolling_link_prediction(network, fit if config else None, last=args.last)
    rows = []
    for idx, tgt in enumerate(res.targets):
        if config:
            r = res.model[idx]
            rows.append([tgt, config.variant, r.auc, r.f1, r.threshold])
        if "bas" in baselines:
            r = res.baseline[idx]
            rows.append([tgt, "bas", r.auc, r.f1, r.threshold])
    summary = {"targets": res.targets}
    if config:
        rows.append(["average", config.variant, res.avg_auc, res.avg_f1, ""])
        summary[config.variant] = {"auc": res.avg_auc, "f1": res.avg_f1}
    if "bas" in baselines:
        rows.append(["average", "bas", res.baseline_avg_auc, res.baseline_avg_f1, ""])
        summary["bas"] = {"auc": res.baseline_avg_auc, "f1": res.baseline_avg_f1}
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    data_io.write_csv(dest / "linkpred.csv", ["target", "method", "auc", "f1", "threshold"], rows)
    data_io.save_json(summary, dest / "linkpred.json")
    _write_manifest(dest, args, config.to_dict() if config else None,
                    config.seed if config else None,
                    {"data": args.data, "config": args.config},
                    ["linkpred.csv", "linkpred.json"], started,
                    {"protocol": {"history": [[0, t - 1] for t in res.targets],
                                  "targets": res.targets}})
    return EXIT_OK


def _load_matrix(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".json":
        raw = data_io.load_json(path)
        if isinstance(raw, dict):
            raw = raw.get("probabilities", raw.get("matrix"))
        return np.asarray(raw, dtype=np.float64)
    if path.suffix == ".net":
        return data_io.load_network(path).snapshots[-1]
    return np.loadtxt(path, dtype=np.float64, ndmin=2)


def cmd_eval_metrics(args) -> int:
    pred, truth = _load_matrix(args.pred), _load_matrix(args.truth)
    if pred.shape != truth.shape or pred.ndim != 2 or pred.shape[0] != pred.shape[1]:
        raise ConfigError(f"prediction {pred.shape} and truth {truth.shape} must be equal "
                          "square matrices")
    if not (np.allclose(pred, pred.T) and np.array_equal(truth, truth.T)):
        raise ConfigError("prediction and truth matrices must be symmetric")
    result = evaluation.LinkPredResult.score(pred, truth)
    metrics = {"auc": result.auc, "f1": result.f1, "threshold": result.threshold}
    text = json.dumps(metrics, sort_keys=True)
    if args.out:
        dest = Path(args.out)
        dest.mkdir(parents=True, exist_ok=True)
        data_io.save_json(metrics, dest / "metrics.json")
        _write_manifest(dest, args, None, None, {"pred": args.pred, "truth": args.truth},
                        ["metrics.json"], time.time())
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elsm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"elsm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a synthetic dynamic network")
    p.add_argument("--config", help="generator hyperparameters (JSON)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit the inference network")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", choices=["ielsm", "elsm"])
    p.add_argument("--config", help="training config (JSON)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cluster", help="community detection on embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("linkpred", help="rolling link prediction")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="training config; omit for a baseline-only run")
    p.add_argument("--baselines", default="bas")
    p.add_argument("--last", type=int, help="score only the final N targets")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_linkpred)

    p = sub.add_parser("eval-metrics", help="AUC and max-F1 of a score matrix")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_metrics)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("ELSM_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    args.argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CheckpointError, NonFiniteLossError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
