"""Command-line entry point: ``covtpp <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data or configuration error, 3 numerical
failure. Errors are reported as a single JSON line on standard error, e.g.
``{"error": "data", "message": "non-increasing times at line 4"}``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .autodiff import NumericalError, ShapeError, finite_difference_check
from .config import ConfigError, RunConfig, load_config
from .data import Dataset, DataError, EventSequence, load_dataset, save_dataset, standardize_covariates
from .fisan import importance_report, read_importance
from .model import TransFeatTPP, batch_loss, init_params, make_batch
from .simulate import SimulationError, generate_dataset
from .train import ablation_study, evaluate, train

log = logging.getLogger("covtpp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    def __init__(self, message: str, usage_shown: bool = False):
        super().__init__(message)
        self.usage_shown = usage_shown


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message, usage_shown=True)


def workers() -> int:
    raw = os.environ.get("COVTPP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"COVTPP_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("COVTPP_THREADS must be >= 1")
    return n


def _path(args, cfg: RunConfig, key: str, required: bool = True, must_exist: bool = False) -> Path | None:
    value = getattr(args, key, None) or cfg.paths.get(key)
    if value is None:
        if required:
            raise UsageError(f"--{key} is required for {args.command}")
        return None
    p = Path(value)
    if must_exist and not p.is_file():
        raise DataError(f"{key} file not found: {p}")
    return p


def _need_seed(args) -> int:
    if args.seed is None:
        raise UsageError(f"--seed is required for {args.command}")
    return args.seed


def _prepared(d: Dataset, model: TransFeatTPP | None = None) -> Dataset:
    """Standardize raw covariates: with the model's statistics if given, else from the train split."""
    if d.standardization is not None:
        return d
    if model is not None and model.standardization is not None:
        std = model.standardization
        return dataclasses.replace(d.map_covariates(lambda x: (x - std.mean) / std.std), standardization=std)
    return standardize_covariates(d)


def _check_dims(d: Dataset, model: TransFeatTPP) -> None:
    if (d.K, d.F) != (model.hp.K, model.hp.F):
        raise DataError(f"dataset has K={d.K}, F={d.F} but model expects K={model.hp.K}, F={model.hp.F}")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def cmd_simulate(args, cfg: RunConfig) -> int:
    seed = _need_seed(args)
    out = _path(args, cfg, "out")
    d = generate_dataset(cfg.sim_config(), seed=seed, workers=workers())
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(d, out)
    truth = out.with_name(out.stem + ".truth.json")
    _write_json(truth, {"ground_truth_importance": d.ground_truth_importance.tolist()})
    print(f"wrote {len(d)} sequences to {out} and ground truth to {truth}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    seed = _need_seed(args)
    data = _path(args, cfg, "data", must_exist=True)
    out = _path(args, cfg, "out", required=False) or _path(args, cfg, "model")
    d = _prepared(load_dataset(data))
    hp = cfg.hyperparams(K=d.K, F=d.F)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = out.with_name(out.stem + ".log.jsonl")
    model, history = train(d, hp, cfg.train_config(seed=seed), log_path=log_path)
    model.save(out)
    print(f"trained {len(history)} epochs; model at {out}, log at {log_path}")
    return EXIT_OK


def _load_model_and_data(args, cfg: RunConfig) -> tuple[TransFeatTPP, Dataset]:
    model_path = _path(args, cfg, "model", must_exist=True)
    data = _path(args, cfg, "data", must_exist=True)
    model = TransFeatTPP.load(model_path)
    d = load_dataset(data)
    _check_dims(d, model)
    return model, _prepared(d, model)


def cmd_evaluate(args, cfg: RunConfig) -> int:
    model, d = _load_model_and_data(args, cfg)
    split = args.split or "test"
    m = evaluate(model, d.split(split))
    result = {"split": split, **m.to_dict()}
    if args.out:
        _write_json(Path(args.out), result)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_rank_features(args, cfg: RunConfig) -> int:
    model, d = _load_model_and_data(args, cfg)
    out = _path(args, cfg, "out")
    split = args.split or "train"
    seqs = d.split(split)
    if not seqs:
        raise DataError(f"split {split!r} is empty")
    rep = importance_report(seqs, model.store, args.feature_names)
    out.parent.mkdir(parents=True, exist_ok=True)
    rep.write(out)
    print(" ".join(f"{j}:{rep.corpus_level[j]:.4f}" for j in rep.ranking()))
    return EXIT_OK


def cmd_ablate(args, cfg: RunConfig) -> int:
    seed = _need_seed(args)
    data = _path(args, cfg, "data", must_exist=True)
    out = _path(args, cfg, "out")
    if not args.ranking:
        raise UsageError("--ranking (an importance file from rank-features) is required for ablate")
    ranking_path = Path(args.ranking)
    if not ranking_path.is_file():
        raise DataError(f"ranking file not found: {ranking_path}")
    ranking, _ = read_importance(ranking_path)
    d = _prepared(load_dataset(data))
    hp = cfg.hyperparams(K=d.K, F=d.F)
    rows = ablation_study(d, hp, cfg.train_config(seed=seed), ranking, workers=workers())
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "removed_feature", "test_accuracy"])
        for r in rows:
            w.writerow([r["k"], "" if r["removed_feature"] is None else r["removed_feature"], repr(r["test_accuracy"])])
    print(f"wrote {len(rows)} ablation points to {out}")
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    seed = _need_seed(args)
    hp = cfg.hyperparams()
    rng = np.random.default_rng(seed)
    store = init_params(hp, seed)
    # move off the structured initial point (zero biases, unit gains)
    store.load_numpy({k: v + rng.normal(scale=0.3, size=v.shape) for k, v in store.numpy().items()})
    seqs = [
        EventSequence(np.cumsum(rng.exponential(size=5)), rng.integers(0, hp.K, 5), rng.normal(size=(5, hp.F)))
        for _ in range(2)
    ]
    batch = make_batch(seqs)
    err = finite_difference_check(
        lambda s: batch_loss(s, hp, batch), store, eps=args.eps, samples_per_tensor=args.samples
    )
    print(f"max relative error {err:.3e} over {store.n_values()} parameters")
    if err > GRADCHECK_TOL:
        raise NumericalError("gradcheck", f"max relative error {err:.3e} exceeds {GRADCHECK_TOL:g}")
    return EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "generate a synthetic dataset and its ground-truth importance"),
    "train": (cmd_train, "train a model; writes the model file and a per-epoch log"),
    "evaluate": (cmd_evaluate, "compute metrics for a dataset split"),
    "rank-features": (cmd_rank_features, "write the corpus-level feature importance ranking"),
    "ablate": (cmd_ablate, "retrain with top-ranked features removed, k = 0..F"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of the full model gradient"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="covtpp", description="Covariate-aware temporal point process toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    parser.commands = {}
    for name, (_, help_text) in COMMANDS.items():
        p = parser.commands[name] = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="INI run-config file or preset name (tiny, default)")
        p.add_argument("--data", help="dataset file (JSON lines)")
        p.add_argument("--model", help="model file")
        p.add_argument("--out", help="output path")
        p.add_argument("--seed", type=int, help="random seed (required for randomized commands)")
        p.add_argument("--split", choices=["train", "val", "test"])
        if name == "rank-features":
            p.add_argument("--feature-names", type=lambda s: s.split(","), help="comma-separated feature names")
        if name == "ablate":
            p.add_argument("--ranking", help="importance file written by rank-features")
        if name == "gradcheck":
            p.add_argument("--eps", type=float, default=1e-4)
            p.add_argument("--samples", type=int, default=100_000, help="coordinates sampled per tensor")
    return parser


def _fail(kind: str, code: int, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = None
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return _fail("usage", EXIT_USAGE, "no subcommand given")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        torch.set_num_threads(workers())
        cfg = load_config(args.config if args.config is not None else ("tiny" if args.command == "gradcheck" else None))
        return COMMANDS[args.command][0](args, cfg)
    except UsageError as e:
        if not e.usage_shown:
            (parser.commands[args.command] if args and args.command else parser).print_usage(sys.stderr)
        return _fail("usage", EXIT_USAGE, str(e))
    except NumericalError as e:
        return _fail("numerical", EXIT_NUMERICAL, str(e))
    except (DataError, SimulationError, ConfigError, ShapeError, OSError) as e:
        return _fail("data", EXIT_DATA, str(e))
    except ValueError as e:
        return _fail("data", EXIT_DATA, str(e))


if __name__ == "__main__":
    sys.exit(main())
