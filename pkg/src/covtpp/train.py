"""Training loop, evaluation and the cumulative feature-ablation study."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .autodiff import NumericalError, clip_grad_norm, forward_backward
from .data import Dataset, EventSequence
from .encoder import HyperParams
from .metrics import Metrics, compute_metrics
from .model import TransFeatTPP

log = logging.getLogger(__name__)

EVAL_CHUNK = 256


@dataclasses.dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1 or self.clip_norm <= 0:
            raise ValueError("training settings must be positive")


@torch.no_grad()
def predict(model: TransFeatTPP, seqs: Sequence[EventSequence]) -> dict[str, np.ndarray]:
    """Per-event outputs, flattened in input order (sequence by sequence)."""
    seqs = list(seqs)
    # evaluate length-sorted chunks to limit padding, then restore input order
    order = np.argsort([len(s) for s in seqs], kind="stable")
    per_seq: list[dict | None] = [None] * len(seqs)
    for start in range(0, len(seqs), EVAL_CHUNK):
        chunk = order[start:start + EVAL_CHUNK]
        out = model.predict([seqs[i] for i in chunk])
        offset = 0
        for i in chunk:
            n = len(seqs[i])
            per_seq[i] = {k: v[offset:offset + n] for k, v in out.items()}
            offset += n
    return {k: np.concatenate([p[k] for p in per_seq]) for k in per_seq[0]}


def evaluate(model: TransFeatTPP, seqs: Sequence[EventSequence]) -> Metrics:
    if not seqs:
        raise ValueError("cannot evaluate an empty split")
    return compute_metrics(predict(model, seqs), model.hp.K)


def joint_loss(model: TransFeatTPP, seqs: Sequence[EventSequence]) -> float:
    """Unweighted per-event time NLL plus type cross-entropy (the early-stopping criterion)."""
    return -evaluate(model, seqs).joint_ll_per_event


def length_buckets(seqs: Sequence[EventSequence], batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Mini-batches of similar-length sequences, in random order.

    Lengths are sorted with a random tie-break so batch composition also varies
    between epochs.
    """
    lengths = np.array([len(s) for s in seqs])
    order = np.lexsort((rng.random(len(seqs)), lengths))
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def train(
    d: Dataset,
    hp: HyperParams,
    cfg: TrainConfig,
    log_path: str | Path | None = None,
) -> tuple[TransFeatTPP, list[dict]]:
    """Adam on the weighted total loss; returns the best-validation model and the epoch log.

    With an empty validation split every epoch counts as an improvement and the
    final parameters are returned.
    """
    train_seqs = d.split("train")
    val_seqs = d.split("val")
    if not train_seqs:
        raise ValueError("train split is empty")
    torch.manual_seed(cfg.seed)
    model = TransFeatTPP.initialize(hp, cfg.seed, train_seqs, d.standardization)
    opt = torch.optim.Adam(model.store.tensors(), lr=cfg.lr)
    dropout = torch.nn.Dropout(hp.dropout) if hp.dropout > 0 else None
    rng = np.random.default_rng(cfg.seed)

    best_val = math.inf
    best_params = model.store.numpy()
    bad_epochs = 0
    history: list[dict] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            losses = []
            for b, idx in enumerate(length_buckets(train_seqs, cfg.batch_size, rng)):
                batch = model.batch([train_seqs[i] for i in idx])
                try:
                    loss = forward_backward(lambda s: model.loss(batch, dropout), model.store)
                except NumericalError as e:
                    raise NumericalError(e.op, f"training diverged at epoch {epoch}, batch {b}: {e}") from None
                clip_grad_norm(model.store.tensors(), cfg.clip_norm)
                opt.step()
                losses.append(loss)
            rec = {"epoch": epoch, "train_loss": float(np.mean(losses))}
            if val_seqs:
                m = evaluate(model, val_seqs)
                val = -m.joint_ll_per_event
                if not math.isfinite(val):
                    raise NumericalError("validation", f"non-finite validation loss at epoch {epoch}")
                rec.update(val_loss=val, val_accuracy=m.accuracy)
            else:
                val = -epoch
                rec.update(val_loss=None, val_accuracy=None)
            history.append(rec)
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
                log_fh.flush()
            log.info("epoch %d: %s", epoch, rec)
            if val < best_val:
                best_val = val
                best_params = model.store.numpy()
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.patience:
                    break
    finally:
        if log_fh:
            log_fh.close()
    model.store.load_numpy(best_params)
    return model, history


def zero_features(d: Dataset, features: Sequence[int]) -> Dataset:
    """Set the given covariate columns to 0 (the training mean after standardization)."""
    idx = list(features)

    def fn(x: np.ndarray) -> np.ndarray:
        x = x.copy()
        x[:, idx] = 0.0
        return x

    return d.map_covariates(fn) if idx else d


def _ablation_point(args) -> dict:
    d, hp, cfg, ranking, k = args
    removed = list(ranking[:k])
    run_cfg = dataclasses.replace(cfg, seed=cfg.seed + k)
    model, _ = train(zero_features(d, removed), hp, run_cfg)
    acc = evaluate(model, zero_features(d, removed).split("test")).accuracy
    return {"k": k, "removed_feature": ranking[k - 1] if k else None, "test_accuracy": acc}


def ablation_study(
    d: Dataset,
    hp: HyperParams,
    cfg: TrainConfig,
    ranking: Sequence[int],
    ks: Sequence[int] | None = None,
    workers: int = 1,
) -> list[dict]:
    """Retrain with the top-``k`` ranked covariates zeroed, for each ``k`` (default ``0..F``).

    Run ``k`` uses seed ``cfg.seed + k``. Returns rows ``{k, removed_feature, test_accuracy}``
    where ``removed_feature`` is the feature newly removed at that step.
    """
    ranking = [int(r) for r in ranking]
    if sorted(ranking) != list(range(d.F)):
        raise ValueError("ranking must be a permutation of the feature indices")
    ks = list(range(d.F + 1)) if ks is None else [int(k) for k in ks]
    jobs = [(d, hp, cfg, ranking, k) for k in ks]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_ablation_point, jobs))
    return [_ablation_point(j) for j in jobs]
