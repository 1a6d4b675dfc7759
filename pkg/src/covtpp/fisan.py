"""Feature-importance self-attention: per-covariate softmax scores and the auxiliary representation."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .autodiff import DTYPE, ParamStore, ShapeError, affine, init_uniform, masked_softmax, relu
from .data import EventSequence
from .encoder import HyperParams


@dataclasses.dataclass
class ImportanceReport:
    per_event: list[np.ndarray]
    sequence_level: list[np.ndarray]
    corpus_level: np.ndarray
    feature_names: list[str] | None = None

    def ranking(self) -> list[int]:
        """Feature indices from most to least important (ties keep index order)."""
        return [int(i) for i in np.argsort(-self.corpus_level, kind="stable")]

    def write(self, path: str | Path) -> None:
        rows = []
        for rank, j in enumerate(self.ranking(), start=1):
            row = {"rank": rank, "feature": j, "score": float(self.corpus_level[j])}
            if self.feature_names:
                row["name"] = self.feature_names[j]
            rows.append(row)
        Path(path).write_text(json.dumps({"importance": rows}, indent=1) + "\n", encoding="utf-8")


def read_importance(path: str | Path) -> tuple[list[int], np.ndarray]:
    """Return (ranking, corpus scores indexed by feature) from a report file."""
    rows = json.loads(Path(path).read_text(encoding="utf-8"))["importance"]
    scores = np.zeros(len(rows))
    for r in rows:
        scores[r["feature"]] = r["score"]
    return [r["feature"] for r in rows], scores


def init_fisan(store: ParamStore, hp: HyperParams, rng: np.random.Generator) -> None:
    F = hp.F
    store.add("W_FI", init_uniform(rng, (hp.H_fi, F, F), F))
    store.add("b_FI", np.zeros((hp.H_fi, F)))
    if hp.F_aux:
        store.add("W_FC3a", init_uniform(rng, (F, hp.F_aux), F))
        store.add("b_3a", np.zeros(hp.F_aux))
        store.add("W_FC3", init_uniform(rng, (hp.F_aux, hp.M), hp.F_aux))
    else:
        store.add("W_FC3", init_uniform(rng, (F, hp.M), F))
    store.add("b_3", np.zeros(hp.M))


def fisan_attend(x: torch.Tensor, store: ParamStore) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(omega, fi)`` for covariates ``x`` of shape ``(..., F)``.

    Each head scores features with a softmax layer; ``fi`` is the head average and
    ``omega`` the head average of ``x`` weighted by each head's scores.
    """
    W, b = store["W_FI"], store["b_FI"]
    if x.shape[-1] != W.shape[-1]:
        raise ShapeError(f"covariate width {x.shape[-1]} != F={W.shape[-1]}")
    logits = torch.einsum("...f,hfg->...hg", x, W) + b
    scores = masked_softmax(logits)
    fi = scores.mean(dim=-2)
    omega = (x.unsqueeze(-2) * scores).mean(dim=-2)
    return omega, fi


def auxiliary_representation(covs: torch.Tensor, store: ParamStore) -> tuple[torch.Tensor, torch.Tensor]:
    """``(H2, fi)`` for covariates ``(..., L, F)``; rows are computed independently."""
    omega, fi = fisan_attend(covs, store)
    z = omega
    if "W_FC3a" in store:
        z = relu(affine(z, store["W_FC3a"], store["b_3a"]))
    return affine(z, store["W_FC3"], store["b_3"]), fi


@torch.no_grad()
def sequence_importance(s: EventSequence, store: ParamStore) -> np.ndarray:
    """Per-event scores ``(L, F)``."""
    _, fi = fisan_attend(torch.as_tensor(s.covariates, dtype=DTYPE), store)
    return fi.numpy()


def importance_report(
    seqs: Sequence[EventSequence], store: ParamStore, feature_names: list[str] | None = None
) -> ImportanceReport:
    if not seqs:
        raise ValueError("empty split")
    per_event = [sequence_importance(s, store) for s in seqs]
    seq_level = [p.mean(axis=0) for p in per_event]
    corpus = np.concatenate(per_event, axis=0).mean(axis=0)
    return ImportanceReport(per_event, seq_level, corpus, feature_names)


def corpus_importance(seqs: Sequence[EventSequence], store: ParamStore) -> np.ndarray:
    """Mean importance over every event of every sequence."""
    return importance_report(seqs, store).corpus_level
