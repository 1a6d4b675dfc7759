"""Full model: padding, forward pass and losses over mini-batches.

Position ``i`` of a sequence predicts event ``i + 1`` (0-based ``i = 0..L-1``): the
hidden state is the learned initial state ``h0`` for ``i = 0`` and the encoder
output of event ``i`` afterwards; the auxiliary row is zero at ``i = 0``. The first
inter-event time is measured from time 0.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .autodiff import DTYPE, ParamStore, load_params, save_params
from .data import EventSequence, Standardization
from .decoder import MixtureParams, expected_time, init_decoder, lognormal_mixture_nll, total_loss, type_logits
from .encoder import HyperParams, embed, encode, init_encoder
from .fisan import auxiliary_representation, init_fisan


@dataclasses.dataclass
class Batch:
    times: torch.Tensor
    types: torch.Tensor
    covs: torch.Tensor
    valid: torch.Tensor
    tau: torch.Tensor
    time_valid: torch.Tensor

    @property
    def n_events(self) -> int:
        return int(self.valid.sum())


def make_batch(seqs: Sequence[EventSequence], time_scale: float = 1.0) -> Batch:
    """Pad with time 0, type 0 and zero covariates; masks mark the real events."""
    B = len(seqs)
    L = max(len(s) for s in seqs)
    F = seqs[0].F
    times = np.zeros((B, L))
    types = np.zeros((B, L), dtype=np.int64)
    covs = np.zeros((B, L, F))
    valid = np.zeros((B, L), dtype=bool)
    tau = np.ones((B, L))
    for i, s in enumerate(seqs):
        n = len(s)
        t = s.times / time_scale
        times[i, :n] = t
        types[i, :n] = s.types
        covs[i, :n] = s.covariates
        valid[i, :n] = True
        tau[i, :n] = np.diff(t, prepend=0.0)
    # an event at exactly t=0 has no positive first gap to score
    time_valid = valid & (tau > 0)
    tau[~time_valid] = 1.0
    return Batch(
        torch.from_numpy(times),
        torch.from_numpy(types),
        torch.from_numpy(covs),
        torch.from_numpy(valid),
        torch.from_numpy(tau),
        torch.from_numpy(time_valid),
    )


def init_params(hp: HyperParams, seed: int) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    init_encoder(store, hp, rng)
    init_fisan(store, hp, rng)
    init_decoder(store, hp.K, hp.M, hp.C, rng)
    return store


def _shift(x: torch.Tensor, first: torch.Tensor) -> torch.Tensor:
    """Prepend ``first`` along the sequence axis and drop the last position."""
    B = x.shape[0]
    return torch.cat([first.expand(B, 1, x.shape[-1]), x[:, :-1]], dim=1)


def forward(
    store: ParamStore, hp: HyperParams, batch: Batch, dropout: torch.nn.Module | None = None
) -> dict[str, torch.Tensor]:
    X = embed(batch.times, batch.types, batch.covs, store, hp)
    H1 = encode(X, batch.valid, store, hp, dropout)
    H2, fi = auxiliary_representation(batch.covs, store)
    hist = _shift(H1, store["h0"])
    aux = _shift(H2, torch.zeros(hp.M, dtype=DTYPE))
    log_w = torch.log_softmax(hist @ store["V_w"] + store["b_w"], dim=-1)
    mp = MixtureParams(
        torch.exp(log_w),
        hist @ store["V_mu"] + store["b_mu"],
        torch.exp(hist @ store["V_s"] + store["b_s"]),
        torch.exp(store["log_a"]),
        store["b"],
    )
    nll = lognormal_mixture_nll(batch.tau, mp, log_w=log_w)
    logits = type_logits(hist, aux, store)
    ce = -torch.log_softmax(logits, dim=-1).gather(-1, batch.types.unsqueeze(-1)).squeeze(-1)
    return {
        "embedding": X,
        "encoder": H1,
        "fisan": H2,
        "fi": fi,
        "mixture_w": mp.w,
        "mixture_mu": mp.mu,
        "mixture_s": mp.s,
        "time_nll": nll,
        "type_logits": logits,
        "type_ce": ce,
        "expected_tau": expected_time(mp),
    }


def batch_loss(
    store: ParamStore, hp: HyperParams, batch: Batch, dropout: torch.nn.Module | None = None
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Weighted total of the per-event mean time NLL and type cross-entropy."""
    out = forward(store, hp, batch, dropout)
    tv = batch.time_valid.to(DTYPE)
    v = batch.valid.to(DTYPE)
    L1 = (out["time_nll"] * tv).sum() / tv.sum().clamp(min=1.0)
    L2 = (out["type_ce"] * v).sum() / v.sum()
    total = total_loss(L1, L2, store["rho"])
    parts = {k: out[k] for k in ("embedding", "encoder", "fisan", "mixture_w", "mixture_mu", "mixture_s")}
    parts.update(time_nll=L1, type_ce=L2, total_loss=total)
    return total, parts


def log_interval_stats(seqs: Sequence[EventSequence], time_scale: float = 1.0) -> tuple[float, float]:
    gaps = np.concatenate([np.diff(s.times / time_scale, prepend=0.0) for s in seqs])
    logs = np.log(gaps[gaps > 0])
    if len(logs) == 0:
        return 0.0, 1.0
    sd = float(logs.std())
    return float(logs.mean()), sd if sd > 1e-8 else 1.0


class TransFeatTPP:
    """Parameters plus the data-dependent constants needed at inference time."""

    def __init__(
        self,
        hp: HyperParams,
        store: ParamStore,
        time_scale: float = 1.0,
        standardization: Standardization | None = None,
    ):
        self.hp = hp
        self.store = store
        self.time_scale = time_scale
        self.standardization = standardization

    @classmethod
    def initialize(
        cls,
        hp: HyperParams,
        seed: int,
        train_seqs: Sequence[EventSequence] | None = None,
        standardization: Standardization | None = None,
    ) -> "TransFeatTPP":
        store = init_params(hp, seed)
        time_scale = 1.0
        if train_seqs:
            if hp.rescale_time:
                gaps = np.concatenate([np.diff(s.times, prepend=0.0) for s in train_seqs])
                time_scale = float(gaps.mean()) or 1.0
            b, a = log_interval_stats(train_seqs, time_scale)
            store.load_numpy({"b": np.array(b), "log_a": np.array(math.log(a))})
        return cls(hp, store, time_scale, standardization)

    def batch(self, seqs: Sequence[EventSequence]) -> Batch:
        return make_batch(seqs, self.time_scale)

    def loss(self, batch: Batch, dropout=None):
        return batch_loss(self.store, self.hp, batch, dropout)

    @torch.no_grad()
    def predict(self, seqs: Sequence[EventSequence]) -> dict[str, np.ndarray]:
        """Flattened per-position outputs over all real events, in raw time units."""
        batch = self.batch(seqs)
        out = forward(self.store, self.hp, batch)
        v = batch.valid.numpy()
        tv = batch.time_valid.numpy()[v]
        log_s = math.log(self.time_scale)
        return {
            "tau_true": batch.tau.numpy()[v] * self.time_scale,
            "tau_pred": out["expected_tau"].numpy()[v] * self.time_scale,
            "time_nll": out["time_nll"].numpy()[v] + log_s,
            "time_valid": tv,
            "type_true": batch.types.numpy()[v],
            "type_prob": torch.softmax(out["type_logits"], -1).numpy()[v],
            "type_ce": out["type_ce"].numpy()[v],
        }

    def save(self, path: str | Path) -> None:
        extra = {"time_scale": self.time_scale}
        if self.standardization is not None:
            extra["standardization"] = self.standardization.to_json()
        save_params(self.store, path, self.hp.to_dict(), extra)

    @classmethod
    def load(cls, path: str | Path) -> "TransFeatTPP":
        store, hyper, extra = load_params(path)
        std = extra.get("standardization")
        return cls(
            HyperParams(**hyper),
            store,
            float(extra.get("time_scale", 1.0)),
            Standardization.from_json(std) if std else None,
        )
