"""Dependence module: triplet embedding and causal multi-head self-attention."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import torch

from .autodiff import DTYPE, ParamStore, ShapeError, affine, init_uniform, layer_norm, masked_softmax, relu
from .data import EventSequence


@dataclasses.dataclass
class HyperParams:
    """Model dimensions and architecture switches.

    ``F_aux`` is the width of the hidden dense layer between the Fi-SAN output and
    the auxiliary representation (0 connects them directly; ``None`` means ``M``).
    ``residual=False`` drops the residual connections and layer norms around the
    attention and feed-forward sub-layers.
    """

    K: int = 2
    F: int = 10
    M: int = 64
    M_K: int = 64
    M_V: int = 32
    H: int = 2
    H_fi: int = 2
    C: int = 16
    F_aux: int | None = None
    n_layers: int = 1
    residual: bool = True
    dropout: float = 0.0
    rescale_time: bool = False

    def __post_init__(self):
        if self.F_aux is None:
            self.F_aux = self.M
        for name in ("K", "M", "M_K", "M_V", "H", "H_fi", "C", "n_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.F < 1:
            raise ValueError("F must be positive")
        if self.F_aux < 0:
            raise ValueError("F_aux must be >= 0")
        if self.M % 2:
            raise ValueError("M must be even")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def temporal_encode(t, M: int) -> np.ndarray:
    """Sinusoidal encoding; even 0-based slots are cosines, odd ones sines."""
    if M < 2:
        raise ValueError("M must be >= 2")
    t = np.asarray(t, dtype=np.float64)
    j = np.arange(1, M + 1)
    expo = np.where(j % 2 == 1, j - 1, j) / M
    arg = t[..., None] / np.power(10000.0, expo)
    return np.where(j % 2 == 1, np.cos(arg), np.sin(arg))


def _temporal_encode_torch(t: torch.Tensor, M: int) -> torch.Tensor:
    j = torch.arange(1, M + 1, dtype=DTYPE)
    odd = (j % 2) == 1
    expo = torch.where(odd, j - 1, j) / M
    arg = t.unsqueeze(-1) / torch.pow(torch.tensor(10000.0, dtype=DTYPE), expo)
    return torch.where(odd, torch.cos(arg), torch.sin(arg))


def init_encoder(store: ParamStore, hp: HyperParams, rng: np.random.Generator) -> None:
    M = hp.M
    store.add("U", init_uniform(rng, (hp.K, M), hp.K))
    store.add("W_cov", init_uniform(rng, (hp.F, M), hp.F))
    for l in range(hp.n_layers):
        p = f"enc{l}."
        store.add(p + "W_Q", init_uniform(rng, (hp.H, M, hp.M_K), M))
        store.add(p + "W_K", init_uniform(rng, (hp.H, M, hp.M_K), M))
        store.add(p + "W_V", init_uniform(rng, (hp.H, M, hp.M_V), M))
        store.add(p + "W_O", init_uniform(rng, (hp.H * hp.M_V, M), hp.H * hp.M_V))
        store.add(p + "W_FC1", init_uniform(rng, (M, M), M))
        store.add(p + "b_1", np.zeros(M))
        store.add(p + "W_FC2", init_uniform(rng, (M, M), M))
        store.add(p + "b_2", np.zeros(M))
        if hp.residual:
            for k in ("ln1", "ln2"):
                store.add(p + k + "_g", np.ones(M))
                store.add(p + k + "_b", np.zeros(M))


def embed(
    times: torch.Tensor, types: torch.Tensor, covs: torch.Tensor, store: ParamStore, hp: HyperParams
) -> torch.Tensor:
    """``X = Z + E + F`` for padded ``(B, L)`` inputs."""
    if int(types.max()) >= hp.K:
        raise ShapeError(f"type index {int(types.max())} >= K={hp.K}")
    Z = _temporal_encode_torch(times, hp.M)
    E = store["U"][types]
    Fx = affine(covs, store["W_cov"])
    return Z + E + Fx


def embed_sequence(s: EventSequence, store: ParamStore, hp: HyperParams) -> torch.Tensor:
    """Embedding of one sequence, shape ``(L, M)``."""
    X = embed(
        torch.as_tensor(s.times, dtype=DTYPE)[None],
        torch.as_tensor(s.types)[None],
        torch.as_tensor(s.covariates, dtype=DTYPE)[None],
        store,
        hp,
    )
    return X[0]


def attention_mask(valid: torch.Tensor) -> torch.Tensor:
    """``(B, 1, L, L)`` boolean: key ``j`` visible to query ``i`` iff ``j <= i`` and ``j`` is real."""
    L = valid.shape[-1]
    causal = torch.tril(torch.ones(L, L, dtype=torch.bool))
    return causal[None, None] & valid[:, None, None, :]


def self_attention(
    X: torch.Tensor,
    valid: torch.Tensor,
    store: ParamStore,
    hp: HyperParams,
    layer: int = 0,
    dropout: torch.nn.Module | None = None,
    weights_out: list | None = None,
) -> torch.Tensor:
    """One encoder layer on ``(B, L, M)``; returns the hidden states ``(B, L, M)``."""
    if X.dim() != 3 or X.shape[-1] != hp.M:
        raise ShapeError(f"self_attention expects (B, L, {hp.M}), got {tuple(X.shape)}")
    p = f"enc{layer}."
    Q = torch.einsum("blm,hmk->bhlk", X, store[p + "W_Q"])
    Kx = torch.einsum("blm,hmk->bhlk", X, store[p + "W_K"])
    V = torch.einsum("blm,hmv->bhlv", X, store[p + "W_V"])
    scores = Q @ Kx.transpose(-1, -2) / math.sqrt(hp.M_K)
    A = masked_softmax(scores, attention_mask(valid).expand_as(scores))
    if weights_out is not None:
        weights_out.append(A)
    heads = A @ V
    B, H, L, Mv = heads.shape
    S = affine(heads.permute(0, 2, 1, 3).reshape(B, L, H * Mv), store[p + "W_O"])
    if dropout is not None:
        S = dropout(S)
    if hp.residual:
        S = layer_norm(X + S, store[p + "ln1_g"], store[p + "ln1_b"])
    hidden = affine(relu(affine(S, store[p + "W_FC1"], store[p + "b_1"])), store[p + "W_FC2"], store[p + "b_2"])
    if dropout is not None:
        hidden = dropout(hidden)
    if hp.residual:
        hidden = layer_norm(S + hidden, store[p + "ln2_g"], store[p + "ln2_b"])
    return hidden


def encode(
    X: torch.Tensor,
    valid: torch.Tensor,
    store: ParamStore,
    hp: HyperParams,
    dropout: torch.nn.Module | None = None,
) -> torch.Tensor:
    H1 = X
    for layer in range(hp.n_layers):
        H1 = self_attention(H1, valid, store, hp, layer, dropout)
    return H1
