"""Log-normal mixture time decoder, type head and the uncertainty-weighted loss."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import torch

from .autodiff import DTYPE, ParamStore, ShapeError, affine, init_uniform, masked_softmax

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclasses.dataclass
class MixtureParams:
    """Mixture over ``log(tau) = a * z + b`` with ``z`` a Gaussian mixture.

    ``w``, ``mu`` and ``s`` share a trailing component axis of size C and may carry
    leading batch axes; ``a`` and ``b`` are scalars.
    """

    w: torch.Tensor
    mu: torch.Tensor
    s: torch.Tensor
    a: torch.Tensor
    b: torch.Tensor

    def __post_init__(self):
        for f in ("w", "mu", "s", "a", "b"):
            setattr(self, f, torch.as_tensor(getattr(self, f), dtype=DTYPE))

    @property
    def log_w(self) -> torch.Tensor:
        return torch.log(self.w)


def init_decoder(store: ParamStore, K: int, M: int, C: int, rng: np.random.Generator) -> None:
    store.add("h0", np.zeros(M))
    for k in ("w", "mu", "s"):
        store.add(f"V_{k}", init_uniform(rng, (M, C), M))
        store.add(f"b_{k}", np.zeros(C))
    store.add("log_a", np.zeros(()))
    store.add("b", np.zeros(()))
    store.add("W_type", init_uniform(rng, (2 * M, K), 2 * M))
    store.add("b_type", np.zeros(K))
    store.add("rho", np.zeros(2))


def mixture_params(h: torch.Tensor, store: ParamStore) -> MixtureParams:
    if not bool(torch.isfinite(h).all()):
        raise ValueError("non-finite hidden state")
    w = masked_softmax(affine(h, store["V_w"], store["b_w"]))
    mu = affine(h, store["V_mu"], store["b_mu"])
    s = torch.exp(affine(h, store["V_s"], store["b_s"]))
    return MixtureParams(w, mu, s, torch.exp(store["log_a"]), store["b"])


def _log_w(mp: MixtureParams, log_w: torch.Tensor | None) -> torch.Tensor:
    return torch.log(mp.w) if log_w is None else log_w


def lognormal_mixture_nll(
    tau: torch.Tensor | float, mp: MixtureParams, log_w: torch.Tensor | None = None
) -> torch.Tensor:
    """``-log p(tau)`` including the ``1 / (tau * a)`` change of variables.

    ``tau`` broadcasts against the leading axes of ``mp``. Passing ``log_w`` avoids
    the log of an underflowed weight.
    """
    tau = torch.as_tensor(tau, dtype=DTYPE)
    if bool((tau <= 0).any()):
        raise ValueError("tau must be positive")
    log_tau = torch.log(tau)
    z = (log_tau - mp.b) / mp.a
    log_comp = -((z.unsqueeze(-1) - mp.mu) ** 2) / (2.0 * mp.s**2) - torch.log(mp.s) - _HALF_LOG_2PI
    log_f = torch.logsumexp(_log_w(mp, log_w) + log_comp, dim=-1)
    return -(log_f - log_tau - torch.log(mp.a))


def lognormal_mixture_logpdf(tau, mp: MixtureParams) -> torch.Tensor:
    return -lognormal_mixture_nll(tau, mp)


def expected_time(mp: MixtureParams) -> torch.Tensor:
    """Closed-form mean ``sum_k w_k exp(a mu_k + b + (a s_k)^2 / 2)``."""
    return (mp.w * torch.exp(mp.a * mp.mu + mp.b + 0.5 * (mp.a * mp.s) ** 2)).sum(dim=-1)


def sample(mp: MixtureParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` inter-event times from an unbatched mixture."""
    w = mp.w.detach().numpy()
    comp = rng.choice(len(w), size=n, p=w / w.sum())
    z = rng.normal(mp.mu.detach().numpy()[comp], mp.s.detach().numpy()[comp])
    return np.exp(float(mp.a) * z + float(mp.b))


def type_logits(h1: torch.Tensor, h2: torch.Tensor, store: ParamStore) -> torch.Tensor:
    if h1.shape != h2.shape:
        raise ShapeError(f"type head inputs differ in shape: {tuple(h1.shape)} vs {tuple(h2.shape)}")
    return affine(torch.cat([h1, h2], dim=-1), store["W_type"], store["b_type"])


def type_head(h1: torch.Tensor, h2: torch.Tensor, store: ParamStore) -> torch.Tensor:
    """Next-type probabilities from the concatenated representations."""
    return masked_softmax(type_logits(h1, h2, store))


def total_loss(L1: torch.Tensor, L2: torch.Tensor, rho: torch.Tensor) -> torch.Tensor:
    """``exp(-rho_1) L1 + rho_1 + exp(-rho_2) L2 + rho_2``."""
    return torch.exp(-rho[0]) * L1 + rho[0] + torch.exp(-rho[1]) * L2 + rho[1]
