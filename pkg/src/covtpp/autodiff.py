"""Differentiable primitives, named parameter storage and gradient checking.

Reverse-mode accumulation is delegated to ``torch.autograd`` in float64; the
finite-difference harness is plain NumPy/Python so it stays independent of it.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np
import torch

DTYPE = torch.float64
FORMAT_VERSION = 1


class NumericalError(ArithmeticError):
    """Non-finite value; ``op`` names the computation that produced it."""

    def __init__(self, op: str, message: str | None = None):
        self.op = op
        super().__init__(message or f"non-finite value in {op}")


class ShapeError(ValueError):
    pass


# -- primitives ---------------------------------------------------------------


def affine(x: torch.Tensor, W: torch.Tensor, b: torch.Tensor | None = None) -> torch.Tensor:
    """``x @ W + b`` with ``b`` broadcast over leading dimensions only."""
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"affine: input width {x.shape[-1]} != weight rows {W.shape[0]}")
    y = x @ W
    if b is not None:
        if b.shape != (W.shape[1],):
            raise ShapeError(f"affine: bias shape {tuple(b.shape)} != ({W.shape[1]},)")
        y = y + b
    return y


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Softmax over the last axis; entries with ``mask == False`` are exactly 0."""
    if mask is None:
        shifted = logits - logits.max(dim=-1, keepdim=True).values.detach()
        e = torch.exp(shifted)
        return e / e.sum(dim=-1, keepdim=True)
    mask = torch.as_tensor(mask, dtype=torch.bool)
    if mask.shape != logits.shape:
        mask = mask.expand_as(logits)
    if not bool(mask.any(dim=-1).all()):
        raise ValueError("masked_softmax: a row has every entry masked")
    filled = logits.masked_fill(~mask, -math.inf)
    shifted = filled - filled.max(dim=-1, keepdim=True).values.detach()
    e = torch.exp(shifted).masked_fill(~mask, 0.0)
    return e / e.sum(dim=-1, keepdim=True)


def relu(x: torch.Tensor) -> torch.Tensor:
    # torch.relu has zero subgradient at 0
    return torch.relu(x)


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * gain + bias


def logsumexp(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.logsumexp(x, dim=dim)


# -- parameters -----------------------------------------------------------------


class ParamStore:
    """Ordered name -> float64 tensor map; every tensor carries a gradient slot."""

    def __init__(self, tensors: Mapping[str, np.ndarray | torch.Tensor] | None = None):
        self._t: OrderedDict[str, torch.Tensor] = OrderedDict()
        for name, value in (tensors or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> torch.Tensor:
        if name in self._t:
            raise KeyError(f"duplicate parameter {name!r}")
        t = torch.as_tensor(np.asarray(value, dtype=np.float64)).clone().to(DTYPE)
        t.requires_grad_(True)
        self._t[name] = t
        return t

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._t[name]

    def __contains__(self, name: str) -> bool:
        return name in self._t

    def __iter__(self):
        return iter(self._t)

    def __len__(self) -> int:
        return len(self._t)

    def items(self):
        return self._t.items()

    def names(self) -> list[str]:
        return list(self._t)

    def tensors(self) -> list[torch.Tensor]:
        return list(self._t.values())

    def zero_grad(self) -> None:
        for t in self._t.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {
            n: (t.grad.detach().numpy().copy() if t.grad is not None else np.zeros(tuple(t.shape)))
            for n, t in self._t.items()
        }

    def numpy(self) -> dict[str, np.ndarray]:
        return {n: t.detach().numpy().copy() for n, t in self._t.items()}

    def load_numpy(self, values: Mapping[str, np.ndarray]) -> None:
        with torch.no_grad():
            for n, v in values.items():
                t = self._t[n]
                v = np.asarray(v, dtype=np.float64)
                if v.shape != tuple(t.shape):
                    raise ShapeError(f"{n}: shape {v.shape} != {tuple(t.shape)}")
                t.copy_(torch.from_numpy(v))

    def copy(self) -> "ParamStore":
        return ParamStore(self.numpy())

    def n_values(self) -> int:
        return sum(t.numel() for t in self._t.values())


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


# -- evaluation -----------------------------------------------------------------

LossOutput = torch.Tensor | tuple[torch.Tensor, Mapping[str, torch.Tensor]]


def _first_nonfinite(parts: Mapping[str, torch.Tensor]) -> str | None:
    for name, value in parts.items():
        if not bool(torch.isfinite(value.detach()).all()):
            return name
    return None


def forward_backward(loss_fn: Callable[[ParamStore], LossOutput], store: ParamStore) -> float:
    """Evaluate ``loss_fn`` and fill every gradient slot of ``store``.

    ``loss_fn`` may return ``(loss, parts)`` where ``parts`` maps operation names to
    intermediate tensors in evaluation order; the first non-finite one is reported.
    """
    store.zero_grad()
    out = loss_fn(store)
    loss, parts = (out, {}) if isinstance(out, torch.Tensor) else out
    if loss.numel() != 1:
        raise ShapeError("loss must be a scalar")
    if not bool(torch.isfinite(loss.detach())):
        raise NumericalError(_first_nonfinite(parts) or "loss")
    loss.backward()
    for t in store.tensors():
        if t.grad is None:
            t.grad = torch.zeros_like(t)
    return float(loss.detach())


def finite_difference_check(
    loss_fn: Callable[[ParamStore], LossOutput],
    store: ParamStore,
    eps: float = 1e-4,
    samples_per_tensor: int = 8,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Coordinates are sampled per tensor (all of them when the tensor is small).
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    forward_backward(loss_fn, store)
    analytic = store.grads()
    rng = np.random.default_rng(seed)

    def value() -> float:
        with torch.no_grad():
            out = loss_fn(store)
        loss = out if isinstance(out, torch.Tensor) else out[0]
        return float(loss)

    worst = 0.0
    for name, t in store.items():
        n = t.numel()
        idx = np.arange(n) if n <= samples_per_tensor else rng.choice(n, samples_per_tensor, replace=False)
        flat = t.detach().view(-1)
        for k in idx:
            k = int(k)
            orig = float(flat[k])
            with torch.no_grad():
                flat[k] = orig + eps
            fp = value()
            with torch.no_grad():
                flat[k] = orig - eps
            fm = value()
            with torch.no_grad():
                flat[k] = orig
            g_num = (fp - fm) / (2.0 * eps)
            g_an = float(analytic[name].reshape(-1)[k])
            rel = abs(g_an - g_num) / (abs(g_an) + abs(g_num) + 1e-8)
            worst = max(worst, rel)
    return worst


# -- serialization --------------------------------------------------------------


def save_params(store: ParamStore, path: str | Path, hyper: dict, extra: dict | None = None) -> None:
    """Write a JSON container of (name, shape, float64 values) triples."""
    doc = {
        "format_version": FORMAT_VERSION,
        "hyperparameters": hyper,
        "extra": extra or {},
        "parameters": [
            {"name": n, "shape": list(v.shape), "values": v.reshape(-1).tolist()}
            for n, v in store.numpy().items()
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_params(path: str | Path) -> tuple[ParamStore, dict, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('format_version')!r}")
    store = ParamStore()
    for rec in doc["parameters"]:
        values = np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"])
        store.add(rec["name"], values)
    return store, doc["hyperparameters"], doc.get("extra", {})


def clip_grad_norm(tensors: Iterable[torch.Tensor], max_norm: float) -> float:
    grads = [t.grad for t in tensors if t.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g.mul_(scale)
    return total
