"""Synthetic covariate point processes simulated by Ogata thinning.

A covariate vector is drawn i.i.d. at time 0 and at every accepted event; it is
attached to that event and drives both the baseline intensity ``w_t . x`` and the
type of the *next* event until it is replaced.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, EventSequence, split_dataset

log = logging.getLogger(__name__)


class SimulationError(ValueError):
    pass


@dataclasses.dataclass
class SimConfig:
    model: str = "hawkes"
    T: float = 10.0
    F: int = 10
    cov_low: float | list[float] = 0.5
    cov_high: float | list[float] = 1.5
    w_t: list[float] = dataclasses.field(default_factory=lambda: [0.05] * 10)
    alpha: float = 400.0
    beta: float = 500.0
    w_c: list[float] = dataclasses.field(default_factory=lambda: [1.0, 1.0] + [0.0] * 8)
    w_h: float = 0.2
    zeta: float = 2.1
    N: int = 1280
    seed: int = 0

    def __post_init__(self):
        self.low = np.broadcast_to(np.asarray(self.cov_low, dtype=np.float64), (self.F,)).copy()
        self.high = np.broadcast_to(np.asarray(self.cov_high, dtype=np.float64), (self.F,)).copy()
        self.wt = np.asarray(self.w_t, dtype=np.float64)
        self.wc = np.asarray(self.w_c, dtype=np.float64)
        self.validate()

    def validate(self) -> None:
        if self.model not in ("poisson", "hawkes"):
            raise SimulationError(f"unknown model kind {self.model!r}")
        if self.T <= 0:
            raise SimulationError("T must be positive")
        if self.wt.shape != (self.F,) or self.wc.shape != (self.F,):
            raise SimulationError("w_t and w_c must have F entries")
        if np.any(self.high < self.low):
            raise SimulationError("covariate range has high < low")
        if np.any(self.wt < 0):
            raise SimulationError("w_t entries must be >= 0")
        if self.model == "poisson" and self.min_baseline() <= 0:
            raise SimulationError("poisson intensity w_t.x is not positive on the covariate support")
        if self.model == "hawkes":
            if self.alpha < 0 or self.beta <= 0:
                raise SimulationError("need alpha >= 0 and beta > 0")
            if self.alpha >= self.beta:
                raise SimulationError("hawkes process is not stationary: alpha >= beta")

    def min_baseline(self) -> float:
        return float(np.sum(np.where(self.wt >= 0, self.wt * self.low, self.wt * self.high)))

    def max_baseline(self) -> float:
        return float(np.sum(np.where(self.wt >= 0, self.wt * self.high, self.wt * self.low)))

    def sample_covariate(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.low, self.high)

    def ground_truth_importance(self) -> np.ndarray:
        a = np.abs(self.wc)
        total = a.sum()
        return a / total if total > 0 else np.full(self.F, 1.0 / max(self.F, 1))


def thinning_simulate(
    intensity: Callable[[float, list[float]], float],
    upper_bound: Callable[[float, list[float]], float],
    T: float,
    rng: np.random.Generator,
    on_accept: Callable[[float], None] | None = None,
) -> np.ndarray:
    """Ogata thinning on ``(0, T]``.

    ``upper_bound(t, history)`` must dominate ``intensity`` on ``(t, t_next]`` where
    ``t_next`` is the next accepted event. It is re-queried after every candidate.
    ``on_accept`` lets the caller update state (covariates, marks) at accepted times.
    """
    if T <= 0:
        raise SimulationError("T must be positive")
    history: list[float] = []
    t = 0.0
    while True:
        bound = upper_bound(t, history)
        if not bound > 0:
            if intensity(t, history) > 0:
                raise SimulationError("invalid bound")
            # a nonpositive dominating rate with zero intensity means no further events
            break
        t += rng.exponential(1.0 / bound)
        if t > T:
            break
        lam = intensity(t, history)
        if lam > bound * (1.0 + 1e-12):
            raise SimulationError(f"invalid bound: intensity {lam} exceeds bound {bound} at t={t}")
        if rng.uniform() * bound < lam:
            history.append(t)
            if on_accept is not None:
                on_accept(t)
    return np.asarray(history, dtype=np.float64)


def assign_event_type(
    x_n: np.ndarray, intervals: Sequence[float], cfg: SimConfig
) -> tuple[int, float]:
    """Threshold the logit ``w_c . x_n + mean(w_h * tau)``; the history term is 0 with no history."""
    v = float(np.dot(cfg.wc, x_n))
    if len(intervals):
        v += cfg.w_h * float(np.mean(intervals))
    return (1 if v > cfg.zeta else 0), v


def simulate_sequence(cfg: SimConfig, rng: np.random.Generator) -> EventSequence | None:
    """One realisation on ``(0, T]``; ``None`` if no event occurred."""
    state = {"x": cfg.sample_covariate(rng), "last": 0.0, "excite": 0.0}
    hawkes = cfg.model == "hawkes"
    cov_max = cfg.max_baseline()
    times: list[float] = []
    types: list[int] = []
    covs: list[np.ndarray] = []
    intervals: list[float] = []

    def excitation(t: float) -> float:
        if not hawkes or state["excite"] == 0.0:
            return 0.0
        return state["excite"] * math.exp(-cfg.beta * (t - state["last"]))

    def intensity(t, _history):
        return float(cfg.wt @ state["x"]) + excitation(t)

    def upper_bound(t, _history):
        # kernel term decays between events, so its value at t dominates the rest
        return cov_max + excitation(t)

    def on_accept(t):
        y, _ = assign_event_type(state["x"], intervals, cfg)
        intervals.append(t - (times[-1] if times else 0.0))
        times.append(t)
        types.append(y)
        if hawkes:
            state["excite"] = excitation(t) + cfg.alpha
            state["last"] = t
        state["x"] = cfg.sample_covariate(rng)
        covs.append(state["x"])

    thinning_simulate(intensity, upper_bound, cfg.T, rng, on_accept)
    if not times:
        return None
    return EventSequence(np.array(times), np.array(types), np.array(covs))


def sequence_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _simulate_indexed(job) -> EventSequence | None:
    cfg, seed, i = job
    rng = sequence_rng(seed, i)
    s = simulate_sequence(cfg, rng)
    if s is None:
        s = simulate_sequence(cfg, rng)
    return s


def generate_dataset(
    cfg: SimConfig,
    N: int | None = None,
    seed: int | None = None,
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    workers: int = 1,
) -> Dataset:
    """``N`` sequences with an 8:1:1 split; sequence ``i`` uses a stream seeded by ``(seed, i)``."""
    N = cfg.N if N is None else N
    seed = cfg.seed if seed is None else seed
    if N < 3:
        raise SimulationError("need N >= 3 sequences")
    jobs = [(cfg, seed, i) for i in range(N)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_simulate_indexed, jobs, chunksize=max(1, N // (4 * workers))))
    else:
        results = [_simulate_indexed(j) for j in jobs]
    seqs = []
    for i, s in enumerate(results):
        if s is None:
            log.warning("sequence %d produced no events twice; dropped", i)
            continue
        seqs.append(s)
    d = Dataset(
        sequences=tuple(seqs),
        K=2,
        F=cfg.F,
        ground_truth_importance=cfg.ground_truth_importance(),
    )
    return split_dataset(d, ratios, seed)
