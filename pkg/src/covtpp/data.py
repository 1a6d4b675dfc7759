"""Event sequences, datasets, the JSON-lines file format, splitting and scaling.

File format (one JSON object per line):

* optional header line: ``{"K": int, "F": int, "ground_truth_importance": [...],
  "standardization": {"mean": [...], "std": [...]}}``. The header is recognised by
  the absence of a ``times`` key.
* one line per sequence: ``{"times": [...], "types": [...], "covariates": [[...], ...],
  "meta": str, "split": "train" | "val" | "test"}``; ``meta`` and ``split`` are optional.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPLITS = ("train", "val", "test")


class DataError(ValueError):
    """Malformed or inconsistent dataset content."""


@dataclasses.dataclass(frozen=True, eq=False)
class EventSequence:
    times: np.ndarray
    types: np.ndarray
    covariates: np.ndarray
    meta: str | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        types = np.asarray(self.types, dtype=np.int64).reshape(-1)
        covs = np.asarray(self.covariates, dtype=np.float64)
        if covs.ndim == 1:
            covs = covs.reshape(len(times), -1) if len(times) else covs.reshape(0, 0)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "types", types)
        object.__setattr__(self, "covariates", covs)
        L = len(times)
        if L < 1:
            raise DataError("sequence has no events")
        if len(types) != L or covs.shape[0] != L:
            raise DataError(
                f"length mismatch: times {L}, types {len(types)}, covariates {covs.shape[0]}"
            )
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(covs)):
            raise DataError("non-finite times or covariates")
        if times[0] < 0:
            raise DataError("negative time")
        if L > 1 and np.any(np.diff(times) <= 0):
            raise DataError("non-increasing times")
        if np.any(types < 0):
            raise DataError("negative type index")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def F(self) -> int:
        return self.covariates.shape[1]

    def __eq__(self, other):
        if not isinstance(other, EventSequence):
            return NotImplemented
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.types, other.types)
            and np.array_equal(self.covariates, other.covariates)
            and self.meta == other.meta
        )

    def with_covariates(self, covariates: np.ndarray) -> "EventSequence":
        return dataclasses.replace(self, covariates=covariates)


@dataclasses.dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, seq: EventSequence) -> EventSequence:
        return seq.with_covariates((seq.covariates - self.mean) / self.std)

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "Standardization":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclasses.dataclass(frozen=True)
class Dataset:
    """A collection of sequences sharing type count ``K`` and covariate width ``F``.

    ``splits`` holds one of ``"train" | "val" | "test"`` per sequence, or is ``None``
    before :func:`split_dataset` has been applied. ``standardization`` is set by
    :func:`standardize_covariates`; covariates are then already transformed.
    """

    sequences: tuple[EventSequence, ...]
    K: int
    F: int
    splits: tuple[str, ...] | None = None
    standardization: Standardization | None = None
    ground_truth_importance: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        if self.splits is not None:
            object.__setattr__(self, "splits", tuple(self.splits))
            if len(self.splits) != len(self.sequences):
                raise DataError("split assignment length differs from sequence count")
            bad = set(self.splits) - set(SPLITS)
            if bad:
                raise DataError(f"unknown split names {sorted(bad)}")
        if self.K < 1 or self.F < 0:
            raise DataError("K must be >= 1 and F >= 0")
        for i, s in enumerate(self.sequences):
            if s.F != self.F:
                raise DataError(f"sequence {i}: covariate dimension {s.F} != F={self.F}")
            if s.types.max() >= self.K:
                raise DataError(f"sequence {i}: type index {int(s.types.max())} >= K={self.K}")
        if self.ground_truth_importance is not None:
            gti = np.asarray(self.ground_truth_importance, dtype=np.float64)
            if gti.shape != (self.F,):
                raise DataError("ground_truth_importance must have F entries")
            object.__setattr__(self, "ground_truth_importance", gti)

    def __len__(self) -> int:
        return len(self.sequences)

    def split(self, name: str) -> list[EventSequence]:
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}")
        if self.splits is None:
            raise DataError("dataset has no split assignment")
        return [s for s, a in zip(self.sequences, self.splits) if a == name]

    def split_counts(self) -> dict[str, int]:
        return {name: sum(a == name for a in (self.splits or ())) for name in SPLITS}

    def map_covariates(self, fn) -> "Dataset":
        """Return a copy with ``fn`` applied to every covariate matrix."""
        return dataclasses.replace(
            self, sequences=tuple(s.with_covariates(fn(s.covariates)) for s in self.sequences)
        )


def _parse_sequence(rec: dict, lineno: int) -> tuple[EventSequence, str | None]:
    try:
        times = np.asarray(rec["times"], dtype=np.float64)
        types = np.asarray(rec["types"], dtype=np.int64)
        covs = np.asarray(rec["covariates"], dtype=np.float64)
    except KeyError as e:
        raise DataError(f"missing field {e.args[0]!r} at line {lineno}") from None
    except (TypeError, ValueError) as e:
        raise DataError(f"malformed line {lineno}: {e}") from None
    if times.ndim != 1 or types.ndim != 1 or covs.ndim != 2:
        raise DataError(f"malformed line {lineno}: wrong array nesting")
    if len(times) > 1 and np.any(np.diff(times) <= 0):
        raise DataError(f"non-increasing times at line {lineno}")
    meta = rec.get("meta")
    split = rec.get("split")
    try:
        seq = EventSequence(times, types, covs, None if meta is None else str(meta))
    except DataError as e:
        raise DataError(f"{e} at line {lineno}") from None
    return seq, split


def load_dataset(path: str | Path) -> Dataset:
    """Read a dataset file; K and F come from the header or are inferred."""
    header: dict = {}
    seqs: list[EventSequence] = []
    splits: list[str | None] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"malformed line {lineno}: {e.msg}") from None
            if not isinstance(rec, dict):
                raise DataError(f"malformed line {lineno}: expected an object")
            if "times" not in rec:
                if header or seqs:
                    raise DataError(f"unexpected header at line {lineno}")
                header = rec
                continue
            seq, split = _parse_sequence(rec, lineno)
            seqs.append(seq)
            splits.append(split)
    if not seqs:
        raise DataError("empty dataset")

    Fs = {s.F for s in seqs}
    if len(Fs) != 1:
        raise DataError(f"inconsistent covariate dimension across sequences: {sorted(Fs)}")
    F = Fs.pop()
    K_seen = max(int(s.types.max()) for s in seqs) + 1
    if "F" in header and int(header["F"]) != F:
        raise DataError(f"header F={header['F']} but sequences have F={F}")
    K = int(header.get("K", K_seen))
    if K_seen > K:
        raise DataError(f"type index {K_seen - 1} >= header K={K}")

    if all(a is None for a in splits):
        split_tuple = None
    elif any(a is None for a in splits):
        raise DataError("split given for some sequences but not all")
    else:
        split_tuple = tuple(splits)
    std = header.get("standardization")
    return Dataset(
        sequences=tuple(seqs),
        K=K,
        F=F,
        splits=split_tuple,
        standardization=Standardization.from_json(std) if std else None,
        ground_truth_importance=header.get("ground_truth_importance"),
    )


def save_dataset(d: Dataset, path: str | Path) -> None:
    header: dict = {"K": d.K, "F": d.F}
    if d.ground_truth_importance is not None:
        header["ground_truth_importance"] = d.ground_truth_importance.tolist()
    if d.standardization is not None:
        header["standardization"] = d.standardization.to_json()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for i, s in enumerate(d.sequences):
            rec: dict = {
                "times": s.times.tolist(),
                "types": s.types.tolist(),
                "covariates": s.covariates.tolist(),
            }
            if s.meta is not None:
                rec["meta"] = s.meta
            if d.splits is not None:
                rec["split"] = d.splits[i]
            fh.write(json.dumps(rec) + "\n")


def split_counts_for(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Floor-rounded val/test counts, remainder to train."""
    n_val = math.floor(n * ratios[1] + 1e-9)
    n_test = math.floor(n * ratios[2] + 1e-9)
    return n - n_val - n_test, n_val, n_test


def split_dataset(d: Dataset, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0) -> Dataset:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise DataError("ratios must be three positive numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios sum to {sum(ratios)!r}, not 1")
    n = len(d)
    if n < 3:
        raise DataError("need at least 3 sequences to split")
    n_train, n_val, _ = split_counts_for(n, ratios)
    order = np.random.default_rng(seed).permutation(n)
    assign = np.empty(n, dtype=object)
    assign[order[:n_train]] = "train"
    assign[order[n_train:n_train + n_val]] = "val"
    assign[order[n_train + n_val:]] = "test"
    return dataclasses.replace(d, splits=tuple(assign.tolist()))


def compute_standardization(seqs: Iterable[EventSequence], F: int) -> Standardization:
    rows = [s.covariates for s in seqs]
    if not rows:
        raise DataError("train split is empty")
    X = np.concatenate(rows, axis=0)
    mean = X.mean(axis=0) if F else np.zeros(0)
    std = X.std(axis=0) if F else np.ones(0)
    # zero-variance features keep std 1 so they map to exactly 0
    std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
    return Standardization(mean, std)


def standardize_covariates(d: Dataset) -> Dataset:
    """Scale covariates with population mean/std of the training split."""
    stats = compute_standardization(d.split("train"), d.F)
    return dataclasses.replace(
        d,
        sequences=tuple(stats.apply(s) for s in d.sequences),
        standardization=stats,
    )
