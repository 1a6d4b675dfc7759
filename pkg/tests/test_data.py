import json

import numpy as np
import pytest

from covtpp.data import (
    DataError,
    Dataset,
    EventSequence,
    load_dataset,
    save_dataset,
    split_dataset,
    standardize_covariates,
)


def _write_lines(path, *records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def _toy(n=10, F=2, seed=0):
    rng = np.random.default_rng(seed)
    seqs = []
    for i in range(n):
        L = int(rng.integers(1, 6))
        seqs.append(
            EventSequence(np.cumsum(rng.exponential(size=L)), rng.integers(0, 3, L), rng.normal(size=(L, F)), f"s{i}")
        )
    return Dataset(tuple(seqs), K=3, F=F)


def test_load_single_line(tmp_path):
    p = _write_lines(tmp_path / "d.jsonl", {"times": [1.0, 2.5], "types": [0, 1], "covariates": [[0.1], [0.2]]})
    d = load_dataset(p)
    assert len(d) == 1 and len(d.sequences[0]) == 2
    assert d.K >= 2 and d.F == 1
    np.testing.assert_array_equal(d.sequences[0].covariates, [[0.1], [0.2]])


def test_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    with pytest.raises(DataError, match="empty dataset"):
        load_dataset(p)


def test_non_increasing_times_reports_line(tmp_path):
    p = _write_lines(tmp_path / "d.jsonl", {"times": [2.0, 1.0], "types": [0, 1], "covariates": [[0.0], [0.0]]})
    with pytest.raises(DataError, match="non-increasing times at line 1"):
        load_dataset(p)


def test_malformed_line_number(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"K": 2, "F": 1}\n{"times": [1.0], "types": [0], "covariates": [[1.0]]}\n{"times": [1.0\n')
    with pytest.raises(DataError, match="line 3"):
        load_dataset(p)


def test_inconsistent_F(tmp_path):
    p = _write_lines(
        tmp_path / "d.jsonl",
        {"times": [1.0], "types": [0], "covariates": [[0.1]]},
        {"times": [1.0], "types": [0], "covariates": [[0.1, 0.2]]},
    )
    with pytest.raises(DataError, match="inconsistent covariate dimension"):
        load_dataset(p)


def test_type_exceeds_header_K(tmp_path):
    p = _write_lines(tmp_path / "d.jsonl", {"K": 2, "F": 1}, {"times": [1.0], "types": [2], "covariates": [[0.1]]})
    with pytest.raises(DataError, match="K=2"):
        load_dataset(p)


def test_round_trip(tmp_path):
    d = split_dataset(_toy(), seed=3)
    d = standardize_covariates(d)
    d = Dataset(d.sequences, d.K, d.F, d.splits, d.standardization, np.array([0.25, 0.75]))
    save_dataset(d, tmp_path / "a.jsonl")
    back = load_dataset(tmp_path / "a.jsonl")
    assert back.sequences == d.sequences
    assert back.splits == d.splits and back.K == d.K and back.F == d.F
    np.testing.assert_array_equal(back.ground_truth_importance, d.ground_truth_importance)
    np.testing.assert_array_equal(back.standardization.mean, d.standardization.mean)
    np.testing.assert_array_equal(back.standardization.std, d.standardization.std)
    save_dataset(back, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


@pytest.mark.parametrize("n, expected", [(1280, (1024, 128, 128)), (10, (8, 1, 1)), (3, (3, 0, 0))])
def test_split_counts(n, expected):
    base = _toy(n=n)
    counts = split_dataset(base, (0.8, 0.1, 0.1), seed=1).split_counts()
    assert (counts["train"], counts["val"], counts["test"]) == expected


def test_split_is_deterministic_partition():
    d = _toy(n=50)
    a = split_dataset(d, seed=5)
    b = split_dataset(d, seed=5)
    assert a.splits == b.splits
    assert sum(len(a.split(s)) for s in ("train", "val", "test")) == 50
    assert split_dataset(d, seed=6).splits != a.splits


def test_split_rejects_bad_ratios():
    with pytest.raises(DataError):
        split_dataset(_toy(), (0.8, 0.1, 0.2), seed=0)
    with pytest.raises(DataError):
        split_dataset(_toy(n=2), seed=0)


def test_standardize_zero_variance():
    seqs = [EventSequence([1.0, 2.0], [0, 0], [[5.0], [5.0]]) for _ in range(3)]
    d = standardize_covariates(Dataset(tuple(seqs), 1, 1, ("train", "val", "test")))
    assert d.standardization.std[0] == 1.0
    for s in d.sequences:
        np.testing.assert_array_equal(s.covariates, 0.0)


def test_standardize_population_std():
    seqs = [
        EventSequence([1.0], [0], [[0.0]]),
        EventSequence([1.0], [0], [[2.0]]),
        EventSequence([1.0], [0], [[7.0]]),
    ]
    d = standardize_covariates(Dataset(tuple(seqs), 1, 1, ("train", "train", "test")))
    assert d.standardization.mean[0] == 1.0 and d.standardization.std[0] == 1.0
    assert [float(s.covariates[0, 0]) for s in d.sequences] == [-1.0, 1.0, 6.0]


def test_standardize_train_moments_and_reuse():
    d = standardize_covariates(split_dataset(_toy(n=40, F=3), seed=2))
    X = np.concatenate([s.covariates for s in d.split("train")])
    assert np.all(np.abs(X.mean(axis=0)) < 1e-9)
    np.testing.assert_allclose(X.std(axis=0), 1.0, atol=1e-9)
    raw = split_dataset(_toy(n=40, F=3), seed=2)
    fresh = raw.split("test")[0]
    np.testing.assert_array_equal(d.standardization.apply(fresh).covariates, d.split("test")[0].covariates)


def test_sequence_invariants():
    with pytest.raises(DataError):
        EventSequence([], [], np.zeros((0, 1)))
    with pytest.raises(DataError):
        EventSequence([-1.0], [0], [[0.0]])
    with pytest.raises(DataError):
        EventSequence([1.0, 2.0], [0], [[0.0], [0.0]])
