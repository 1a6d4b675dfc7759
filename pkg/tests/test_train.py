import json

import numpy as np
import pytest

from covtpp.data import Dataset, EventSequence, standardize_covariates
from covtpp.encoder import HyperParams
from covtpp.simulate import SimConfig, generate_dataset
from covtpp.train import TrainConfig, ablation_study, evaluate, length_buckets, train, zero_features

HP = HyperParams(K=2, F=3, M=8, M_K=8, M_V=4, H=2, H_fi=2, C=2)


@pytest.fixture(scope="module")
def small():
    cfg = SimConfig(F=3, w_t=[0.4] * 3, w_c=[1.0, 1.0, 0.0], alpha=0.5, beta=1.0, T=6.0)
    return standardize_covariates(generate_dataset(cfg, N=40, seed=0))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.0)


def test_overfit_single_sequence():
    s = EventSequence([0.4, 1.1, 1.3, 2.9, 3.0], [0, 1, 1, 0, 1], np.random.default_rng(0).normal(size=(5, 3)))
    d = Dataset([s], K=2, F=3, splits=["train"])
    model, hist = train(d, HP, TrainConfig(max_epochs=50, lr=1e-2))
    assert len(hist) == 50
    assert hist[-1]["train_loss"] < hist[0]["train_loss"]


def test_determinism(small):
    cfg = TrainConfig(max_epochs=3, seed=4)
    a, ha = train(small, HP, cfg)
    b, hb = train(small, HP, cfg)
    assert ha == hb
    for name, v in a.store.numpy().items():
        np.testing.assert_array_equal(v, b.store.numpy()[name])


def test_early_stopping(small, tmp_path):
    # with lr 0 the validation loss never improves after the first epoch
    cfg = TrainConfig(lr=0.0, max_epochs=50, patience=3)
    _, hist = train(small, HP, cfg, log_path=tmp_path / "log.jsonl")
    assert len(hist) == cfg.patience + 1
    lines = [json.loads(x) for x in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert lines == hist and set(lines[0]) == {"epoch", "train_loss", "val_loss", "val_accuracy"}


def test_best_validation_parameters_kept(small):
    model, hist = train(small, HP, TrainConfig(max_epochs=6, patience=6, lr=5e-2))
    best = min(h["val_loss"] for h in hist)
    assert -evaluate(model, small.split("val")).joint_ll_per_event == pytest.approx(best, abs=1e-12)


def test_length_buckets_cover_every_sequence(small):
    rng = np.random.default_rng(0)
    seqs = small.split("train")
    batches = length_buckets(seqs, 5, rng)
    assert sorted(np.concatenate(batches).tolist()) == list(range(len(seqs)))
    assert all(len(b) <= 5 for b in batches)


def test_evaluate_metric_ranges(small):
    model, _ = train(small, HP, TrainConfig(max_epochs=2))
    m = evaluate(model, small.split("test"))
    assert 0 <= m.accuracy <= 1 and 0 <= m.f1_weighted <= 1 and m.rmse >= 0
    assert m.n_events == sum(len(s) for s in small.split("test"))
    with pytest.raises(ValueError):
        evaluate(model, [])


def test_zero_features(small):
    z = zero_features(small, [0, 2])
    for s in z.sequences:
        assert np.all(s.covariates[:, [0, 2]] == 0)
    np.testing.assert_array_equal(z.sequences[0].covariates[:, 1], small.sequences[0].covariates[:, 1])


def test_ablation_curve(small):
    cfg = TrainConfig(max_epochs=2, seed=3)
    curve = ablation_study(small, HP, cfg, ranking=[1, 0, 2])
    assert [r["k"] for r in curve] == [0, 1, 2, 3]
    assert [r["removed_feature"] for r in curve] == [None, 1, 0, 2]
    model, _ = train(small, HP, cfg)
    assert curve[0]["test_accuracy"] == evaluate(model, small.split("test")).accuracy
    with pytest.raises(ValueError, match="permutation"):
        ablation_study(small, HP, cfg, ranking=[0, 0, 1])


def test_ablation_parallel_matches_sequential(small):
    cfg = TrainConfig(max_epochs=1, seed=1)
    seq = ablation_study(small, HP, cfg, ranking=[2, 1, 0], ks=[0, 3])
    par = ablation_study(small, HP, cfg, ranking=[2, 1, 0], ks=[0, 3], workers=2)
    assert seq == par
