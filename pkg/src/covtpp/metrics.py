"""Classification and time-prediction metrics."""

from __future__ import annotations

import dataclasses

import numpy as np


@dataclasses.dataclass
class Metrics:
    time_ll_per_event: float
    joint_ll_per_event: float
    rmse: float
    accuracy: float
    f1_weighted: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    n_events: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def confusion_matrix(y_true, y_pred, K: int) -> np.ndarray:
    cm = np.zeros((K, K), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def per_class_scores(y_true, y_pred, K: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Precision, recall, F1 and true support per class; undefined ratios are 0."""
    cm = confusion_matrix(y_true, y_pred, K)
    tp = np.diag(cm).astype(np.float64)
    pred_pos = cm.sum(axis=0)
    support = cm.sum(axis=1)
    precision = np.divide(tp, pred_pos, out=np.zeros(K), where=pred_pos > 0)
    recall = np.divide(tp, support, out=np.zeros(K), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(K), where=denom > 0)
    return precision, recall, f1, support


def f1_weighted(y_true, y_pred, K: int) -> float:
    """Per-class F1 averaged with true-class support as weights."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValueError("f1_weighted of empty input")
    if len(y_true) != len(y_pred):
        raise ValueError("label arrays differ in length")
    _, _, f1, support = per_class_scores(y_true, y_pred, K)
    return float(np.dot(f1, support) / support.sum())


def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    if len(y_true) == 0:
        raise ValueError("accuracy of empty input")
    return float(np.mean(y_true == np.asarray(y_pred)))


def rmse(target, pred) -> float:
    target = np.asarray(target, dtype=np.float64)
    with np.errstate(over="ignore"):
        return float(np.sqrt(np.mean((target - np.asarray(pred, dtype=np.float64)) ** 2)))


def compute_metrics(pred: dict[str, np.ndarray], K: int) -> Metrics:
    """Aggregate per-position model outputs (see ``TransFeatTPP.predict``)."""
    tv = pred["time_valid"]
    y_true = pred["type_true"]
    y_hat = pred["type_prob"].argmax(axis=-1)
    p, r, f1, support = per_class_scores(y_true, y_hat, K)
    time_ll = -float(pred["time_nll"][tv].mean()) if tv.any() else float("nan")
    return Metrics(
        time_ll_per_event=time_ll,
        joint_ll_per_event=-float((pred["time_nll"] * tv).sum() + pred["type_ce"].sum()) / len(y_true),
        rmse=rmse(pred["tau_true"][tv], pred["tau_pred"][tv]),
        accuracy=accuracy(y_true, y_hat),
        f1_weighted=float(np.dot(f1, support) / support.sum()),
        precision=p.tolist(),
        recall=r.tolist(),
        f1=f1.tolist(),
        support=support.tolist(),
        n_events=int(len(y_true)),
    )
