"""Regression and binary-classification metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass
class Metrics:
    kind: str
    values: dict
    undefined: list = field(default_factory=list)
    count: int = 0

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def to_json(self) -> dict:
        out = {k: (None if k in self.undefined else float(v)) for k, v in self.values.items()}
        out["n"] = self.count
        out["undefined"] = list(self.undefined)
        return out


def regression_metrics(y, y_hat) -> Metrics:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise MetricsError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    if y.size < 2:
        raise MetricsError("regression metrics need at least 2 samples")
    diff = y - y_hat
    ss_res = float(np.sum(diff * diff))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    undefined = []
    if ss_tot == 0.0:
        r2 = float("nan")
        undefined.append("r2")
    else:
        r2 = 1.0 - ss_res / ss_tot
    mae = float(np.mean(np.abs(diff)))
    denom = (np.abs(y) + np.abs(y_hat)) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(denom == 0, 0.0, np.abs(diff) / denom)
    smape = float(np.mean(terms))
    return Metrics("regression", {"r2": r2, "mae": mae, "smape": smape}, undefined, int(y.size))


def classification_metrics(y, score, threshold: float = 0.5) -> Metrics:
    y = np.asarray(y).astype(bool)
    score = np.asarray(score, dtype=np.float64)
    if y.shape != score.shape:
        raise MetricsError(f"length mismatch: {y.shape} vs {score.shape}")
    if y.size < 1:
        raise MetricsError("classification metrics need at least 1 sample")
    pred = score >= threshold
    tp = int(np.sum(pred & y))
    tn = int(np.sum(~pred & ~y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    undefined = []

    def rate(num, den, key):
        if den == 0:
            undefined.append(key)
            return 0.0
        return num / den

    acc = (tp + tn) / y.size
    tpr = rate(tp, tp + fn, "tpr")
    fpr = rate(fp, fp + tn, "fpr")
    ppv = rate(tp, tp + fp, "ppv")
    f1 = rate(2 * tp, 2 * tp + fp + fn, "f1")
    return Metrics("classification", {"acc": acc, "tpr": tpr, "fpr": fpr, "ppv": ppv, "f1": f1,
                                      "tp": tp, "tn": tn, "fp": fp, "fn": fn}, undefined, int(y.size))


def compute_metrics(y, y_hat, kind: str) -> Metrics:
    if kind == "regression":
        return regression_metrics(y, y_hat)
    if kind == "classification":
        return classification_metrics(y, y_hat)
    raise MetricsError(f"unknown metric kind {kind!r}")
