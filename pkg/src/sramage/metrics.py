"""Regression, classification and rank-correlation scores."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, UndefinedMetricError

DEFAULT_EPSILON = 1e-9


@dataclass(frozen=True)
class RegressionScore:
    r2: float
    mape: float

    def to_dict(self):
        return {"r2": self.r2, "mape": self.mape}


@dataclass(frozen=True)
class ClassificationScore:
    f1_macro: float
    per_class: tuple  # (precision, recall, f1) per class index

    def to_dict(self):
        return {"f1_macro": self.f1_macro, "per_class": [list(t) for t in self.per_class]}


def _pair(y, y_hat):
    y = np.asarray(y, dtype=float).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=float).reshape(-1)
    if y.size == 0 or y.size != y_hat.size:
        raise InvalidArgumentError(f"need two non-empty vectors of equal length, got {y.size} and {y_hat.size}")
    return y, y_hat


def r2_score(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    dev = y - y.mean()
    # R^2 is scale free; dividing by the spread keeps tiny inputs from underflowing
    scale = np.abs(dev).max()
    if scale == 0:
        raise UndefinedMetricError("R^2 is undefined for a constant truth vector")
    with np.errstate(over="ignore"):
        return float(1.0 - np.sum(((y - y_hat) / scale) ** 2) / np.sum((dev / scale) ** 2))


def mape(y, y_hat, epsilon: float = DEFAULT_EPSILON) -> float:
    """Mean absolute percentage error as a fraction (0.2 means 20 %)."""
    y, y_hat = _pair(y, y_hat)
    return float(np.mean(np.abs(y - y_hat) / np.maximum(epsilon, np.abs(y))))


def regression_score(y, y_hat, epsilon: float = DEFAULT_EPSILON) -> RegressionScore:
    return RegressionScore(r2_score(y, y_hat), mape(y, y_hat, epsilon))


def confusion_matrix(y, y_hat, num_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.int64).reshape(-1)
    if y.size == 0 or y.size != y_hat.size:
        raise InvalidArgumentError("label vectors must be non-empty and of equal length")
    for v in (y, y_hat):
        if v.min() < 0 or v.max() >= num_classes:
            raise InvalidArgumentError(f"labels must lie in [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y, y_hat), 1)
    return cm


def f1_multiclass(y, y_hat, num_classes: int) -> ClassificationScore:
    """Macro-averaged F1 over ``num_classes`` labels.

    A class that is neither present nor predicted contributes 0 to the average,
    as does any class with zero precision or recall.
    """
    cm = confusion_matrix(y, y_hat, num_classes)
    tp = np.diag(cm).astype(float)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    per_class = []
    for i in range(num_classes):
        p = tp[i] / predicted[i] if predicted[i] else 0.0
        r = tp[i] / actual[i] if actual[i] else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        per_class.append((float(p), float(r), float(f)))
    macro = sum(t[2] for t in per_class) / num_classes
    return ClassificationScore(float(macro), tuple(per_class))


def rankdata(a, axis: int = 0) -> np.ndarray:
    """Average (fractional) ranks starting at 1, computed independently along ``axis``."""
    a = np.asarray(a, dtype=float)
    a = np.moveaxis(a, axis, 0)
    n = a.shape[0]
    order = np.argsort(a, axis=0, kind="stable")
    s = np.take_along_axis(a, order, axis=0)
    pos = np.arange(n).reshape((n,) + (1,) * (a.ndim - 1))
    pos = np.broadcast_to(pos, a.shape)
    new_run = np.ones(a.shape, dtype=bool)
    new_run[1:] = s[1:] != s[:-1]
    start = np.maximum.accumulate(np.where(new_run, pos, 0), axis=0)
    run_end = np.ones(a.shape, dtype=bool)
    run_end[:-1] = new_run[1:]
    end = np.flip(np.minimum.accumulate(np.flip(np.where(run_end, pos, n - 1), axis=0), axis=0), axis=0)
    avg = (start + end) / 2.0 + 1.0
    ranks = np.empty(a.shape, dtype=float)
    np.put_along_axis(ranks, order, avg, axis=0)
    return np.moveaxis(ranks, 0, axis)


def spearman_r(x, y) -> float:
    """Spearman rank correlation (Pearson correlation of average ranks)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.size != y.size or x.size < 2:
        raise InvalidArgumentError("spearman_r needs two vectors of equal length >= 2")
    rx = rankdata(x)
    ry = rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = np.sqrt(np.dot(rx, rx) * np.dot(ry, ry))
    if den == 0:
        raise UndefinedMetricError("Spearman correlation is undefined for a constant vector")
    return float(np.clip(np.dot(rx, ry) / den, -1.0, 1.0))


def spearman_columns(matrix, y) -> np.ndarray:
    """Spearman correlation of every column of ``matrix`` with ``y``.

    Columns that are constant get NaN instead of raising.
    """
    m = np.asarray(matrix, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if m.ndim != 2 or m.shape[0] != y.size or y.size < 2:
        raise InvalidArgumentError("matrix rows must match the length of y (>= 2)")
    ry = rankdata(y)
    ry -= ry.mean()
    ny = np.sqrt(np.dot(ry, ry))
    if ny == 0:
        raise UndefinedMetricError("Spearman correlation is undefined for a constant target")
    out = np.empty(m.shape[1])
    step = max(1, 2_000_000 // max(1, m.shape[0]))
    for c0 in range(0, m.shape[1], step):
        rm = rankdata(m[:, c0:c0 + step], axis=0)
        rm -= rm.mean(axis=0)
        nm = np.sqrt(np.einsum("ij,ij->j", rm, rm))
        with np.errstate(invalid="ignore", divide="ignore"):
            out[c0:c0 + step] = np.where(nm > 0, (ry @ rm) / (nm * ny), np.nan)
    return np.clip(out, -1.0, 1.0)
