"""Regression and ranking metrics reported over all samples and positives only."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.stats import rankdata

ALL_METRICS = ("rmse", "mae", "pearson", "spearman", "r2", "auc")
POSITIVE_METRICS = ("rmse", "mae", "pearson", "spearman", "r2")


class ConstantInputWarning(UserWarning):
    pass


def _pair(y_hat, y):
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if y_hat.shape != y.shape:
        raise ValueError(f"length mismatch: {y_hat.shape} vs {y.shape}")
    if len(y) == 0:
        raise ValueError("metrics need at least one sample")
    return y_hat, y


def rmse(y_hat, y) -> float:
    y_hat, y = _pair(y_hat, y)
    return float(np.sqrt(np.mean((y_hat - y) ** 2)))


def mae(y_hat, y) -> float:
    y_hat, y = _pair(y_hat, y)
    return float(np.mean(np.abs(y_hat - y)))


def pearson(y_hat, y) -> float:
    """Centered correlation; 0.0 with a warning if either input is constant."""
    y_hat, y = _pair(y_hat, y)
    if len(y) < 2:
        raise ValueError("pearson needs at least two samples")
    a, b = y_hat - y_hat.mean(), y - y.mean()
    denom = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if denom == 0.0:
        warnings.warn("correlation of a constant vector is undefined; reporting 0", ConstantInputWarning)
        return 0.0
    return float(np.clip(np.dot(a, b) / denom, -1.0, 1.0))


def spearman(y_hat, y) -> float:
    """Pearson correlation of average ranks (ties share their mean rank)."""
    y_hat, y = _pair(y_hat, y)
    return pearson(rankdata(y_hat), rankdata(y))


def r2(y_hat, y) -> float:
    y_hat, y = _pair(y_hat, y)
    if len(y) < 2:
        raise ValueError("r2 needs at least two samples")
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0.0:
        raise ValueError("r2 is undefined for a constant target")
    return float(1.0 - np.sum((y - y_hat) ** 2) / ss_tot)


def auc(score, z) -> float:
    """Mann-Whitney AUC with ties counted as one half."""
    score, z = _pair(score, z)
    pos = z > 0
    n_pos = int(pos.sum())
    n_neg = len(z) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both positive and negative labels")
    ranks = rankdata(score)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class MetricsReport:
    all: Dict[str, float] = field(default_factory=dict)
    positive: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"all": dict(self.all), "positive": dict(self.positive)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self, label: str = "model") -> str:
        return format_table({label: self})


def evaluate(y_hat, y, score: Optional[np.ndarray] = None) -> MetricsReport:
    """All six metrics on every sample, and all but AUC on positives only.

    AUC ranks ``score`` (default: ``y_hat``) against the purchase label y > 0.
    """
    y_hat, y = _pair(y_hat, y)
    score = y_hat if score is None else np.asarray(score, dtype=np.float64)
    z = (y > 0).astype(np.float64)
    report = MetricsReport()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConstantInputWarning)
        report.all = {
            "rmse": rmse(y_hat, y),
            "mae": mae(y_hat, y),
            "pearson": pearson(y_hat, y),
            "spearman": spearman(y_hat, y),
            "r2": r2(y_hat, y),
            "auc": auc(score, z),
        }
        pos = y > 0
        if pos.sum() >= 2:
            yp, pp = y[pos], y_hat[pos]
            report.positive = {
                "rmse": rmse(pp, yp),
                "mae": mae(pp, yp),
                "pearson": pearson(pp, yp),
                "spearman": spearman(pp, yp),
                "r2": r2(pp, yp) if np.ptp(yp) > 0 else float("nan"),
            }
    return report


def summarize(reports) -> Dict[str, Dict[str, Dict[str, float]]]:
    """Mean and standard deviation of each metric across repeated runs."""
    out: Dict[str, Dict[str, Dict[str, float]]] = {}
    for scope, names in (("all", ALL_METRICS), ("positive", POSITIVE_METRICS)):
        out[scope] = {}
        for name in names:
            vals = np.array([getattr(r, scope).get(name, np.nan) for r in reports], dtype=np.float64)
            out[scope][name] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    return out


def format_table(rows: Dict[str, "MetricsReport"]) -> str:
    """Plain-text table: one row per label, metric columns grouped by scope."""
    cols = [("all", m) for m in ALL_METRICS] + [("positive", m) for m in POSITIVE_METRICS]
    heads = [f"{s[:3]}:{m}" for s, m in cols]
    width = max(12, max(len(h) for h in heads) + 1)
    label_w = max(8, max(len(k) for k in rows) + 1)
    lines = ["".ljust(label_w) + "".join(h.rjust(width) for h in heads)]
    for label, rep in rows.items():
        cells = []
        for scope, name in cols:
            v = getattr(rep, scope).get(name)
            cells.append(("-" if v is None else f"{v:.6g}").rjust(width))
        lines.append(label.ljust(label_w) + "".join(cells))
    return "\n".join(lines) + "\n"
