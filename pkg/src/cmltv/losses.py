"""Supervised and contrastive loss terms, plus assembly of the training objective.

Each per-sample term is reported as a mean: the purchase cross-entropy over
the whole batch, the regression terms over positive samples only.  The
training total either sums per-sample terms (``reduction="sum"``, default) or
adds the means (``reduction="mean"``); the contrastive terms are batch-level
quantities and enter unscaled either way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import LN10, HeadOutputs, ltv_to_class

PROB_CLAMP = 1e-7
CLASS_PROB_CLAMP = 1e-12
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# order matters: it is the summation order of the total
TERMS = (
    "contrast_cls",
    "contrast_reg_dist",
    "contrast_reg_log",
    "contrast_reg_class",
    "purchase_ce",
    "dist_nll",
    "log_mse",
    "class_ce",
)
CONTRASTIVE_TERMS = ("contrast_cls", "contrast_reg_dist", "contrast_reg_log", "contrast_reg_class")
POSITIVE_TERMS = ("dist_nll", "log_mse", "class_ce")
TOGGLEABLE_TERMS = tuple(t for t in TERMS if t != "purchase_ce")


class MaskingError(RuntimeError):
    """A positive-only loss received a non-positive label."""


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _require_positive(y: np.ndarray, op: str) -> None:
    if np.any(~(y > 0)):
        raise MaskingError(f"{op} received labels <= 0; positive-only masking was skipped upstream")


def binary_ce(p_hat: Tensor, z) -> Tensor:
    p = ad.clip(_as_tensor(p_hat), PROB_CLAMP, 1.0 - PROB_CLAMP)
    z = np.asarray(z, dtype=np.float64)
    per = -(ad.log(p) * z + ad.log(1.0 - p) * (1.0 - z))
    return ad.mean(per)


def gamma_nll(shape: Tensor, rate: Tensor, y) -> Tensor:
    """Mean negative log-density of a gamma(shape, rate) at positive labels y."""
    y = np.asarray(y, dtype=np.float64)
    _require_positive(y, "gamma_nll")
    shape, rate = _as_tensor(shape), _as_tensor(rate)
    log_density = shape * ad.log(rate) + (shape - 1.0) * np.log(y) - rate * y - ad.lgamma_tensor(shape)
    return -ad.mean(log_density)


def lognormal_nll(mu: Tensor, sigma: Tensor, y) -> Tensor:
    y = np.asarray(y, dtype=np.float64)
    _require_positive(y, "lognormal_nll")
    mu, sigma = _as_tensor(mu), _as_tensor(sigma)
    log_y = np.log(y)
    z = (log_y - mu) / sigma
    return ad.mean(ad.log(sigma) + ad.scale(ad.square(z), 0.5) + (log_y + HALF_LOG_2PI))


def exponential_nll(rate: Tensor, y) -> Tensor:
    y = np.asarray(y, dtype=np.float64)
    _require_positive(y, "exponential_nll")
    rate = _as_tensor(rate)
    return ad.mean(rate * y - ad.log(rate))


def distribution_nll(family: str, params: tuple, y) -> Tensor:
    if family == "gamma":
        return gamma_nll(params[0], params[1], y)
    if family == "lognormal":
        return lognormal_nll(params[0], params[1], y)
    if family == "exponential":
        return exponential_nll(params[0], y)
    raise ValueError(f"unknown distribution {family!r}")


def log_mse(y_l_log10: Tensor, y) -> Tensor:
    y = np.asarray(y, dtype=np.float64)
    _require_positive(y, "log_mse")
    return ad.mean(ad.square(_as_tensor(y_l_log10) - np.log10(1.0 + y)))


def multiclass_ce(class_probs: Tensor, y, num_classes: Optional[int] = None) -> Tensor:
    class_probs = _as_tensor(class_probs)
    y = np.asarray(y, dtype=np.float64)
    _require_positive(y, "multiclass_ce")
    num_classes = class_probs.shape[1] if num_classes is None else num_classes
    target = ltv_to_class(y, num_classes)
    picked = class_probs[np.arange(len(y)), target]
    return -ad.mean(ad.log(ad.clip(picked, lo=CLASS_PROB_CLAMP)))


def contrastive_classification(p_hat: Tensor, z):
    """Logit-gap loss between mean purchase probability of positives and negatives.

    Returns ``(loss, skipped)``; a batch without both classes gives a zero
    constant and ``skipped=True``.
    """
    p_hat = _as_tensor(p_hat)
    z = np.asarray(z)
    pos, neg = np.flatnonzero(z > 0), np.flatnonzero(z <= 0)
    if len(pos) == 0 or len(neg) == 0:
        return Tensor(0.0), True
    p_pos = ad.clip(ad.mean(p_hat[pos]), PROB_CLAMP, 1.0 - PROB_CLAMP)
    p_neg = ad.clip(ad.mean(p_hat[neg]), PROB_CLAMP, 1.0 - PROB_CLAMP)
    gap = _logit(p_pos) - _logit(p_neg)
    # -log sigmoid(u) == softplus(-u)
    return ad.softplus(-gap), False


def _logit(p: Tensor) -> Tensor:
    return ad.log(p) - ad.log(1.0 - p)


def contrastive_regression_log(p_hat: Tensor, g: Tensor) -> Tensor:
    """Pairwise rank-agreement penalty between p_hat and log-scale scores g.

    Equals -(1/K^2) sum_ij (p_i - p_j)(g_i - g_j), evaluated in O(K) as
    -(2/K^2) [K sum p g - (sum p)(sum g)].
    """
    p_hat, g = _as_tensor(p_hat), _as_tensor(g)
    k = p_hat.shape[0]
    if k != g.shape[0]:
        raise ad.DimensionError(f"contrastive_regression: {p_hat.shape} vs {g.shape}")
    cross = ad.scale(ad.sum(p_hat * g), float(k)) - ad.sum(p_hat) * ad.sum(g)
    return ad.scale(cross, -2.0 / (k * k))


def contrastive_regression(p_hat: Tensor, y_head: Tensor) -> Tensor:
    """Regression contrastive loss on linear-scale, nonnegative head predictions."""
    y_head = _as_tensor(y_head)
    g = ad.scale(ad.log(1.0 + y_head), 1.0 / LN10)
    return contrastive_regression_log(p_hat, g)


@dataclass
class LossBundle:
    """Per-batch loss terms (floats), the differentiable total and sample counts."""

    total: Tensor
    terms: Dict[str, float]
    n_all: int
    n_pos: int
    n_neg: int
    contrast_skipped: bool = False
    computed: Dict[str, Tensor] = field(default_factory=dict, repr=False)

    @property
    def value(self) -> float:
        return self.total.item()

    def __getitem__(self, key: str) -> float:
        return self.terms[key]


def assemble_total(
    outputs: HeadOutputs,
    y,
    enabled: Optional[Iterable[str]] = None,
    weights: Optional[Mapping[str, float]] = None,
    reduction: str = "sum",
) -> LossBundle:
    """Build the masked training objective from one forward pass.

    ``enabled`` lists the toggleable terms to compute (default: all); the
    purchase cross-entropy is always on.  ``weights`` optionally scales terms,
    which lets a disabled term be compared with a zero-weighted one.

    With ``reduction="mean"`` the per-sample terms enter as means, which
    weights the four contrastive terms roughly batch-size times more heavily
    than ``"sum"``; in training that lets the regression contrastive terms push
    unsupervised negatives toward the top bins, so ``"sum"`` is the default.
    """
    y = np.asarray(y, dtype=np.float64)
    z = (y > 0).astype(np.float64)
    enabled = set(TOGGLEABLE_TERMS if enabled is None else enabled) | {"purchase_ce"}
    unknown = enabled - set(TERMS)
    if unknown:
        raise ValueError(f"unknown loss terms: {sorted(unknown)}")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    weights = dict(weights or {})
    pos = np.flatnonzero(y > 0)
    n, n_pos = len(y), len(pos)
    if reduction == "sum":
        # per-sample terms summed instead of averaged; contrastive terms unchanged
        weights["purchase_ce"] = weights.get("purchase_ce", 1.0) * n
        for name in POSITIVE_TERMS:
            weights[name] = weights.get(name, 1.0) * n_pos

    computed: Dict[str, Tensor] = {}
    skipped = False
    p_hat = outputs.p_hat
    if "contrast_cls" in enabled:
        loss, skipped = contrastive_classification(p_hat, z)
        if not skipped:
            computed["contrast_cls"] = loss
    if "contrast_reg_dist" in enabled:
        computed["contrast_reg_dist"] = contrastive_regression(p_hat, outputs.y_d)
    if "contrast_reg_log" in enabled:
        # log10(1 + (10^y_l - 1)) is y_l itself
        computed["contrast_reg_log"] = contrastive_regression_log(p_hat, outputs.y_l_log10)
    if "contrast_reg_class" in enabled:
        computed["contrast_reg_class"] = contrastive_regression(p_hat, outputs.y_c)
    computed["purchase_ce"] = binary_ce(p_hat, z)
    if n_pos:
        y_pos = y[pos]
        if "dist_nll" in enabled:
            params = tuple(t[pos] for t in outputs.dist_params)
            computed["dist_nll"] = distribution_nll(outputs.distribution, params, y_pos)
        if "log_mse" in enabled:
            computed["log_mse"] = log_mse(outputs.y_l_log10[pos], y_pos)
        if "class_ce" in enabled:
            computed["class_ce"] = multiclass_ce(outputs.class_probs[pos], y_pos)

    total = None
    for name in TERMS:
        if name not in computed:
            continue
        term = computed[name]
        if name in weights:
            term = ad.scale(term, weights[name])
        total = term if total is None else total + term
    terms = {name: (computed[name].item() if name in computed else 0.0) for name in TERMS}
    terms["total"] = total.item()
    return LossBundle(
        total=total,
        terms=terms,
        n_all=n,
        n_pos=n_pos,
        n_neg=n - n_pos,
        contrast_skipped=skipped,
        computed=computed,
    )
