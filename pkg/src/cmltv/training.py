"""Adam optimization, the epoch loop with early stopping, prediction and fusion sweeps."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor
from .data import Dataset, batches
from .losses import TERMS, TOGGLEABLE_TERMS, assemble_total
from .metrics import ALL_METRICS, MetricsReport, evaluate
from .model import BackboneConfig, CMLTVModel, HeadConfig, check_fusion_weights, fuse_prediction

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 10_000
    max_epochs: int = 50
    patience: int = 3
    seed: int = 0
    disabled_terms: Sequence[str] = ()
    grad_clip: float = 10.0
    reduction: str = "sum"

    def __post_init__(self):
        self.disabled_terms = tuple(self.disabled_terms)
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.reduction not in ("sum", "mean"):
            raise ValueError(f"reduction must be 'sum' or 'mean', got {self.reduction!r}")
        unknown = set(self.disabled_terms) - set(TOGGLEABLE_TERMS)
        if unknown:
            raise ValueError(f"cannot disable {sorted(unknown)}; toggleable terms are {TOGGLEABLE_TERMS}")

    @property
    def enabled_terms(self) -> Tuple[str, ...]:
        return tuple(t for t in TOGGLEABLE_TERMS if t not in self.disabled_terms)


@dataclass
class TrainState:
    params: Dict[str, Tensor]
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    best_valid: float = math.inf
    epochs_since_best: int = 0
    contrast_skips: int = 0
    batches_skipped: int = 0

    @classmethod
    def create(cls, params: Dict[str, Tensor]) -> "TrainState":
        return cls(
            params=params,
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(
    state: TrainState,
    grads: Dict[str, Optional[np.ndarray]],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> TrainState:
    """One bias-corrected Adam update, in place.  Missing gradients count as zeros."""
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r} at step {state.step + 1}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in state.params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def clip_global_norm(grads: Dict[str, Optional[np.ndarray]], max_norm: float) -> float:
    total = 0.0
    for g in grads.values():
        if g is not None:
            total += float(np.sum(g * g))
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for k, g in grads.items():
            if g is not None:
                grads[k] = g * factor
    return norm


@dataclass
class History:
    rows: List[Dict[str, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, key: str) -> List[float]:
        return [r[key] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        if not self.rows:
            buf.write(",".join(history_columns()) + "\n")
            return buf.getvalue()
        writer = csv.writer(buf, lineterminator="\n")
        cols = list(self.rows[0])
        writer.writerow(cols)
        for r in self.rows:
            writer.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
        return buf.getvalue()


def history_columns() -> List[str]:
    return (
        ["epoch"]
        + [f"train_{t}" for t in TERMS]
        + ["train_total", "valid_total"]
        + [f"valid_{m}" for m in ALL_METRICS]
        + ["contrast_skips", "batches_skipped"]
    )


def validation_loss(model: CMLTVModel, dataset: Dataset, config: TrainConfig) -> float:
    """Size-weighted mean of eval-mode batch totals, in fixed order."""
    total, n = 0.0, 0
    for batch in batches(dataset, config.batch_size):
        out = model.forward(Tensor(batch.features), training=False)
        bundle = assemble_total(out, batch.ltv, config.enabled_terms, reduction=config.reduction)
        total += bundle.value * len(batch)
        n += len(batch)
    return total / n


def train_epoch(model: CMLTVModel, state: TrainState, dataset: Dataset, config: TrainConfig, epoch: int) -> Dict[str, float]:
    sums = {t: 0.0 for t in TERMS}
    sums["total"] = 0.0
    seen = 0
    enabled = config.enabled_terms
    for batch in batches(dataset, config.batch_size, shuffle_seed=_epoch_seed(config.seed, epoch)):
        if len(batch) < 2:
            # batchnorm in training mode is undefined for a single row
            state.batches_skipped += 1
            continue
        model.zero_grad()
        out = model.forward(Tensor(batch.features), training=True)
        bundle = assemble_total(out, batch.ltv, enabled, reduction=config.reduction)
        bundle.total.backward()
        state.contrast_skips += int(bundle.contrast_skipped)
        grads = {k: p.grad for k, p in state.params.items()}
        clip_global_norm(grads, config.grad_clip)
        adam_step(state, grads, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
        for k, v in bundle.terms.items():
            sums[k] += v * len(batch)
        seen += len(batch)
    return {k: v / max(seen, 1) for k, v in sums.items()}


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def train(
    train_set: Dataset,
    valid_set: Dataset,
    backbone_config: Optional[BackboneConfig] = None,
    head_config: Optional[HeadConfig] = None,
    config: Optional[TrainConfig] = None,
) -> Tuple[CMLTVModel, History]:
    """Fit a model with early stopping on the validation total loss.

    Returns the model restored to its best validation epoch and the per-epoch
    history (loss terms, validation loss and validation metrics).
    """
    if len(valid_set) == 0:
        raise ValueError("validation set is empty")
    config = config or TrainConfig()
    backbone_config = backbone_config or BackboneConfig(input_dim=train_set.n_features)
    head_config = head_config or HeadConfig()
    if backbone_config.input_dim != train_set.n_features:
        raise ValueError(
            f"backbone input_dim {backbone_config.input_dim} != dataset width {train_set.n_features}"
        )
    model = CMLTVModel(backbone_config, head_config, seed=config.seed)
    state = TrainState.create(model.parameters())
    history = History()
    best = model.state_dict()

    for epoch in range(1, config.max_epochs + 1):
        train_terms = train_epoch(model, state, train_set, config, epoch)
        valid_total = validation_loss(model, valid_set, config)
        row: Dict[str, float] = {"epoch": epoch}
        row.update({f"train_{t}": train_terms[t] for t in TERMS})
        row["train_total"] = train_terms["total"]
        row["valid_total"] = valid_total
        report = _safe_evaluate(model, valid_set, head_config)
        row.update({f"valid_{m}": report.all.get(m, float("nan")) for m in ALL_METRICS})
        row["contrast_skips"] = state.contrast_skips
        row["batches_skipped"] = state.batches_skipped
        history.rows.append(row)
        logger.info("epoch %d: train %.6g valid %.6g", epoch, row["train_total"], valid_total)

        if valid_total < state.best_valid:
            state.best_valid = valid_total
            state.epochs_since_best = 0
            best = model.state_dict()
        else:
            state.epochs_since_best += 1
            if state.epochs_since_best >= config.patience:
                logger.info("early stop after epoch %d", epoch)
                break
    model.load_state_dict(best)
    return model, history


def _safe_evaluate(model, dataset, head_config) -> MetricsReport:
    preds = predict(model, dataset, head_config.alpha, head_config.beta)
    try:
        return evaluate(preds.y_hat, dataset.ltv)
    except ValueError:
        return MetricsReport()


@dataclass
class Predictions:
    p_hat: np.ndarray
    y_d: np.ndarray
    y_l: np.ndarray
    y_c: np.ndarray
    y_hat: np.ndarray

    def fuse(self, alpha: float, beta: float) -> np.ndarray:
        return fuse_prediction(self.p_hat, self.y_d, self.y_l, self.y_c, alpha, beta)


def predict(
    model: CMLTVModel,
    dataset,
    alpha: Optional[float] = None,
    beta: Optional[float] = None,
    chunk_size: int = 65536,
) -> Predictions:
    """Eval-mode scores of every head plus the fused prediction.

    ``dataset`` may be a :class:`Dataset` or a raw feature matrix.
    """
    alpha = model.head_config.alpha if alpha is None else alpha
    beta = model.head_config.beta if beta is None else beta
    check_fusion_weights(alpha, beta)
    x = dataset.features if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.backbone_config.input_dim:
        raise ValueError(f"model expects width {model.backbone_config.input_dim}, data has shape {x.shape}")
    parts = {k: [] for k in ("p_hat", "y_d", "y_l", "y_c")}
    for start in range(0, len(x), chunk_size):
        out = model.forward(Tensor(x[start : start + chunk_size]), training=False)
        parts["p_hat"].append(out.p_hat.data)
        parts["y_d"].append(out.y_d.data)
        parts["y_l"].append(out.y_l_linear)
        parts["y_c"].append(out.y_c.data)
    arrays = {k: (np.concatenate(v) if v else np.zeros(0)) for k, v in parts.items()}
    return Predictions(y_hat=fuse_prediction(**arrays, alpha=alpha, beta=beta), **arrays)


def validate_grid(grid: Iterable[Tuple[float, float]]) -> List[Tuple[float, float]]:
    grid = [(float(a), float(b)) for a, b in grid]
    for a, b in grid:
        check_fusion_weights(a, b)
    return grid


def sweep_predictions(preds: Predictions, y, grid) -> List[Tuple[float, float, MetricsReport]]:
    """Fuse existing head scores at each (alpha, beta) and evaluate."""
    return [(a, b, evaluate(preds.fuse(a, b), y)) for a, b in validate_grid(grid)]


def sweep(
    train_set: Dataset,
    valid_set: Dataset,
    eval_set: Dataset,
    grid,
    backbone_config: Optional[BackboneConfig] = None,
    head_config: Optional[HeadConfig] = None,
    config: Optional[TrainConfig] = None,
):
    """Train once, then evaluate the fused prediction at every grid point.

    Returns ``(model, [(alpha, beta, report), ...])``.
    """
    grid = validate_grid(grid)
    model, _ = train(train_set, valid_set, backbone_config, head_config, config)
    preds = predict(model, eval_set)
    return model, sweep_predictions(preds, eval_set.ltv, grid)


def feasible_grid(values: Sequence[float]) -> List[Tuple[float, float]]:
    return [(a, b) for a in values for b in values if a + b <= 1.0 + 1e-12]


def time_train_step(
    batch_size: int,
    hidden_dim: int = 32,
    input_dim: int = 32,
    repeats: int = 3,
    seed: int = 0,
) -> float:
    """Median wall time of one forward/backward/Adam step on a random batch."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch_size, input_dim))
    y = np.where(rng.random(batch_size) < 0.2, rng.lognormal(2.0, 1.0, batch_size), 0.0)
    y[0], y[1] = 5.0, 0.0
    model = CMLTVModel(
        BackboneConfig(input_dim, [hidden_dim, hidden_dim]),
        HeadConfig(head_hidden_dim=hidden_dim),
        seed=seed,
    )
    state = TrainState.create(model.parameters())
    times = []
    for _ in range(repeats + 1):
        t0 = time.perf_counter()
        model.zero_grad()
        bundle = assemble_total(model.forward(Tensor(x), training=True), y)
        bundle.total.backward()
        adam_step(state, {k: p.grad for k, p in state.params.items()}, 1e-3)
        times.append(time.perf_counter() - t0)
    return float(np.median(times[1:]))
