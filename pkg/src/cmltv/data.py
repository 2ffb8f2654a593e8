"""Synthetic zero-inflated LTV data, CSV I/O, splitting and batching."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import stable_sigmoid

logger = logging.getLogger(__name__)

LABEL_COLUMN = "ltv"
DAY_COLUMN = "day"


class DataError(ValueError):
    """Malformed input data or an infeasible data configuration."""


@dataclass
class Dataset:
    features: np.ndarray
    ltv: np.ndarray
    feature_names: List[str]
    day: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.ltv = np.asarray(self.ltv, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != self.ltv.shape[0]:
            raise DataError(f"features {self.features.shape} do not match labels {self.ltv.shape}")
        if len(self.feature_names) != self.features.shape[1]:
            raise DataError("feature_names length does not match feature width")
        if np.any(self.ltv < 0) or not np.all(np.isfinite(self.ltv)):
            raise DataError("ltv labels must be finite and nonnegative")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features must be finite")

    def __len__(self) -> int:
        return len(self.ltv)

    @property
    def z(self) -> np.ndarray:
        return (self.ltv > 0).astype(np.float64)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_pos(self) -> int:
        return int(np.count_nonzero(self.ltv > 0))

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        if index.dtype != bool:
            index = index.astype(np.intp)
        return Dataset(
            self.features[index],
            self.ltv[index],
            list(self.feature_names),
            None if self.day is None else self.day[index],
        )

    def summary(self) -> dict:
        """Counts, positive rate and label quantiles, JSON-serializable."""
        pos = self.ltv[self.ltv > 0]
        qs = [0.5, 0.9, 0.99]
        return {
            "n_samples": len(self),
            "n_features": self.n_features,
            "n_positive": int(len(pos)),
            "positive_rate": float(len(pos) / len(self)) if len(self) else 0.0,
            "ltv_mean": float(self.ltv.mean()) if len(self) else 0.0,
            "positive_ltv_quantiles": {str(q): float(np.quantile(pos, q)) for q in qs} if len(pos) else {},
            "positive_ltv_max": float(pos.max()) if len(pos) else 0.0,
        }


@dataclass
class GeneratorConfig:
    """Knobs of the synthetic generator.

    Positive amounts come from a mixture of lognormal (or gamma) components
    given by base-10 log locations and spreads.  ``signal_strength`` scales the
    slope of the purchase logit on a hidden linear projection of the features;
    the same projection tilts positives toward higher mixture components and
    shifts their log-location, so both tasks carry learnable signal.
    """

    n_samples: int = 100_000
    positive_rate: float = 0.02
    n_numeric: int = 12
    n_categorical: int = 3
    categorical_levels: int = 5
    n_binary: int = 4
    mixture_weights: Sequence[float] = (0.55, 0.32, 0.13)
    mixture_log10_locs: Sequence[float] = (0.7, 1.7, 2.7)
    mixture_log10_spreads: Sequence[float] = (0.12, 0.15, 0.2)
    amount_family: str = "lognormal"
    gamma_shape: float = 20.0
    signal_strength: float = 2.5
    component_tilt: float = 0.6
    location_shift: float = 0.12
    n_days: int = 0
    seed: int = 0

    def __post_init__(self):
        self.mixture_weights = tuple(float(w) for w in self.mixture_weights)
        self.mixture_log10_locs = tuple(float(w) for w in self.mixture_log10_locs)
        self.mixture_log10_spreads = tuple(float(w) for w in self.mixture_log10_spreads)
        self.validate()

    def validate(self) -> None:
        if self.n_samples < 1:
            raise DataError("n_samples must be >= 1")
        if not 0.0 < self.positive_rate < 1.0:
            raise DataError(f"positive_rate must lie in (0, 1), got {self.positive_rate}")
        w = np.asarray(self.mixture_weights)
        if len(w) == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise DataError("mixture weights must be nonnegative and sum to 1")
        if not len(self.mixture_weights) == len(self.mixture_log10_locs) == len(self.mixture_log10_spreads):
            raise DataError("mixture weights, locations and spreads must have equal length")
        if min(self.mixture_log10_spreads) <= 0:
            raise DataError("mixture spreads must be positive")
        if self.amount_family not in ("lognormal", "gamma"):
            raise DataError(f"amount_family must be lognormal or gamma, got {self.amount_family!r}")
        if min(self.n_numeric, self.n_categorical, self.n_binary) < 0:
            raise DataError("feature counts must be >= 0")
        if self.n_numeric + self.n_categorical + self.n_binary == 0:
            raise DataError("at least one feature is required")
        if self.n_categorical and self.categorical_levels < 2:
            raise DataError("categorical_levels must be >= 2")
        if self.signal_strength < 0:
            raise DataError("signal_strength must be >= 0")


def calibrate_intercept(projection: np.ndarray, slope: float, rate: float, max_iter: int = 60) -> float:
    """Bisect the logit offset b so that mean(sigmoid(slope * s + b)) == rate."""
    lo, hi = -60.0, 60.0

    def mean_rate(b):
        return float(stable_sigmoid(slope * projection + b).mean())

    if not mean_rate(lo) <= rate <= mean_rate(hi):
        raise DataError(f"cannot calibrate positive rate {rate} within offset range [{lo}, {hi}]")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mean_rate(mid) < rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _features(config: GeneratorConfig, rng: np.random.Generator) -> Tuple[np.ndarray, List[str]]:
    n = config.n_samples
    blocks, names = [], []
    if config.n_numeric:
        numeric = rng.standard_normal((n, config.n_numeric))
        blocks.append(numeric)
        names += [f"num_{i}" for i in range(config.n_numeric)]
    for j in range(config.n_categorical):
        probs = rng.dirichlet(np.full(config.categorical_levels, 2.0))
        codes = rng.choice(config.categorical_levels, size=n, p=probs)
        blocks.append(np.eye(config.categorical_levels)[codes])
        names += [f"cat_{j}_{k}" for k in range(config.categorical_levels)]
    if config.n_binary:
        rates = rng.uniform(0.1, 0.5, size=config.n_binary)
        blocks.append((rng.random((n, config.n_binary)) < rates).astype(np.float64))
        names += [f"bin_{i}" for i in range(config.n_binary)]
    return np.hstack(blocks), names


def generate(config: GeneratorConfig) -> Dataset:
    config.validate()
    rng = np.random.default_rng(config.seed)
    x, names = _features(config, rng)
    w = rng.standard_normal(x.shape[1])
    s = x @ w
    s = (s - s.mean()) / (s.std() or 1.0)

    slope = config.signal_strength
    offset = calibrate_intercept(s, slope, config.positive_rate)
    purchase = rng.random(len(s)) < stable_sigmoid(slope * s + offset)

    pos = np.flatnonzero(purchase)
    s_pos = s[pos]
    k = len(config.mixture_weights)
    # higher projection tilts toward higher-valued components
    strength = slope * config.component_tilt
    centered = s_pos - (s_pos.mean() if len(s_pos) else 0.0)
    logits = np.log(np.maximum(config.mixture_weights, 1e-300))[None, :] + strength * centered[:, None] * np.arange(k)
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    comp = (rng.random(len(pos))[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
    comp = np.minimum(comp, k - 1)

    locs = np.asarray(config.mixture_log10_locs)[comp] + slope * config.location_shift * centered
    spreads = np.asarray(config.mixture_log10_spreads)[comp]
    if config.amount_family == "lognormal":
        amount = 10.0 ** (locs + spreads * rng.standard_normal(len(pos)))
    else:
        mean_amount = 10.0**locs
        amount = rng.gamma(config.gamma_shape, mean_amount / config.gamma_shape)
    # keep amounts strictly positive and at cent resolution
    amount = np.maximum(np.round(amount, 2), 0.01)

    ltv = np.zeros(len(s))
    ltv[pos] = amount
    day = None
    if config.n_days > 0:
        day = np.sort(rng.integers(0, config.n_days, size=len(s))).astype(np.float64)
    logger.info("generated %d samples, %d positive", len(ltv), len(pos))
    return Dataset(x, ltv, names, day)


# ---------------------------------------------------------------------------
# CSV


def write_csv(dataset: Dataset, path) -> None:
    header = list(dataset.feature_names)
    if dataset.day is not None:
        header.append(DAY_COLUMN)
    header.append(LABEL_COLUMN)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.features[i]]
            if dataset.day is not None:
                row.append(repr(float(dataset.day[i])))
            row.append(repr(float(dataset.ltv[i])))
            writer.writerow(row)


def read_csv(path, schema_path=None) -> Dataset:
    """Parse a CSV whose last column is ``ltv``.

    A column named ``day`` is kept aside for time-based splitting.  An optional
    JSON sidecar ``{"categorical": [column, ...]}`` lists integer-coded columns
    to expand one-hot.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file, expected a header row")
    header = [h.strip() for h in rows[0]]
    if not header or header[-1] != LABEL_COLUMN:
        raise DataError(f"{path}: last header column must be {LABEL_COLUMN!r}, got {header[-1:]}")
    values = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
        for c, cell in enumerate(row):
            try:
                values[r - 2, c] = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {r}, column {header[c]!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(values[r - 2, c]):
                raise DataError(f"{path}: row {r}, column {header[c]!r}: non-finite value")
        if values[r - 2, -1] < 0:
            raise DataError(f"{path}: row {r}: negative ltv {row[-1]!r}")
    if len(values) == 0:
        raise DataError(f"{path}: no data rows")

    categorical = []
    if schema_path is not None:
        with open(schema_path) as fh:
            categorical = list(json.load(fh).get("categorical", []))
        missing = set(categorical) - set(header)
        if missing:
            raise DataError(f"{schema_path}: unknown categorical columns {sorted(missing)}")

    day = None
    blocks, names = [], []
    for c, name in enumerate(header[:-1]):
        col = values[:, c]
        if name == DAY_COLUMN:
            day = col.copy()
        elif name in categorical:
            levels = np.unique(col)
            blocks.append((col[:, None] == levels[None, :]).astype(np.float64))
            names += [f"{name}={lvl:g}" for lvl in levels]
        else:
            blocks.append(col[:, None])
            names.append(name)
    if not blocks:
        raise DataError(f"{path}: no feature columns")
    ds = Dataset(np.hstack(blocks), values[:, -1], names, day)
    logger.info("read %s: %d rows, %d positive", path, len(ds), ds.n_pos)
    return ds


# ---------------------------------------------------------------------------
# splitting and batching


@dataclass
class SplitSpec:
    validation_fraction: float = 0.1
    test_fraction: float = 0.1
    seed: int = 0
    time_based: bool = True

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise DataError("validation_fraction must lie in (0, 1)")
        if not 0.0 <= self.test_fraction < 1.0:
            raise DataError("test_fraction must lie in [0, 1)")
        if self.validation_fraction + self.test_fraction >= 1.0:
            raise DataError("validation and test fractions must sum to < 1")


def split(dataset: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset, Dataset]:
    """Disjoint train/validation/test subsets, deterministic in ``spec.seed``.

    With a day column (and ``time_based``), the last day is the test set and
    the validation set is sampled from the remaining rows; otherwise both are
    random fractions of the whole.  ``test_fraction=0`` yields an empty test set.
    """
    n = len(dataset)
    if n == 0:
        raise DataError("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    if spec.time_based and dataset.day is not None:
        last = dataset.day.max()
        test_idx = np.flatnonzero(dataset.day == last)
        rest = np.flatnonzero(dataset.day != last)
        rest = rest[rng.permutation(len(rest))]
        n_valid = int(round(spec.validation_fraction * len(rest)))
        valid_idx, train_idx = rest[:n_valid], rest[n_valid:]
    else:
        perm = rng.permutation(n)
        n_test = int(round(spec.test_fraction * n))
        n_valid = int(round(spec.validation_fraction * n))
        if spec.test_fraction > 0 and n_test == 0:
            raise DataError(f"test_fraction {spec.test_fraction} yields an empty test split for n={n}")
        test_idx, valid_idx, train_idx = perm[:n_test], perm[n_test : n_test + n_valid], perm[n_test + n_valid :]
    if len(valid_idx) == 0 or len(train_idx) == 0:
        raise DataError(f"split of n={n} leaves an empty train or validation set")
    return tuple(dataset.subset(np.sort(idx)) for idx in (train_idx, valid_idx, test_idx))


@dataclass
class Batch:
    features: np.ndarray
    ltv: np.ndarray
    index: np.ndarray
    n_pos: int = field(init=False)
    n_neg: int = field(init=False)

    def __post_init__(self):
        self.n_pos = int(np.count_nonzero(self.ltv > 0))
        self.n_neg = len(self.ltv) - self.n_pos

    def __len__(self) -> int:
        return len(self.ltv)

    @property
    def z(self) -> np.ndarray:
        return (self.ltv > 0).astype(np.float64)


def batches(dataset: Dataset, batch_size: int, shuffle_seed: Optional[int] = None) -> Iterator[Batch]:
    """Yield consecutive batches; the final batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(dataset)
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield Batch(dataset.features[idx], dataset.ltv[idx], idx)
