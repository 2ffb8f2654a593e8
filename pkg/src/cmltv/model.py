"""Multi-view LTV network: shared backbone plus purchase and regression heads."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Protocol

import numpy as np

from . import autodiff as ad
from .autodiff import BNState, DimensionError, Tensor

LN10 = math.log(10.0)
DISTRIBUTIONS = ("gamma", "lognormal", "exponential")
CHECKPOINT_FORMAT = "cmltv-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class BackboneConfig:
    input_dim: int
    hidden_dims: List[int] = field(default_factory=lambda: [256, 128])
    use_batchnorm: bool = True

    def __post_init__(self):
        self.hidden_dims = [int(d) for d in self.hidden_dims]
        if self.input_dim < 1 or not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError(f"backbone dims must be >= 1: {self.input_dim}, {self.hidden_dims}")


@dataclass
class HeadConfig:
    head_hidden_dim: int = 64
    num_classes: int = 16
    alpha: float = 0.3
    beta: float = 0.3
    distribution: str = "gamma"

    def __post_init__(self):
        if self.head_hidden_dim < 1:
            raise ValueError("head_hidden_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        check_fusion_weights(self.alpha, self.beta)
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution head {self.distribution!r}; choose from {DISTRIBUTIONS}")


def check_fusion_weights(alpha: float, beta: float) -> None:
    if alpha < 0 or beta < 0 or alpha + beta > 1 + 1e-12:
        raise ValueError(f"fusion weights need alpha, beta >= 0 and alpha + beta <= 1, got ({alpha}, {beta})")


def bin_centers(num_classes: int) -> np.ndarray:
    """Midpoints of the log2 bins [2^i - 1, 2^(i+1) - 2], i = 0..C-1."""
    i = np.arange(num_classes, dtype=np.float64)
    return (3.0 * 2.0**i - 3.0) / 2.0


def ltv_to_class(y, num_classes: int) -> np.ndarray:
    """Bin index floor(log2(1 + y)), clamped into the top bin."""
    y = np.asarray(y, dtype=np.float64)
    # frexp is exact for integers, unlike floor(log2(.)) near powers of two
    _, e = np.frexp(1.0 + y)
    return np.minimum(e - 1, num_classes - 1).astype(np.int64)


def fuse_prediction(p_hat, y_d, y_l, y_c, alpha: float, beta: float) -> np.ndarray:
    """Purchase probability times the weighted blend of the three regression scores."""
    check_fusion_weights(alpha, beta)
    p_hat, y_d, y_l, y_c = (np.asarray(a, dtype=np.float64) for a in (p_hat, y_d, y_l, y_c))
    return p_hat * (alpha * y_d + beta * y_l + (1.0 - alpha - beta) * y_c)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Backbone(Protocol):
    out_dim: int

    def __call__(self, x: Tensor, training: bool) -> Tensor: ...

    def parameters(self) -> Dict[str, Tensor]: ...


class MLPBackbone:
    """Stack of linear -> batchnorm -> relu layers."""

    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        self.config = config
        self.weights: List[Tensor] = []
        self.biases: List[Tensor] = []
        self.norms: List[Optional[BNState]] = []
        dims = [config.input_dim] + config.hidden_dims
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            self.weights.append(Tensor(glorot(rng, a, b), requires_grad=True, name=f"backbone.{i}.W"))
            self.biases.append(Tensor(np.zeros(b), requires_grad=True, name=f"backbone.{i}.b"))
            self.norms.append(BNState.create(b, f"backbone.{i}.bn") if config.use_batchnorm else None)
        self.out_dim = dims[-1]

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise DimensionError(f"expected features of width {self.config.input_dim}, got shape {x.shape}")
        h = x
        for W, b, bn in zip(self.weights, self.biases, self.norms):
            h = h @ W + b
            if bn is not None:
                h = ad.batchnorm(h, bn, training)
            h = ad.relu(h)
        return h

    def parameters(self) -> Dict[str, Tensor]:
        out = {}
        for W, b, bn in zip(self.weights, self.biases, self.norms):
            out[W.name] = W
            out[b.name] = b
            if bn is not None:
                out[bn.gamma.name] = bn.gamma
                out[bn.beta.name] = bn.beta
        return out

    def norm_states(self) -> Dict[str, BNState]:
        return {f"backbone.{i}.bn": bn for i, bn in enumerate(self.norms) if bn is not None}


class _Head:
    """relu(h W + b) followed by a linear output layer."""

    def __init__(self, name: str, in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator):
        self.W = Tensor(glorot(rng, in_dim, hidden), requires_grad=True, name=f"{name}.W")
        self.b = Tensor(np.zeros(hidden), requires_grad=True, name=f"{name}.b")
        self.w = Tensor(glorot(rng, hidden, out_dim), requires_grad=True, name=f"{name}.w")
        self.b_out = Tensor(np.zeros(out_dim), requires_grad=True, name=f"{name}.b_out")

    def __call__(self, h: Tensor) -> Tensor:
        return ad.relu(h @ self.W + self.b) @ self.w + self.b_out

    def parameters(self) -> Dict[str, Tensor]:
        return {t.name: t for t in (self.W, self.b, self.w, self.b_out)}


@dataclass
class HeadOutputs:
    """Per-sample outputs of every head for one forward pass.

    ``dist_params`` is a tuple of per-sample tensors: (shape, rate) for gamma,
    (mu, sigma) for lognormal, (rate,) for exponential.
    """

    p_hat: Tensor
    dist_params: tuple
    y_d: Tensor
    y_l_log10: Tensor
    class_probs: Tensor
    y_c: Tensor
    distribution: str = "gamma"

    @property
    def y_l_linear(self) -> np.ndarray:
        return np.power(10.0, self.y_l_log10.data) - 1.0


class CMLTVModel:
    """Backbone plus purchase classifier and three regression views."""

    def __init__(self, backbone_config: BackboneConfig, head_config: HeadConfig, seed: int = 0):
        self.backbone_config = backbone_config
        self.head_config = head_config
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.backbone = MLPBackbone(backbone_config, rng)
        d, hd = self.backbone.out_dim, head_config.head_hidden_dim
        n_dist = 1 if head_config.distribution == "exponential" else 2
        self.purchase = _Head("purchase", d, hd, 1, rng)
        self.dist = _Head("dist", d, hd, n_dist, rng)
        self.log = _Head("log", d, hd, 1, rng)
        self.cls = _Head("cls", d, hd, head_config.num_classes, rng)
        self.centers = bin_centers(head_config.num_classes)

    @property
    def distribution(self) -> str:
        return self.head_config.distribution

    def parameters(self) -> Dict[str, Tensor]:
        params = dict(self.backbone.parameters())
        for head in (self.purchase, self.dist, self.log, self.cls):
            params.update(head.parameters())
        return params

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def norm_states(self) -> Dict[str, BNState]:
        return self.backbone.norm_states()

    # -- heads ---------------------------------------------------------------

    def forward_backbone(self, x, training: bool = False) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        return self.backbone(x, training)

    def classify_purchase(self, h: Tensor) -> Tensor:
        return ad.sigmoid(self.purchase(h))[:, 0]

    def regress_distribution(self, h: Tensor):
        """Return (distribution parameters, mean prediction)."""
        raw = self.dist(h)
        return distribution_head(raw, self.distribution)

    def regress_log(self, h: Tensor) -> Tensor:
        return ad.relu(self.log(h))[:, 0]

    def regress_classification(self, h: Tensor):
        probs = ad.softmax(self.cls(h))
        return probs, probs @ Tensor(self.centers[:, None])

    def forward(self, x, training: bool = False) -> HeadOutputs:
        h = self.forward_backbone(x, training)
        params, y_d = self.regress_distribution(h)
        probs, y_c = self.regress_classification(h)
        return HeadOutputs(
            p_hat=self.classify_purchase(h),
            dist_params=params,
            y_d=y_d,
            y_l_log10=self.regress_log(h),
            class_probs=probs,
            y_c=y_c[:, 0],
            distribution=self.distribution,
        )

    __call__ = forward

    # -- persistence ---------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "params": {k: v.data.copy() for k, v in self.parameters().items()},
            "bn": {
                k: {"running_mean": s.running_mean.copy(), "running_var": s.running_var.copy()}
                for k, s in self.norm_states().items()
            },
        }

    def load_state_dict(self, state: dict) -> None:
        params = self.parameters()
        missing = set(params) - set(state["params"])
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, p in params.items():
            value = np.asarray(state["params"][k], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"{k}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.data = value.copy()
        for k, s in self.norm_states().items():
            s.running_mean = np.asarray(state["bn"][k]["running_mean"], dtype=np.float64).copy()
            s.running_var = np.asarray(state["bn"][k]["running_var"], dtype=np.float64).copy()

    def config_dict(self) -> dict:
        return {"backbone": asdict(self.backbone_config), "head": asdict(self.head_config), "seed": self.seed}


def distribution_head(raw: Tensor, family: str):
    """Map raw head outputs to positive distribution parameters and their mean."""
    if family == "gamma":
        theta = ad.softplus(raw)
        shape, rate = theta[:, 0], theta[:, 1]
        return (shape, rate), shape / rate
    if family == "lognormal":
        mu = raw[:, 0]
        sigma = ad.softplus(raw[:, 1])
        log_mean = ad.clip(mu + ad.scale(ad.square(sigma), 0.5), hi=60.0)
        return (mu, sigma), ad.exp(log_mean)
    if family == "exponential":
        rate = ad.softplus(raw)[:, 0]
        return (rate,), 1.0 / rate
    raise ValueError(f"unknown distribution {family!r}")


def save_checkpoint(model: CMLTVModel, path, extra: Optional[dict] = None) -> None:
    """Write config, parameters and running statistics as flat JSON."""
    with open(path, "w") as fh:
        fh.write(checkpoint_json(model, extra))


def checkpoint_json(model: CMLTVModel, extra: Optional[dict] = None) -> str:
    state = model.state_dict()
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config_dict(),
        "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in state["params"].items()},
        "bn": {k: {kk: vv.tolist() for kk, vv in s.items()} for k, s in state["bn"].items()},
    }
    if extra:
        doc["extra"] = extra
    return json.dumps(doc, sort_keys=True)


def load_checkpoint(path) -> CMLTVModel:
    with open(path) as fh:
        doc = json.load(fh)
    return model_from_checkpoint(doc)


def model_from_checkpoint(doc: dict) -> CMLTVModel:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a cmltv checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    cfg = doc["config"]
    model = CMLTVModel(BackboneConfig(**cfg["backbone"]), HeadConfig(**cfg["head"]), seed=cfg["seed"])
    params = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["params"].items()}
    model.load_state_dict({"params": params, "bn": doc["bn"]})
    return model
