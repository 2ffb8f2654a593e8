"""Reusable check routines shared by the unit tests and the acceptance suite."""

import numpy as np

from cmltv import losses as L
from cmltv.autodiff import Tensor
from cmltv.model import BackboneConfig, CMLTVModel, HeadConfig

import helpers as H


def rel_err(a, b, floor=1e-3):
    """Elementwise |a-b| / max(|a|, |b|, floor); the floor turns tiny values into an absolute check."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def random_loss_batch(rng, k=None, num_classes=6):
    k = int(rng.integers(2, 65)) if k is None else k
    y = np.where(rng.random(k) < 0.5, np.round(np.exp(rng.normal(2, 1.5, k)), 2) + 0.01, 0.0)
    if not (y > 0).any():
        y[0] = 3.5
    logits = rng.normal(size=(k, num_classes))
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    return {
        "p": rng.uniform(0.02, 0.98, k),
        "y": y,
        "z": (y > 0).astype(float),
        "k": rng.uniform(0.2, 5.0, k),
        "r": rng.uniform(0.01, 3.0, k),
        "yl": rng.uniform(0.0, 4.0, k),
        "probs": probs,
        "yhat": rng.uniform(0.0, 500.0, k),
    }


def loss_oracle_errors(b):
    """Relative error of each vectorised loss against its scalar-loop oracle."""
    pos = b["y"] > 0
    y_pos = b["y"][pos]
    out = {}
    out["binary_ce"] = (L.binary_ce(Tensor(b["p"]), b["z"]).item(), H.naive_binary_ce(b["p"], b["z"]))
    out["gamma_nll"] = (
        L.gamma_nll(Tensor(b["k"][pos]), Tensor(b["r"][pos]), y_pos).item(),
        H.naive_gamma_nll(b["k"][pos], b["r"][pos], y_pos),
    )
    out["log_mse"] = (L.log_mse(Tensor(b["yl"][pos]), y_pos).item(), H.naive_log_mse(b["yl"][pos], y_pos))
    out["multiclass_ce"] = (
        L.multiclass_ce(Tensor(b["probs"][pos]), y_pos).item(),
        H.naive_multiclass_ce(b["probs"][pos].tolist(), y_pos),
    )
    if 0 < pos.sum() < len(pos):
        out["contrastive_classification"] = (
            L.contrastive_classification(Tensor(b["p"]), b["z"])[0].item(),
            H.naive_contrast_cls(b["p"], b["z"]),
        )
    out["contrastive_regression"] = (
        L.contrastive_regression(Tensor(b["p"]), Tensor(b["yhat"])).item(),
        H.naive_contrast_reg(b["p"], b["yhat"]),
    )
    # the log head feeds g directly; compare against the double loop on 10^g - 1
    out["contrastive_regression_log"] = (
        L.contrastive_regression_log(Tensor(b["p"]), Tensor(b["yl"])).item(),
        H.naive_contrast_reg(b["p"], [10.0**g - 1.0 for g in b["yl"]]),
    )
    return {name: abs(a - n) / max(abs(n), 1e-300) if n != 0 else abs(a) for name, (a, n) in out.items()}


def tiny_model(seed, family="gamma", num_classes=6):
    return CMLTVModel(
        BackboneConfig(5, [6, 4]),
        HeadConfig(head_hidden_dim=3, num_classes=num_classes, distribution=family),
        seed=seed,
    )


def tiny_batch(seed, k=12):
    rng = np.random.default_rng(10_000 + seed)
    x = rng.standard_normal((k, 5))
    y = np.where(np.arange(k) % 3 == 0, np.round(np.exp(rng.normal(2.0, 1.2, k)), 2) + 0.01, 0.0)
    return x, y


def model_term_gradient_errors(seed, family="gamma", h=1e-5):
    """Max relative error, per loss term, of backprop through the full model vs central differences."""
    model = tiny_model(seed, family)
    x, y = tiny_batch(seed)
    params = model.parameters()
    # zero-initialised biases put relu inputs exactly on the kink, where a
    # central difference sees a one-sided slope; jitter every parameter off it
    rng = np.random.default_rng(20_000 + seed)
    for p in params.values():
        p.data = p.data + rng.normal(0.0, 0.1, p.shape)

    def term_values():
        bundle = L.assemble_total(model.forward(x, training=True), y, reduction="mean")
        return bundle.terms

    bundle = L.assemble_total(model.forward(x, training=True), y, reduction="mean")
    analytic = {}
    for name in L.TERMS:
        model.zero_grad()
        bundle.computed[name].backward()
        analytic[name] = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}

    numeric = {name: {k: np.zeros_like(p.data) for k, p in params.items()} for name in L.TERMS}
    for key, p in params.items():
        it = np.nditer(p.data, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p.data[idx]
            p.data[idx] = old + h
            fp = term_values()
            p.data[idx] = old - h
            fm = term_values()
            p.data[idx] = old
            for name in L.TERMS:
                numeric[name][key][idx] = (fp[name] - fm[name]) / (2 * h)

    worst = {}
    for name in L.TERMS:
        errs = [rel_err(analytic[name][k], numeric[name][k]).max() for k in params]
        worst[name] = float(max(errs))
    return worst


def naive_total(outputs, y, reduction):
    """Scalar reconstruction of the training objective from raw head outputs."""
    y = np.asarray(y, dtype=float)
    z = (y > 0).astype(float)
    pos = y > 0
    p = outputs.p_hat.data
    n, n_pos = len(y), int(pos.sum())
    total = 0.0
    if 0 < n_pos < n:
        total += H.naive_contrast_cls(p, z)
    total += H.naive_contrast_reg(p, outputs.y_d.data)
    total += H.naive_contrast_reg(p, 10.0 ** outputs.y_l_log10.data - 1.0)
    total += H.naive_contrast_reg(p, outputs.y_c.data)
    scale_all = n if reduction == "sum" else 1
    scale_pos = n_pos if reduction == "sum" else 1
    total += scale_all * H.naive_binary_ce(p, z)
    if n_pos:
        k, r = (t.data[pos] for t in outputs.dist_params)
        total += scale_pos * H.naive_gamma_nll(k, r, y[pos])
        total += scale_pos * H.naive_log_mse(outputs.y_l_log10.data[pos], y[pos])
        total += scale_pos * H.naive_multiclass_ce(outputs.class_probs.data[pos].tolist(), y[pos])
    return total


def bin_roundtrip_failures(num_classes=16):
    """Count integer labels in [0, 2^16 - 2] whose bin or reconstructed centre is wrong."""
    from cmltv.model import bin_centers, ltv_to_class

    y = np.arange(0, 2**16 - 1)
    c = ltv_to_class(y.astype(float), num_classes)
    expected = np.floor(np.log2(1.0 + y)).astype(int)
    bad = int((c != expected).sum()) + int(((c < 0) | (c > num_classes - 1)).sum())
    centers = bin_centers(num_classes)
    one_hot = np.zeros((len(y), num_classes))
    one_hot[np.arange(len(y)), c] = 1.0
    recon = one_hot @ centers
    want = (3.0 * 2.0**c - 3.0) / 2.0
    bad += int((recon != want).sum())
    bad += int(((recon < 2.0**c - 1) | (recon > 2.0 ** (c + 1) - 2)).sum())
    return bad



def op_gradient_error(build, arrays, seed):
    """Max relative error of backward() vs central differences for sum(build(...) * R)."""
    rng = np.random.default_rng(1000 + seed)
    weights = rng.standard_normal(build(*[Tensor(a) for a in arrays]).shape)

    def f(*raw):
        return float(np.sum(build(*[Tensor(a) for a in raw]).data * weights))

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    (build(*leaves) * weights).sum().backward()
    numeric = H.finite_difference(f, [a.copy() for a in arrays])
    return max(float(rel_err(leaf.grad, num).max()) for leaf, num in zip(leaves, numeric))


def autodiff_cases(seed):
    """(name, build, arrays) for every differentiable op, inputs kept off kinks and clamps."""
    import copy

    from cmltv import autodiff as ad

    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    pos = rng.uniform(0.2, 3.0, (3, 4))
    wide = rng.standard_normal((3, 5)) * 3
    kinked = rng.standard_normal((3, 5))
    kinked = np.where(np.abs(kinked) < 0.05, 0.05 * np.sign(kinked + 1e-12) + kinked, kinked)
    clipped = rng.uniform(-2, 2, (3, 5))
    clipped = np.where(np.abs(np.abs(clipped) - 1.0) < 0.05, 0.0, clipped)
    m1, m2 = rng.standard_normal((4, 3)), rng.standard_normal((3, 2))

    bn = ad.BNState.create(3)
    bn.running_mean = rng.standard_normal(3)
    bn.running_var = rng.uniform(0.5, 2.0, 3)

    def batchnorm(training):
        def build(x, g, beta):
            state = copy.deepcopy(bn)
            state.gamma, state.beta = g, beta
            return ad.batchnorm(x, state, training)

        return build

    bn_args = [rng.standard_normal((6, 3)) * 2 + 1, rng.uniform(0.5, 2.0, 3), rng.standard_normal(3)]
    rows = np.array([2, 0, 2])
    return [
        ("add", lambda x, y: x + y, [a, b]),
        ("sub", lambda x, y: x - y, [a, b]),
        ("mul", lambda x, y: x * y, [a, b]),
        ("div", lambda x, y: x / y, [a, pos]),
        ("scale", lambda x: ad.scale(x, -2.5), [a]),
        ("matmul", lambda x, y: x @ y, [m1, m2]),
        ("relu", ad.relu, [kinked]),
        ("sigmoid", ad.sigmoid, [wide]),
        ("softplus", ad.softplus, [wide]),
        ("softmax", ad.softmax, [wide]),
        ("log", ad.log, [rng.uniform(0.1, 5.0, (3, 5))]),
        ("exp", ad.exp, [rng.standard_normal((3, 5))]),
        ("square", ad.square, [wide]),
        ("clip", lambda x: ad.clip(x, -1.0, 1.0), [clipped]),
        ("lgamma", ad.lgamma_tensor, [rng.uniform(0.05, 20.0, (3, 5))]),
        ("sum", lambda x: ad.sum(x, axis=0), [m1]),
        ("mean", lambda x: ad.mean(x), [m1]),
        ("concat_rows", lambda x, y: ad.concat_rows([x, y]), [m1, rng.standard_normal((2, 3))]),
        ("take", lambda x: ad.slice_rows(x, rows), [m1]),
        ("batchnorm_train", batchnorm(True), bn_args),
        ("batchnorm_eval", batchnorm(False), bn_args),
    ]
