"""Independent oracles shared by the test modules.

Nothing here imports the engine's gradient code: finite differences perturb
raw arrays, and the naive losses are plain-Python scalar loops.
"""

import math

import numpy as np


def finite_difference(f, arrays, h=1e-5):
    """Central differences of scalar f(*arrays) w.r.t. every entry of every array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + h
            fp = f(*arrays)
            a[idx] = old - h
            fm = f(*arrays)
            a[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def assert_grad_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    bad = (diff > atol) & (diff > rtol * scale)
    assert not bad.any(), f"max rel err {np.max(diff / np.maximum(scale, 1e-300))}, analytic={analytic[bad][:5]}, numeric={numeric[bad][:5]}"


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def clamp(x, lo, hi):
    return min(max(x, lo), hi)


def naive_binary_ce(p, z):
    total = 0.0
    for pi, zi in zip(p, z):
        pi = clamp(pi, 1e-7, 1 - 1e-7)
        total += -zi * math.log(pi) - (1 - zi) * math.log(1 - pi)
    return total / len(p)


def naive_gamma_nll(k, r, y):
    total = 0.0
    for ki, ri, yi in zip(k, r, y):
        total -= ki * math.log(ri) + (ki - 1) * math.log(yi) - ri * yi - math.lgamma(ki)
    return total / len(y)


def naive_log_mse(pred, y):
    return sum((p - math.log10(1 + t)) ** 2 for p, t in zip(pred, y)) / len(y)


def naive_class(y, num_classes):
    c = 0
    while 2 ** (c + 1) <= 1 + y:
        c += 1
    return min(c, num_classes - 1)


def naive_multiclass_ce(probs, y):
    total = 0.0
    for row, t in zip(probs, y):
        total -= math.log(max(row[naive_class(t, len(row))], 1e-12))
    return total / len(y)


def naive_contrast_cls(p, z):
    pos = [pi for pi, zi in zip(p, z) if zi]
    neg = [pi for pi, zi in zip(p, z) if not zi]
    pp = clamp(sum(pos) / len(pos), 1e-7, 1 - 1e-7)
    pn = clamp(sum(neg) / len(neg), 1e-7, 1 - 1e-7)
    gap = math.log(pp / (1 - pp)) - math.log(pn / (1 - pn))
    return -math.log(sigmoid(gap))


def naive_contrast_reg(p, yhat):
    """The literal O(K^2) double sum."""
    k = len(p)
    total = 0.0
    for i in range(k):
        for j in range(k):
            total += (p[i] - p[j]) * (math.log10(1 + yhat[i]) - math.log10(1 + yhat[j]))
    return -total / (k * k)


def naive_auc(score, z):
    """Fraction of (positive, negative) pairs ranked correctly, ties counting one half."""
    pos = [s for s, t in zip(score, z) if t]
    neg = [s for s, t in zip(score, z) if not t]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def kde_peaks(values, grid_size=400):
    """Number of local maxima of a Gaussian KDE (Silverman bandwidth) on an even grid."""
    from scipy.stats import gaussian_kde

    values = np.asarray(values, dtype=float)
    grid = np.linspace(values.min(), values.max(), grid_size)
    dens = gaussian_kde(values, bw_method="silverman")(grid)
    inner = (dens[1:-1] > dens[:-2]) & (dens[1:-1] > dens[2:])
    return int(inner.sum())
