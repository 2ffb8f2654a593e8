"""
Reverse-mode autodiff on numpy arrays
=====================================

Every model and loss in the package is built from a small tape of float64
operations.  This walk-through builds a tiny graph, runs backward, and checks
the result against central differences.
"""

import numpy as np

from cmltv import autodiff as ad
from cmltv.autodiff import Tensor

# leaves that want gradients are marked explicitly
x = Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]), requires_grad=True)
w = Tensor(np.array([[0.3], [-0.7]]), requires_grad=True)

# forward: a logistic unit averaged over two rows
p = ad.sigmoid(x @ w)
loss = ad.mean(-ad.log(p))
print("loss:", loss.item())

loss.backward()
print("d loss / d w:\n", w.grad)

# the same derivative by central differences
h = 1e-6
numeric = np.zeros_like(w.data)
for i in range(2):
    up, down = w.data.copy(), w.data.copy()
    up[i, 0] += h
    down[i, 0] -= h
    f_up = ad.mean(-ad.log(ad.sigmoid(Tensor(x.data) @ Tensor(up)))).item()
    f_down = ad.mean(-ad.log(ad.sigmoid(Tensor(x.data) @ Tensor(down)))).item()
    numeric[i, 0] = (f_up - f_down) / (2 * h)
print("finite differences:\n", numeric)
print("max abs gap:", np.abs(numeric - w.grad).max())

# a value used twice accumulates both contributions
a = Tensor(np.array(2.0), requires_grad=True)
(a * a + a).backward()
print("d(a^2 + a)/da at a=2:", a.grad)

# log-gamma is hand-written (Lanczos) and differentiable through digamma
k = Tensor(np.array([0.5, 1.0, 4.0]), requires_grad=True)
ad.sum(ad.lgamma_tensor(k)).backward()
print("lgamma:", ad.lgamma(k.data), "digamma:", k.grad)

# forward results are checked: NaN or Inf raises instead of propagating
try:
    ad.exp(Tensor(np.array([1000.0])))
except ad.NonFiniteError as exc:
    print("caught:", exc)
