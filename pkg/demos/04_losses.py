"""
Supervised and contrastive losses
=================================

The purchase head is trained with binary cross-entropy on every sample.  The
three regressors are supervised on purchasers only.  Two contrastive terms tie
the heads together: the mean purchase probability of purchasers should beat
that of non-purchasers, and each regressor's ranking should agree with the
purchase probabilities.
"""

import numpy as np

from cmltv import losses as L
from cmltv.autodiff import Tensor
from cmltv.model import BackboneConfig, CMLTVModel, HeadConfig

p = Tensor([0.8, 0.2])
print("BCE:", L.binary_ce(p, [1, 0]).item())
print("gamma NLL at k=r=y=1:", L.gamma_nll(Tensor([1.0]), Tensor([1.0]), [1.0]).item())
print("log MSE, prediction 0 for y=99:", L.log_mse(Tensor([0.0]), [99.0]).item())

loss, skipped = L.contrastive_classification(p, [1, 0])
print("classification contrast:", loss.item(), "skipped:", skipped)
loss, skipped = L.contrastive_classification(p, [1, 1])
print("single-class batch:", loss.item(), "skipped:", skipped)

# agreeing order gives a negative (good) value, reversed order a positive one
print("agreeing ranks:", L.contrastive_regression(Tensor([0.9, 0.1]), Tensor([99.0, 9.0])).item())
print("reversed ranks:", L.contrastive_regression(Tensor([0.1, 0.9]), Tensor([99.0, 9.0])).item())

# the pairwise sum runs in linear time; compare with the explicit double loop
rng = np.random.default_rng(0)
pp, yy = rng.random(500), rng.exponential(50, 500)
g = np.log10(1 + yy)
pairwise = -np.sum((pp[:, None] - pp[None, :]) * (g[:, None] - g[None, :])) / len(pp) ** 2
print("linear form:", L.contrastive_regression(Tensor(pp), Tensor(yy)).item(), "pairwise:", pairwise)

# the full objective from one forward pass, with positives masked for the regressors
model = CMLTVModel(BackboneConfig(6, [16, 8]), HeadConfig(head_hidden_dim=8), seed=0)
x = rng.standard_normal((32, 6))
y = np.where(rng.random(32) < 0.25, rng.lognormal(2.5, 1.0, 32), 0.0)
bundle = L.assemble_total(model.forward(x, training=True), y)
print(f"{bundle.n_pos} positives of {bundle.n_all}")
for name, value in bundle.terms.items():
    print(f"  {name:20s} {value: .5f}")
