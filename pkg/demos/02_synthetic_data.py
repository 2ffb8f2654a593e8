"""
A zero-inflated, multi-peak LTV dataset
=======================================

The generator draws dense features, a purchase indicator from a logistic
function of a hidden projection, and positive amounts from a three-component
lognormal mixture whose component and location also depend on the projection.
"""

import numpy as np

from cmltv.data import GeneratorConfig, SplitSpec, batches, generate, split

config = GeneratorConfig(n_samples=100_000, seed=0)
data = generate(config)

summary = data.summary()
print(f"{summary['n_samples']} rows, {summary['n_features']} features")
print(f"{summary['n_positive']} purchasers ({summary['positive_rate']:.2%})")
print("positive LTV quantiles:", summary["positive_ltv_quantiles"])

# the amounts are long-tailed; on a log scale the mixture shows separate peaks
pos = data.ltv[data.ltv > 0]
counts, edges = np.histogram(np.log10(1 + pos), bins=24)
for c, lo in zip(counts, edges):
    print(f"{lo:5.2f} {'#' * int(60 * c / counts.max())}")

# turning signal_strength to zero removes every link between features and labels
flat = generate(GeneratorConfig(n_samples=20_000, signal_strength=0.0, seed=1))
print("no-signal positive rate:", flat.n_pos / len(flat))

# a day column enables a time split: the last day becomes the test set
dated = generate(GeneratorConfig(n_samples=20_000, n_days=7, seed=2))
train, valid, test = split(dated, SplitSpec())
print("split sizes:", len(train), len(valid), len(test), "test days:", np.unique(test.day))

# batches report their class counts for the contrastive losses
first = next(batches(train, 1024, shuffle_seed=0))
print("first batch:", len(first), "rows,", first.n_pos, "positive,", first.n_neg, "negative")
