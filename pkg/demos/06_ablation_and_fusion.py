"""
Ablations and the fusion sweep
==============================

Loss terms can be switched off one by one, and the fusion weights can be swept
after training without retraining.
"""

from cmltv.data import GeneratorConfig, SplitSpec, generate, split
from cmltv.losses import CONTRASTIVE_TERMS
from cmltv.metrics import evaluate, format_table
from cmltv.model import BackboneConfig, HeadConfig
from cmltv.training import TrainConfig, feasible_grid, predict, sweep_predictions, train

data = generate(GeneratorConfig(n_samples=30_000, positive_rate=0.05, seed=3))
train_set, valid_set, test_set = split(data, SplitSpec(seed=3))
backbone = BackboneConfig(data.n_features, [64, 32])
heads = HeadConfig(head_hidden_dim=32)

rows = {}
for label, disabled in (("full", ()), ("no contrast", CONTRASTIVE_TERMS)):
    model, _ = train(train_set, valid_set, backbone, heads, TrainConfig(batch_size=1024, max_epochs=8, disabled_terms=disabled))
    rows[label] = evaluate(predict(model, test_set).y_hat, test_set.ltv)
    if label == "full":
        full_model = model
print(format_table(rows))

# fusion is post hoc: score once, blend many times
preds = predict(full_model, test_set)
grid = feasible_grid([0.0, 0.3, 0.6, 1.0])
results = sweep_predictions(preds, test_set.ltv, grid)
print(format_table({f"a={a:g} b={b:g}": r for a, b, r in results}))
