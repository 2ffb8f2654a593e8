"""
Training with early stopping
============================

Adam, global-norm clipping at 10, and early stopping on the validation loss.
The returned model is the one from the best validation epoch.
"""

from cmltv.data import GeneratorConfig, SplitSpec, generate, split
from cmltv.metrics import evaluate, format_table
from cmltv.model import BackboneConfig, HeadConfig
from cmltv.training import TrainConfig, predict, train

data = generate(GeneratorConfig(n_samples=30_000, positive_rate=0.05, seed=0))
train_set, valid_set, test_set = split(data, SplitSpec(seed=0))

model, history = train(
    train_set,
    valid_set,
    BackboneConfig(data.n_features, [64, 32]),
    HeadConfig(head_hidden_dim=32),
    TrainConfig(batch_size=1024, max_epochs=12, seed=0),
)

for row in history.rows:
    print(f"epoch {row['epoch']:2d}  train {row['train_total']:10.2f}  valid {row['valid_total']:10.2f}  valid AUC {row['valid_auc']:.3f}")

preds = predict(model, test_set)
print(format_table({"test": evaluate(preds.y_hat, test_set.ltv)}))

# every head's score is available, not just the fused one
print("first rows:")
for i in range(5):
    print(f"  p={preds.p_hat[i]:.3f}  y_d={preds.y_d[i]:8.2f}  y_l={preds.y_l[i]:8.2f}  y_c={preds.y_c[i]:8.2f}  fused={preds.y_hat[i]:8.2f}  true={test_set.ltv[i]:.2f}")
