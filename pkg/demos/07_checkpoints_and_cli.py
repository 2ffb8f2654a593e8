"""
Checkpoints and the command line
================================

Checkpoints are flat JSON holding the configuration, every parameter and the
batchnorm running statistics.  The ``cmltv`` command wraps data generation,
training, evaluation, scoring and sweeps; here it is driven in-process.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from cmltv.cli import main
from cmltv.model import BackboneConfig, CMLTVModel, HeadConfig, load_checkpoint, save_checkpoint

work = Path(tempfile.mkdtemp(prefix="cmltv-demo-"))

model = CMLTVModel(BackboneConfig(5, [8]), HeadConfig(head_hidden_dim=4), seed=1)
save_checkpoint(model, work / "model.json")
restored = load_checkpoint(work / "model.json")
x = np.random.default_rng(0).standard_normal((3, 5))
print("round trip exact:", np.array_equal(model.forward(x).y_d.data, restored.forward(x).y_d.data))

small = ["--data.n_samples=5000", "--data.positive_rate=0.1"]
train_args = [
    "--repeat=2",
    "--backbone.hidden_dims=[16,8]",
    "--head.head_hidden_dim=8",
    "--train.batch_size=128",
    "--train.max_epochs=10",
    "--train.learning_rate=0.01",
]

main(["gen-data", *small, f"--paths.data_out={work / 'data.csv'}"])
main(["train", *small, *train_args, f"--paths.report_dir={work / 'run'}"])
print((work / "run" / "summary.txt").read_text())

main(["predict", "--checkpoint", str(work / "run" / "seed_0" / "checkpoint.json"), "--data", str(work / "data.csv"), "--out", str(work / "scored.csv")])
print("scored header tail:", (work / "scored.csv").read_text().splitlines()[0].split(",")[-5:])

main(["sweep", *small, *train_args[1:], f"--paths.report_dir={work / 'sweep'}", "--grid", "0,0.3,0.6"])
points = json.loads((work / "sweep" / "sweep.json").read_text())
print(len(points), "fusion points; best all-sample R2 at alpha =", max(points, key=lambda p: p["report"]["all"]["r2"])["alpha"])
print("outputs in", work)
