"""
Sweeps, metric logs and timing
==============================

Writes a small dataset to disk, sweeps two learning rates for T-BGRL over two
seeds, prints the summary table, then times one epoch of each method.
The same steps from the shell:

    nclp split --dataset DIR --out split.json
    nclp sweep --config sweep.json --out-dir runs/
    nclp bench --dataset DIR --methods bgrl,tbgrl,mlgcn
"""

import json
import tempfile
from pathlib import Path

from nclp.graph import save_dataset
from nclp.pipeline import RunConfig, bench_csv, benchmark, run_pipeline
from nclp.synthetic import planted_partition

work = Path(tempfile.mkdtemp(prefix="nclp-demo-"))
g, x, _ = planted_partition(400, 1200, 200, num_classes=4, words_per_node=10, seed=1)
save_dataset(work / "toy", g, x)

cfg = RunConfig(
    dataset=str(work / "toy"),
    method="tbgrl",
    seeds=[0, 1],
    train={"epochs": 100, "hidden_dim": 64, "embed_dim": 64, "pred_hidden": 64, "decoder_epochs": 200},
    grid={"lr": [1e-3, 5e-3]},
    out_dir=str(work / "runs"),
)
result = run_pipeline(cfg)
print("\nbest cell:", result.best_cell, result.best_hash)
print(result.summary_csv)

first = json.loads(result.metrics_path.read_text().splitlines()[0])
print("a metric record:", json.dumps(first, indent=1))

rows = benchmark(g, x, None, ["bgrl", "tbgrl", "gbt", "ccassg", "grace", "mlgcn", "e2e"],
                 {"hidden_dim": 64, "embed_dim": 64}, epochs=10, runs=3)
print(bench_csv(rows))
print("outputs under", work)
