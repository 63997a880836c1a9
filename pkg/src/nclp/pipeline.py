"""Train -> freeze -> decode -> evaluate, over seeds and a hyperparameter grid."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import itertools
import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import load_checkpoint, save_checkpoint
from .graph import FeatureMatrix, Graph, load_dataset, normalize_adjacency
from .linkpred import DecoderMlp, ScoredEdges, export_similarity_histogram, hits_at_k, train_decoder
from .methods import PAPER_EPOCHS, Method, TrainConfig, TrainData, build_method, train, training_view
from .splits import SplitBundle, inductive_split, transductive_split

HITS_K = 50
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


@dataclass
class MetricRecord:
    method: str
    dataset: str
    setting: str
    bucket: str
    seed: int
    metric: str
    value: float
    config_hash: str
    checkpoint: str
    split: str

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), separators=(",", ":"))


@dataclass
class RunConfig:
    """One experiment: a dataset, a method, a setting and a grid of overrides."""

    dataset: str
    method: str = "bgrl"
    setting: str = "transductive"
    frac: float = 0.3
    split_seed: int = 0
    split: str | None = None
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    train: dict = field(default_factory=dict)
    grid: dict[str, list] = field(default_factory=dict)
    max_cells: int = 16
    out_dir: str = "runs"
    paper_epochs: bool = False

    def __post_init__(self):
        if self.setting not in ("transductive", "inductive"):
            raise ValueError("setting must be transductive or inductive")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        n = self.num_cells()
        if n > self.max_cells:
            raise ValueError(f"grid has {n} cells, more than the cap of {self.max_cells}")

    def num_cells(self) -> int:
        n = 1
        for values in self.grid.values():
            n *= len(values)
        return n

    def cells(self) -> list[dict]:
        keys = sorted(self.grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.grid[k] for k in keys))]

    def train_config(self, cell: dict | None = None) -> TrainConfig:
        base = dict(self.train)
        base.update(cell or {})
        cfg = TrainConfig.from_mapping(base, method=self.method)
        if self.paper_epochs and cfg.epochs is None and not cfg.supervised:
            cfg = dataclasses.replace(cfg, epochs=PAPER_EPOCHS)
        return cfg

    @classmethod
    def from_mapping(cls, doc: dict, **overrides) -> "RunConfig":
        """Top-level run keys; any other key is a training hyperparameter."""
        names = {f.name for f in dataclasses.fields(cls)}
        run = {k: v for k, v in doc.items() if k in names}
        extra = {k: v for k, v in doc.items() if k not in names}
        run["train"] = {**run.get("train", {}), **extra}
        run.update({k: v for k, v in overrides.items() if v is not None})
        if "dataset" not in run:
            raise KeyError("config needs a dataset path")
        return cls(**run)


def config_hash(cfg: TrainConfig) -> str:
    text = json.dumps(cfg.to_dict(), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def make_split(g: Graph, setting: str, seed: int = 0, frac: float = 0.3) -> SplitBundle:
    if setting == "transductive":
        return transductive_split(g, seed)
    if setting == "inductive":
        return inductive_split(g, seed, frac)
    raise ValueError(f"unknown setting {setting!r}")


# ---------------------------------------------------------------------------
# evaluation of one trained encoder


@dataclass
class Evaluation:
    scored: ScoredEdges
    valid_hits: float
    metrics: dict[str, dict[str, float]]
    decoder: DecoderMlp


def test_embeddings(method: Method, graph: Graph, features: FeatureMatrix, split: SplitBundle) -> np.ndarray:
    """Embeddings over all nodes using the inference-time message graph."""
    if split.setting == "transductive":
        mg = Graph(split.num_nodes, split.train)
    else:
        mg = split.inference_graph()
    return method.encoder.embed(normalize_adjacency(mg), features)


def evaluate(method: Method, graph: Graph, features: FeatureMatrix, split: SplitBundle,
             cfg: TrainConfig, seed: int = 0) -> Evaluation:
    """Freeze the encoder, fit a decoder on training edges, score the test set."""
    g_train, x_train, _ = training_view(graph, features, split)
    h_train = method.encoder.embed(normalize_adjacency(g_train), x_train)
    local = split.local_index()
    vpos, vneg = local[split.valid_pos], local[split.valid_neg]
    if cfg.method == "e2e":
        dec = method.decoder
    else:
        dec = DecoderMlp.init(h_train.shape[1], cfg.decoder_hidden, seed=[seed, 3], dtype=cfg.np_dtype)
        train_decoder(dec, h_train, g_train.edges, vpos, vneg, epochs=cfg.decoder_epochs,
                      patience=cfg.decoder_patience, lr=cfg.decoder_lr, seed=seed)
    valid_hits = hits_at_k(dec.decode(h_train, vpos), dec.decode(h_train, vneg), HITS_K) if len(vpos) else float("nan")

    h = test_embeddings(method, graph, features, split)
    pairs = np.concatenate([split.test_pos, split.test_neg])
    labels = np.concatenate([np.ones(len(split.test_pos), dtype=np.int64),
                             np.zeros(len(split.test_neg), dtype=np.int64)])
    pos_buckets = split.test_buckets if split.test_buckets is not None else ["all"] * len(split.test_pos)
    buckets = np.array(list(pos_buckets) + ["neg"] * len(split.test_neg))
    scored = ScoredEdges(pairs=pairs, scores=dec.decode(h, pairs), labels=labels, buckets=buckets)
    return Evaluation(scored=scored, valid_hits=valid_hits, metrics=scored.metrics(HITS_K), decoder=dec)


def records_for(ev: Evaluation, *, method: str, dataset: str, setting: str, seed: int,
                chash: str, checkpoint: str, split_path: str) -> list[MetricRecord]:
    common = dict(method=method, dataset=dataset, setting=setting, seed=seed,
                  config_hash=chash, checkpoint=checkpoint, split=split_path)
    out = [MetricRecord(bucket="valid", metric=f"hits@{HITS_K}", value=ev.valid_hits, **common)]
    for bucket, vals in ev.metrics.items():
        for metric, value in vals.items():
            out.append(MetricRecord(bucket=bucket, metric=metric, value=value, **common))
    return out


def load_method(checkpoint, in_dim: int, cfg: TrainConfig, seed: int = 0) -> Method:
    m = build_method(in_dim, cfg, seed)
    m.load_state(load_checkpoint(checkpoint))
    return m


# ---------------------------------------------------------------------------
# full pipeline


@dataclass
class PipelineResult:
    records: list[MetricRecord]
    best_cell: dict
    best_hash: str
    summary_csv: str
    metrics_path: Path


def _load_or_make_split(cfg: RunConfig, g: Graph, out: Path) -> tuple[SplitBundle, str]:
    if cfg.split and Path(cfg.split).exists():
        return SplitBundle.load(cfg.split), str(cfg.split)
    bundle = make_split(g, cfg.setting, cfg.split_seed, cfg.frac)
    path = Path(cfg.split) if cfg.split else out / f"split-{cfg.setting}-{cfg.split_seed}.json"
    bundle.save(path)
    return bundle, str(path)


def run_pipeline(cfg: RunConfig, log=print) -> PipelineResult:
    """Every (grid cell, seed): train, checkpoint, decode, evaluate, log.

    Metric records are appended to ``metrics.jsonl`` as they are produced.
    The best cell is the one with the highest mean validation Hits@50.
    """
    out = Path(cfg.out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    g, x = load_dataset(cfg.dataset)
    dataset = Path(cfg.dataset).name
    split, split_path = _load_or_make_split(cfg, g, out)
    if split.setting != cfg.setting:
        raise ValueError(f"split file is {split.setting}, run asks for {cfg.setting}")
    metrics_path = out / "metrics.jsonl"
    metrics_path.write_text("")

    records: list[MetricRecord] = []
    cells = cfg.cells()
    hashes = []
    for cell in cells:
        tcfg = cfg.train_config(cell)
        chash = config_hash(tcfg)
        hashes.append(chash)
        for seed in cfg.seeds:
            t = time.perf_counter()
            res = train(g, x, split, tcfg, seed)
            ckpt = out / "checkpoints" / f"{cfg.method}-{chash}-seed{seed}.nclp"
            save_checkpoint(ckpt, res.method.state_params())
            ev = evaluate(res.method, g, x, split, tcfg, seed)
            recs = records_for(ev, method=cfg.method, dataset=dataset, setting=cfg.setting, seed=seed,
                               chash=chash, checkpoint=str(ckpt), split_path=split_path)
            with open(metrics_path, "a") as fh:
                fh.writelines(r.to_json() + "\n" for r in recs)
            records.extend(recs)
            if log is not None:
                overall = ev.metrics["all"][f"hits@{HITS_K}"]
                log(f"{cfg.method} {chash} {cell} seed={seed}: valid hits@{HITS_K}={ev.valid_hits:.4f} "
                    f"test hits@{HITS_K}={overall:.4f} ({time.perf_counter() - t:.1f}s)")

    def mean_valid(chash):
        vals = [r.value for r in records if r.config_hash == chash and r.bucket == "valid"]
        return float(np.nanmean(vals)) if vals else float("-inf")

    best = max(range(len(cells)), key=lambda i: mean_valid(hashes[i]))
    summary = summarize(records, selected=hashes[best])
    (out / "summary.csv").write_text(summary)
    return PipelineResult(records, cells[best], hashes[best], summary, metrics_path)


def summarize(records: list[MetricRecord], selected: str | None = None) -> str:
    """Mean and std over seeds per (config, bucket, metric)."""
    groups: dict[tuple, list[float]] = {}
    for r in records:
        key = (r.method, r.dataset, r.setting, r.config_hash, r.bucket, r.metric)
        groups.setdefault(key, []).append(r.value)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "dataset", "setting", "config_hash", "bucket", "metric", "mean", "std", "n", "selected"])
    for key in sorted(groups):
        vals = groups[key]
        std = statistics.stdev(vals) if len(vals) > 1 else 0.0
        w.writerow([*key, f"{statistics.fmean(vals):.6f}", f"{std:.6f}", len(vals),
                    int(selected is not None and key[3] == selected)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# timing


@dataclass
class BenchRow:
    method: str
    epochs: int
    runs: int
    median_epoch_ms: float
    std_epoch_ms: float
    median_total_ms: float
    setup_ms: float


def benchmark(graph: Graph, features: FeatureMatrix, split: SplitBundle | None, methods,
              base: TrainConfig | dict | None = None, epochs: int = 20, runs: int = 5,
              warmup: int = 1) -> list[BenchRow]:
    """Wall-clock per training epoch, median over ``runs`` runs per method.

    Only the training step is timed: no validation or early stopping.
    ``warmup`` epochs per run are excluded from the per-epoch figure.
    """
    g, x, _ = training_view(graph, features, split)
    rows = []
    base = base.to_dict() if isinstance(base, TrainConfig) else dict(base or {})
    for name in methods:
        cfg = TrainConfig.from_mapping({**base, "method": name, "epochs": epochs})
        per_epoch, totals, setups = [], [], []
        for run in range(runs):
            t0 = time.perf_counter()
            data = TrainData(g, x)
            m = build_method(x.cols, cfg, seed=run)
            rng = np.random.default_rng([run, 1])
            setups.append((time.perf_counter() - t0) * 1e3)
            times = []
            for epoch in range(epochs):
                t = time.perf_counter()
                m.step(data, rng, epoch, epochs)
                times.append((time.perf_counter() - t) * 1e3)
            totals.append(sum(times))
            timed = times[warmup:] if len(times) > warmup else times
            if timed:
                per_epoch.append(statistics.median(timed))
        rows.append(BenchRow(
            method=name, epochs=epochs, runs=runs,
            median_epoch_ms=statistics.median(per_epoch) if per_epoch else 0.0,
            std_epoch_ms=statistics.stdev(per_epoch) if len(per_epoch) > 1 else 0.0,
            median_total_ms=statistics.median(totals),
            setup_ms=statistics.median(setups),
        ))
    return rows


def bench_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = [f.name for f in dataclasses.fields(BenchRow)]
    w.writerow(names)
    for r in rows:
        w.writerow([f"{v:.3f}" if isinstance(v, float) else v for v in (getattr(r, n) for n in names)])
    return buf.getvalue()


def similarity_histogram(method: Method, graph: Graph, features: FeatureMatrix, split: SplitBundle,
                         bins: int = 50):
    """Test positives vs test negatives, cosine of test-time embeddings."""
    h = test_embeddings(method, graph, features, split)
    return export_similarity_histogram(h, split.test_pos, split.test_neg, bins)
