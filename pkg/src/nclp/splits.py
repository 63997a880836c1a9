"""Seeded transductive and inductive edge splits.

All fractional counts use floor-then-remainder rounding. Negative pairs are
uniform unordered node pairs that are not edges of the full graph and do not
repeat across the negative sets of one bundle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Graph
from .transforms import sample_node_pairs

BUCKETS = ("obs-obs", "obs-unobs", "unobs-unobs")

_EDGE_SETS = ("train", "valid_pos", "valid_neg", "test_pos", "test_neg", "inference")


def _empty_pairs() -> np.ndarray:
    return np.zeros((0, 2), dtype=np.int64)


@dataclass
class SplitBundle:
    setting: str
    num_nodes: int
    seed: int
    train: np.ndarray
    valid_pos: np.ndarray
    valid_neg: np.ndarray
    test_pos: np.ndarray
    test_neg: np.ndarray
    inference: np.ndarray = field(default_factory=_empty_pairs)
    observed_nodes: np.ndarray | None = None
    unobserved_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    test_buckets: list[str] | None = None
    frac: float | None = None

    def __post_init__(self):
        for name in _EDGE_SETS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 2))
        if self.observed_nodes is None:
            self.observed_nodes = np.arange(self.num_nodes, dtype=np.int64)
        self.observed_nodes = np.asarray(self.observed_nodes, dtype=np.int64)
        self.unobserved_nodes = np.asarray(self.unobserved_nodes, dtype=np.int64)
        if self.test_buckets is not None:
            self.test_buckets = list(self.test_buckets)

    # -- message graphs ---------------------------------------------------

    def training_nodes(self) -> np.ndarray:
        """Nodes visible during training (all nodes when transductive)."""
        return self.observed_nodes

    def training_graph(self) -> tuple[Graph, np.ndarray]:
        """Training edges over the training nodes, relabelled to 0..k-1."""
        nodes = self.training_nodes()
        local = self.local_index()
        return Graph(len(nodes), local[self.train]), nodes

    def local_index(self) -> np.ndarray:
        local = np.full(self.num_nodes, -1, dtype=np.int64)
        local[self.training_nodes()] = np.arange(len(self.training_nodes()))
        return local

    def inference_graph(self) -> Graph:
        """Message graph used to embed nodes for testing (global ids)."""
        return Graph(self.num_nodes, np.concatenate([self.train, self.inference]))

    def bucket_indices(self) -> dict[str, np.ndarray]:
        out = {"all": np.arange(len(self.test_pos))}
        if self.test_buckets is not None:
            tags = np.asarray(self.test_buckets)
            for b in BUCKETS:
                out[b] = np.flatnonzero(tags == b)
        return out

    # -- serialisation ----------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "setting": self.setting,
            "num_nodes": self.num_nodes,
            "seed": self.seed,
            "frac": self.frac,
            "observed_nodes": self.observed_nodes.tolist(),
            "unobserved_nodes": self.unobserved_nodes.tolist(),
            "test_buckets": self.test_buckets,
        }
        for name in _EDGE_SETS:
            doc[name] = getattr(self, name).tolist()
        return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SplitBundle":
        doc = json.loads(text)
        kw = {name: np.array(doc[name], dtype=np.int64).reshape(-1, 2) for name in _EDGE_SETS}
        return cls(
            setting=doc["setting"],
            num_nodes=int(doc["num_nodes"]),
            seed=int(doc["seed"]),
            frac=doc.get("frac"),
            observed_nodes=np.array(doc["observed_nodes"], dtype=np.int64),
            unobserved_nodes=np.array(doc["unobserved_nodes"], dtype=np.int64),
            test_buckets=doc.get("test_buckets"),
            **kw,
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "SplitBundle":
        return cls.from_json(Path(path).read_text())

    def __eq__(self, other) -> bool:
        return isinstance(other, SplitBundle) and self.to_json() == other.to_json()


def _keys(pairs: np.ndarray, n: int) -> np.ndarray:
    p = np.sort(pairs, axis=1)
    return p[:, 0] * n + p[:, 1]


def _sample_negatives(n, count, rng, exclude_keys, nodes=None) -> np.ndarray:
    """Negatives over all nodes, or only among ``nodes`` when given."""
    if nodes is None:
        return sample_node_pairs(n, count, rng, exclude_keys)
    nodes = np.sort(np.asarray(nodes, dtype=np.int64))
    k = len(nodes)
    local = np.full(n, -1, dtype=np.int64)
    local[nodes] = np.arange(k)
    ex = np.sort(exclude_keys)
    ex_pairs = np.stack([ex // n, ex % n], axis=1)
    ex_local = local[ex_pairs]
    ex_local = ex_local[(ex_local >= 0).all(axis=1)]
    pairs = sample_node_pairs(k, count, rng, np.sort(_keys(ex_local, k)))
    return nodes[pairs]


def transductive_split(g: Graph, seed: int = 0, valid_frac: float = 0.05,
                       test_frac: float = 0.10) -> SplitBundle:
    """Shuffle edges, then floor(85%) train, floor(5%) valid, rest test."""
    m = g.num_edges
    if m < 20:
        raise ValueError(f"transductive split needs at least 20 edges, got {m}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(m)
    n_train = math.floor((1.0 - valid_frac - test_frac) * m)
    n_valid = math.floor(valid_frac * m)
    e = g.edges[perm]
    train, valid, test = e[:n_train], e[n_train : n_train + n_valid], e[n_train + n_valid :]
    n = g.num_nodes
    neg = sample_node_pairs(n, len(valid) + len(test), rng, g.edge_keys())
    return SplitBundle(
        setting="transductive",
        num_nodes=n,
        seed=int(seed),
        train=_sorted(train),
        valid_pos=valid,
        valid_neg=neg[: len(valid)],
        test_pos=test,
        test_neg=neg[len(valid) :],
    )


def _sorted(e: np.ndarray) -> np.ndarray:
    return e[np.lexsort((e[:, 1], e[:, 0]))] if len(e) else e


def inductive_split(g: Graph, seed: int = 0, frac: float = 0.3) -> SplitBundle:
    """Observed/unobserved node split with train, inference, valid, test edges.

    1. floor(frac*|E|) edges (and as many negatives) become test edges.
    2. floor(frac*n) nodes become unobserved.
    3. Remaining edges touching an unobserved node go to the inference set.
    4. Of the remaining observed-observed pool, floor(frac*pool) more go to
       the inference set, then floor(frac*rest) to validation; the rest train.
    """
    if not 0.0 < frac <= 0.5:
        raise ValueError("frac must lie in (0, 0.5]")
    rng = np.random.default_rng(seed)
    n, m = g.num_nodes, g.num_edges
    all_keys = g.edge_keys()

    perm = rng.permutation(m)
    n_test = math.floor(frac * m)
    test_pos = g.edges[perm[:n_test]]
    rest = g.edges[perm[n_test:]]
    test_neg = _sample_negatives(n, n_test, rng, all_keys)

    node_perm = rng.permutation(n)
    n_unobs = math.floor(frac * n)
    unobserved = np.sort(node_perm[:n_unobs])
    observed = np.sort(node_perm[n_unobs:])
    is_obs = np.ones(n, dtype=bool)
    is_obs[unobserved] = False

    oo = is_obs[rest].all(axis=1)
    touching = rest[~oo]
    pool = rest[oo]
    pool = pool[rng.permutation(len(pool))]
    n_inf = math.floor(frac * len(pool))
    inference_oo, pool = pool[:n_inf], pool[n_inf:]
    n_valid = math.floor(frac * len(pool))
    valid_pos, train = pool[:n_valid], pool[n_valid:]
    if len(train) == 0:
        raise ValueError("inductive split left no training edges")
    exclude = np.sort(np.concatenate([all_keys, _keys(test_neg, n)]))
    valid_neg = _sample_negatives(n, n_valid, rng, exclude, nodes=observed)

    status = is_obs[test_pos]
    tags = np.where(status.all(axis=1), "obs-obs", np.where(status.any(axis=1), "obs-unobs", "unobs-unobs"))
    return SplitBundle(
        setting="inductive",
        num_nodes=n,
        seed=int(seed),
        frac=float(frac),
        train=_sorted(train),
        valid_pos=valid_pos,
        valid_neg=valid_neg,
        test_pos=test_pos,
        test_neg=test_neg,
        inference=_sorted(np.concatenate([touching, inference_oo])),
        observed_nodes=observed,
        unobserved_nodes=unobserved,
        test_buckets=tags.tolist(),
    )


def check_bundle(bundle: SplitBundle, g: Graph) -> None:
    """Raise AssertionError if any split invariant is violated."""
    n = g.num_nodes
    edge_keys = set(g.edge_keys().tolist())
    pos_sets = ["train", "valid_pos", "test_pos", "inference"]
    seen: set[int] = set()
    for name in pos_sets:
        keys = _keys(getattr(bundle, name), n).tolist()
        assert len(set(keys)) == len(keys), f"{name} has duplicates"
        assert set(keys) <= edge_keys, f"{name} contains non-edges"
        assert not (seen & set(keys)), f"{name} overlaps another edge set"
        seen |= set(keys)
    if bundle.setting == "transductive":
        assert seen == edge_keys, "edge sets do not cover E"
    neg_seen: set[int] = set()
    for name in ("valid_neg", "test_neg"):
        keys = _keys(getattr(bundle, name), n).tolist()
        assert len(set(keys)) == len(keys), f"{name} has duplicates"
        assert not (set(keys) & edge_keys), f"{name} collides with a positive edge"
        assert not (neg_seen & set(keys)), f"{name} overlaps another negative set"
        assert all(u != v for u, v in getattr(bundle, name).tolist()), f"{name} has self-loops"
        neg_seen |= set(keys)
    assert len(bundle.valid_neg) == len(bundle.valid_pos)
    assert len(bundle.test_neg) == len(bundle.test_pos)
    if bundle.setting == "inductive":
        unobs = set(bundle.unobserved_nodes.tolist())
        assert not (set(bundle.train.ravel().tolist()) & unobs), "train edge touches unobserved node"
        assert not (set(bundle.valid_pos.ravel().tolist()) & unobs)
        assert not (set(bundle.valid_neg.ravel().tolist()) & unobs)
        obs = np.ones(n, dtype=bool)
        obs[bundle.unobserved_nodes] = False
        st = obs[bundle.test_pos]
        expect = np.where(st.all(axis=1), "obs-obs", np.where(st.any(axis=1), "obs-unobs", "unobs-unobs"))
        assert list(expect) == bundle.test_buckets, "bucket tags inconsistent with node partition"
