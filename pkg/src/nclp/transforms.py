"""Label-preserving augmentations and label-altering corruptions."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import FeatureMatrix, Graph


@dataclass(frozen=True)
class AugmentConfig:
    p_edge_drop: float = 0.25
    p_feat_mask: float = 0.25
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("p_edge_drop", "p_feat_mask"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")


class CorruptionKind(str, enum.Enum):
    RANDOM_FEAT_RANDOM_EDGE = "random_feat_random_edge"
    SHUFFLE_FEAT_RANDOM_EDGE = "shuffle_feat_random_edge"
    SPARSIFY_FEAT_SPARSIFY_EDGE = "sparsify_feat_sparsify_edge"

    @classmethod
    def parse(cls, value) -> "CorruptionKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {
            "randomfeatrandomedge": cls.RANDOM_FEAT_RANDOM_EDGE,
            "shufflefeatrandomedge": cls.SHUFFLE_FEAT_RANDOM_EDGE,
            "sparsifyfeatsparsifyedge": cls.SPARSIFY_FEAT_SPARSIFY_EDGE,
        }
        return aliases.get(key.replace("_", ""), None) or cls(key)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _mask_columns(x: FeatureMatrix, keep: np.ndarray) -> FeatureMatrix:
    if keep.all():
        return x
    if x.is_sparse:
        return FeatureMatrix(x.to_sparse() @ sp.diags(keep.astype(np.float64)))
    return FeatureMatrix(x.data * keep)


def augment(g: Graph, x: FeatureMatrix, cfg: AugmentConfig) -> tuple[Graph, FeatureMatrix]:
    """Independent edge dropping plus one shared feature-column mask."""
    rng = _rng(cfg.rng_seed)
    keep_edge = rng.random(g.num_edges) >= cfg.p_edge_drop
    keep_col = rng.random(x.cols) >= cfg.p_feat_mask
    g2 = g if keep_edge.all() else Graph._trusted(g.num_nodes, g.edges[keep_edge])
    return g2, _mask_columns(x, keep_col)


def sample_node_pairs(num_nodes: int, count: int, rng, exclude_keys=None) -> np.ndarray:
    """``count`` distinct unordered non-self-loop pairs, uniform, as (u < v) rows.

    Pairs whose key ``u * n + v`` appears in ``exclude_keys`` (sorted) are
    rejected. Draw order is kept so output is a pure function of the rng state.
    """
    n = num_nodes
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if n < 2:
        raise ValueError("need at least two nodes to sample pairs")
    excl = np.zeros(0, dtype=np.int64) if exclude_keys is None else np.asarray(exclude_keys, dtype=np.int64)
    available = n * (n - 1) // 2 - len(excl)
    if count > available:
        raise ValueError(f"cannot sample {count} distinct pairs, only {available} available")
    rng = _rng(rng)
    chosen = np.zeros(0, dtype=np.int64)
    while len(chosen) < count:
        need = count - len(chosen)
        batch = max(2 * need + 16, 64)
        u = rng.integers(0, n, size=batch)
        v = rng.integers(0, n, size=batch)
        ok = u != v
        lo, hi = np.minimum(u[ok], v[ok]), np.maximum(u[ok], v[ok])
        keys = lo * n + hi
        _, first = np.unique(keys, return_index=True)
        keys = keys[np.sort(first)]
        if len(excl):
            pos = np.searchsorted(excl, keys).clip(max=len(excl) - 1)
            keys = keys[excl[pos] != keys]
        if len(chosen):
            keys = keys[~np.isin(keys, chosen)]
        chosen = np.concatenate([chosen, keys[:need]])
    return np.stack([chosen // n, chosen % n], axis=1)


def corrupt(g: Graph, x: FeatureMatrix, kind=CorruptionKind.SHUFFLE_FEAT_RANDOM_EDGE,
            rng_seed=0, sparsify_p: float = 0.95) -> tuple[Graph, FeatureMatrix]:
    kind = CorruptionKind.parse(kind)
    rng = _rng(rng_seed)
    n = g.num_nodes
    if kind is CorruptionKind.SPARSIFY_FEAT_SPARSIFY_EDGE:
        if not 0.0 < sparsify_p < 1.0:
            raise ValueError("sparsify_p must lie in (0, 1)")
        keep = rng.random(g.num_edges) >= sparsify_p
        s = x.to_sparse().copy()
        s.data = s.data * (rng.random(s.nnz) >= sparsify_p)
        s.eliminate_zeros()
        return Graph._trusted(n, g.edges[keep]), FeatureMatrix(s)

    if g.num_edges and n < 2:
        raise ValueError("random-edge corruption needs at least two nodes")
    pairs = sample_node_pairs(n, g.num_edges, rng)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    g2 = Graph._trusted(n, pairs[order])
    if kind is CorruptionKind.RANDOM_FEAT_RANDOM_EDGE:
        x2 = FeatureMatrix(rng.random(x.shape))
    else:
        perm = rng.permutation(n)
        x2 = x.take_rows(perm)
    return g2, x2
