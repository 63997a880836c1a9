"""Synthetic citation-style graphs for tests, demos and offline benchmarks.

A degree-corrected planted partition: nodes carry a class, edges are
homophilous with probability ``homophily``, and each node's bag-of-words
features mix class-topic words with background words. The helpers
:func:`cora_like` and :func:`citeseer_like` match the node, edge and feature
counts (and roughly the words per node) of the two citation datasets.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .graph import FeatureMatrix, Graph


def planted_partition(num_nodes: int, num_edges: int, num_features: int, num_classes: int = 6,
                      homophily: float = 0.8, words_per_node: int = 20, topic_share: float = 0.6,
                      topic_words: int | None = None, degree_exponent: float = 2.5,
                      seed: int = 0) -> tuple[Graph, FeatureMatrix, np.ndarray]:
    """Returns ``(graph, features, labels)``; features are sparse binary."""
    n, m = num_nodes, num_edges
    if m > n * (n - 1) // 2:
        raise ValueError("too many edges for a simple graph")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=n)
    weight = rng.pareto(degree_exponent - 1.0, size=n) + 1.0
    members = [np.flatnonzero(labels == c) for c in range(num_classes)]
    member_p = [weight[idx] / weight[idx].sum() for idx in members]
    p_all = weight / weight.sum()

    keys = np.zeros(0, dtype=np.int64)
    while len(keys) < m:
        batch = 2 * (m - len(keys)) + 64
        u = rng.choice(n, size=batch, p=p_all)
        v = rng.choice(n, size=batch, p=p_all)
        same = rng.random(batch) < homophily
        for c in range(num_classes):
            sel = same & (labels[u] == c)
            if sel.any() and len(members[c]) > 1:
                v[sel] = rng.choice(members[c], size=int(sel.sum()), p=member_p[c])
        ok = u != v
        new = np.minimum(u[ok], v[ok]) * n + np.maximum(u[ok], v[ok])
        _, first = np.unique(new, return_index=True)
        new = new[np.sort(first)]
        new = new[~np.isin(new, keys)]
        keys = np.concatenate([keys, new[: m - len(keys)]])
    edges = np.stack([keys // n, keys % n], axis=1)

    f = num_features
    topic_words = topic_words or max(1, f // (2 * num_classes))
    topics = [rng.choice(f, size=topic_words, replace=False) for _ in range(num_classes)]
    counts = np.maximum(1, rng.poisson(words_per_node, size=n))
    rows, cols = [], []
    for i in range(n):
        k = counts[i]
        n_topic = rng.binomial(k, topic_share)
        words = np.concatenate([rng.choice(topics[labels[i]], size=n_topic),
                                rng.integers(0, f, size=k - n_topic)])
        words = np.unique(words)
        rows.append(np.full(len(words), i))
        cols.append(words)
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    x = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, f))
    return Graph(n, edges), FeatureMatrix(x), labels


def cora_like(seed: int = 0, **kw):
    """2708 nodes, 5278 edges, 1433 binary features, 7 classes."""
    args = dict(num_classes=7, words_per_node=18)
    args.update(kw)
    return planted_partition(2708, 5278, 1433, seed=seed, **args)


def citeseer_like(seed: int = 0, **kw):
    """3327 nodes, 4552 edges, 3703 binary features, 6 classes."""
    args = dict(num_classes=6, words_per_node=32)
    args.update(kw)
    return planted_partition(3327, 4552, 3703, seed=seed, **args)
