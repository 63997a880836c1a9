"""Graph and feature storage, dataset ingestion, GCN propagation matrix.

A dataset directory holds three files::

    meta.json      {"num_nodes": int, "num_features": int}
    graph.tsv      one "u<TAB>v" pair per line, 0-based ids
    features.csv   num_nodes lines of num_features comma-separated decimals
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class DatasetError(ValueError):
    """Malformed dataset directory contents."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _canonical_edges(num_nodes: int, edges) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= num_nodes):
        raise ValueError(f"edge endpoint out of range [0, {num_nodes})")
    if np.any(e[:, 0] == e[:, 1]):
        raise ValueError("self-loops are not allowed")
    e = np.sort(e, axis=1)
    keys = np.unique(e[:, 0] * num_nodes + e[:, 1])
    return np.stack([keys // num_nodes, keys % num_nodes], axis=1)


class Graph:
    """Immutable undirected simple graph.

    ``edges`` stores each edge once as ``(u, v)`` with ``u < v``, sorted
    lexicographically. ``csr`` is the symmetric binary adjacency.
    """

    __slots__ = ("num_nodes", "edges", "_csr")

    def __init__(self, num_nodes: int, edges=()):
        if num_nodes < 0:
            raise ValueError("num_nodes must be non-negative")
        self.num_nodes = int(num_nodes)
        self.edges = _readonly(_canonical_edges(self.num_nodes, edges))
        self._csr = None

    @classmethod
    def _trusted(cls, num_nodes: int, edges: np.ndarray) -> "Graph":
        # edges must already be canonical (a subset of canonical edges is)
        g = cls.__new__(cls)
        g.num_nodes = int(num_nodes)
        g.edges = _readonly(np.ascontiguousarray(edges, dtype=np.int64).reshape(-1, 2))
        g._csr = None
        return g

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def csr(self) -> sp.csr_matrix:
        if self._csr is None:
            self._csr = _symmetric_csr(self.num_nodes, self.edges, np.ones(2 * self.num_edges))
        return self._csr

    def degrees(self) -> np.ndarray:
        return np.diff(self.csr.indptr)

    def neighbors(self, u: int) -> np.ndarray:
        c = self.csr
        return c.indices[c.indptr[u] : c.indptr[u + 1]]

    def edge_keys(self) -> np.ndarray:
        """Scalar key ``u * n + v`` per stored edge, ascending."""
        return self.edges[:, 0] * self.num_nodes + self.edges[:, 1]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Graph)
            and self.num_nodes == other.num_nodes
            and np.array_equal(self.edges, other.edges)
        )

    def __repr__(self) -> str:
        return f"Graph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


def _symmetric_csr(n: int, edges: np.ndarray, data: np.ndarray, diag=None) -> sp.csr_matrix:
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    if diag is not None:
        idx = np.arange(n)
        rows = np.concatenate([rows, idx])
        cols = np.concatenate([cols, idx])
        data = np.concatenate([data, diag])
    order = np.lexsort((cols, rows))
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return sp.csr_matrix((data[order], cols[order], indptr), shape=(n, n))


class FeatureMatrix:
    """Node feature matrix, one row per node.

    Values may be given dense or as a scipy sparse matrix; both views are
    available and cached. Bag-of-words features stay sparse, which keeps the
    first GCN layer cheap.
    """

    __slots__ = ("rows", "cols", "_dense", "_sparse", "_cache")

    def __init__(self, values):
        if sp.issparse(values):
            s = sp.csr_matrix(values, dtype=np.float64)
            s.sum_duplicates()
            s.sort_indices()
            if not np.all(np.isfinite(s.data)):
                raise ValueError("feature values must be finite")
            self._sparse, self._dense = s, None
            self.rows, self.cols = s.shape
        else:
            d = np.array(values, dtype=np.float64, ndmin=2)
            if d.ndim != 2:
                raise ValueError("features must be a 2-d matrix")
            if not np.all(np.isfinite(d)):
                raise ValueError("feature values must be finite")
            self._dense, self._sparse = _readonly(d), None
            self.rows, self.cols = d.shape
        self._cache = {}

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def is_sparse(self) -> bool:
        return self._sparse is not None

    @property
    def data(self) -> np.ndarray:
        """Dense row-major values."""
        if self._dense is None:
            self._dense = _readonly(self._sparse.toarray())
        return self._dense

    def to_sparse(self) -> sp.csr_matrix:
        if self._sparse is None:
            s = sp.csr_matrix(self._dense)
            s.sort_indices()
            self._sparse = s
        return self._sparse

    def operand(self, dtype=np.float32):
        """Matrix used as the constant left factor of ``X @ W``.

        Sparse storage stays sparse when at most a quarter of entries are
        non-zero; otherwise a dense array is returned.
        """
        key = np.dtype(dtype).str
        if key not in self._cache:
            if self._sparse is not None and self._sparse.nnz <= 0.25 * self.rows * self.cols:
                self._cache[key] = self._sparse.astype(dtype)
            else:
                self._cache[key] = np.ascontiguousarray(self.data, dtype=dtype)
        return self._cache[key]

    def take_rows(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        if self._sparse is not None:
            return FeatureMatrix(self._sparse[idx])
        return FeatureMatrix(self._dense[idx])

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureMatrix) or other.shape != self.shape:
            return False
        a, b = self.to_sparse(), other.to_sparse()
        return (a != b).nnz == 0

    def __repr__(self) -> str:
        kind = "sparse" if self.is_sparse else "dense"
        return f"FeatureMatrix({self.rows}x{self.cols}, {kind})"


class NormalizedAdjacency:
    """Symmetric-normalized ``D^-1/2 (A + I) D^-1/2`` in CSR form."""

    __slots__ = ("matrix",)

    def __init__(self, matrix: sp.csr_matrix):
        self.matrix = matrix

    @property
    def shape(self):
        return self.matrix.shape

    def astype(self, dtype) -> "NormalizedAdjacency":
        if self.matrix.dtype == dtype:
            return self
        return NormalizedAdjacency(self.matrix.astype(dtype))

    def __matmul__(self, other):
        return self.matrix @ other

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def normalize_adjacency(g: Graph, dtype=np.float64) -> NormalizedAdjacency:
    deg = np.bincount(g.edges.ravel(), minlength=g.num_nodes).astype(np.float64) + 1.0
    u, v = g.edges[:, 0], g.edges[:, 1]
    w = 1.0 / np.sqrt(deg[u] * deg[v])
    m = _symmetric_csr(g.num_nodes, g.edges, np.concatenate([w, w]), diag=1.0 / deg)
    return NormalizedAdjacency(m.astype(dtype, copy=False))


def subgraph(g: Graph, nodes) -> tuple[Graph, np.ndarray]:
    """Induced subgraph on ``nodes`` (relabelled in the given order)."""
    nodes = np.asarray(nodes, dtype=np.int64)
    local = np.full(g.num_nodes, -1, dtype=np.int64)
    local[nodes] = np.arange(len(nodes))
    e = local[g.edges]
    e = e[(e >= 0).all(axis=1)]
    return Graph(len(nodes), e), nodes


# ---------------------------------------------------------------------------
# dataset directories


def load_dataset(dir_path) -> tuple[Graph, FeatureMatrix]:
    d = Path(dir_path)
    for name in ("meta.json", "graph.tsv", "features.csv"):
        if not (d / name).is_file():
            raise FileNotFoundError(f"{d / name} not found")
    meta = json.loads((d / "meta.json").read_text())
    n, f = int(meta["num_nodes"]), int(meta["num_features"])

    pairs = []
    with open(d / "graph.tsv") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok:
                continue
            if len(tok) != 2:
                raise DatasetError(f"graph.tsv:{lineno}: expected two node ids")
            try:
                u, v = int(tok[0]), int(tok[1])
            except ValueError:
                raise DatasetError(f"graph.tsv:{lineno}: non-integer node id") from None
            if not (0 <= u < n and 0 <= v < n):
                raise DatasetError(f"graph.tsv:{lineno}: node id out of range [0, {n})")
            if u == v:
                raise DatasetError(f"graph.tsv:{lineno}: self-loop ({u}, {v})")
            pairs.append((u, v))
    graph = Graph(n, np.array(pairs, dtype=np.int64).reshape(-1, 2))

    try:
        x = np.loadtxt(d / "features.csv", delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DatasetError(f"features.csv: {exc}") from None
    if n == 0:
        x = x.reshape(0, f)
    if x.shape[0] != n:
        raise DatasetError(f"features.csv has {x.shape[0]} rows, meta says {n}")
    if x.shape[1] != f:
        raise DatasetError(f"features.csv has {x.shape[1]} columns, meta says {f}")
    if not np.all(np.isfinite(x)):
        raise DatasetError("features.csv contains non-finite values")
    nnz = np.count_nonzero(x)
    features = FeatureMatrix(sp.csr_matrix(x) if nnz <= 0.25 * x.size else x)
    return graph, features


def save_dataset(dir_path, graph: Graph, features: FeatureMatrix) -> None:
    if features.rows != graph.num_nodes:
        raise ValueError("feature rows must equal num_nodes")
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    (d / "meta.json").write_text(
        json.dumps({"num_nodes": graph.num_nodes, "num_features": features.cols}) + "\n"
    )
    with open(d / "graph.tsv", "w") as fh:
        fh.writelines(f"{u}\t{v}\n" for u, v in graph.edges.tolist())
    x = features.data
    integral = np.all(x == np.round(x))
    np.savetxt(d / "features.csv", x, delimiter=",", fmt="%d" if integral else "%.9g")
