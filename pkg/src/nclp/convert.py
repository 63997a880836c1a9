"""Convert a Planetoid dump (``ind.<name>.*`` pickles) to the dataset layout.

The Planetoid release stores ``x``, ``tx``, ``allx`` (sparse features),
``graph`` (dict of adjacency lists) and ``test.index``. Rows of ``tx`` are
placed at the ids in ``test.index``; Citeseer has test ids with no feature
row, which get all-zero features.
"""

from __future__ import annotations

import pickle
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import FeatureMatrix, Graph, save_dataset


def _load(path: Path):
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def read_planetoid(raw_dir, name: str) -> tuple[Graph, FeatureMatrix]:
    raw = Path(raw_dir)
    allx = sp.csr_matrix(_load(raw / f"ind.{name}.allx"))
    tx = sp.csr_matrix(_load(raw / f"ind.{name}.tx"))
    adjacency = _load(raw / f"ind.{name}.graph")
    test_index = np.loadtxt(raw / f"ind.{name}.test.index", dtype=np.int64, ndmin=1)

    lo, hi = int(test_index.min()), int(test_index.max())
    n = max(allx.shape[0] + (hi - lo + 1), max(adjacency) + 1)
    f = allx.shape[1]
    feats = sp.lil_matrix((n, f))
    feats[: allx.shape[0]] = allx
    # tx rows belong to test ids in file order
    feats[test_index] = tx
    x = sp.csr_matrix(feats)

    edges = [(u, v) for u, nbrs in adjacency.items() for v in nbrs if u != v]
    e = np.array(edges, dtype=np.int64).reshape(-1, 2)
    return Graph(n, e), FeatureMatrix(x)


def convert_planetoid(raw_dir, name: str, out_dir) -> tuple[Graph, FeatureMatrix]:
    g, x = read_planetoid(raw_dir, name)
    save_dataset(out_dir, g, x)
    return g, x


def main(argv=None) -> int:
    import argparse

    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("raw_dir")
    ap.add_argument("name", help="cora, citeseer or pubmed")
    ap.add_argument("out_dir")
    args = ap.parse_args(argv)
    g, x = convert_planetoid(args.raw_dir, args.name, args.out_dir)
    print(f"{args.name}: {g.num_nodes} nodes, {g.num_edges} edges, {x.cols} features")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
