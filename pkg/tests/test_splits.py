"""Transductive and inductive splits."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_graph
from nclp.graph import Graph
from nclp.splits import SplitBundle, check_bundle, inductive_split, transductive_split
from nclp.transforms import sample_node_pairs


def graph_with(n, m, seed=0):
    return Graph(n, sample_node_pairs(n, m, np.random.default_rng(seed)))


class TestTransductive:
    def test_cora_counts(self):
        g = graph_with(2708, 5278)
        s = transductive_split(g, 0)
        assert (len(s.train), len(s.valid_pos), len(s.test_pos)) == (4486, 263, 529)
        assert len(s.valid_neg) == 263 and len(s.test_neg) == 529
        check_bundle(s, g)

    def test_same_seed_same_bundle(self):
        g = graph_with(100, 300)
        assert transductive_split(g, 4) == transductive_split(g, 4)
        assert transductive_split(g, 4) != transductive_split(g, 5)

    def test_too_few_edges(self):
        with pytest.raises(ValueError):
            transductive_split(graph_with(10, 19), 0)

    @settings(max_examples=30)
    @given(st.integers(8, 60), st.integers(0, 2**31))
    def test_invariants(self, n, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, n, 0.3)
        if g.num_edges < 20 or g.num_edges > n * (n - 1) // 2 - g.num_edges:
            return
        s = transductive_split(g, seed)
        check_bundle(s, g)
        m = g.num_edges
        assert len(s.train) == math.floor(0.85 * m) and len(s.valid_pos) == math.floor(0.05 * m)


class TestInductive:
    def test_cora_test_count(self):
        g = graph_with(2708, 5278)
        s = inductive_split(g, 0, 0.3)
        assert len(s.test_pos) == 1583 and len(s.test_neg) == 1583
        assert len(s.unobserved_nodes) == math.floor(0.3 * 2708)
        check_bundle(s, g)

    def test_frac_bounds(self):
        g = graph_with(50, 200)
        with pytest.raises(ValueError):
            inductive_split(g, 0, 0.0)
        with pytest.raises(ValueError):
            inductive_split(g, 0, 0.6)

    def test_train_endpoints_observed(self):
        g = graph_with(300, 1200)
        s = inductive_split(g, 1, 0.3)
        unobs = set(s.unobserved_nodes.tolist())
        assert not unobs & set(s.train.ravel().tolist())
        assert not unobs & set(s.valid_neg.ravel().tolist())

    def test_remaining_pool_rule(self):
        g = graph_with(300, 1200)
        s = inductive_split(g, 2, 0.3)
        n_test = math.floor(0.3 * 1200)
        obs = np.zeros(300, dtype=bool)
        obs[s.observed_nodes] = True
        rest_keys = set(g.edge_keys().tolist()) - set((s.test_pos.min(1) * 300 + s.test_pos.max(1)).tolist())
        rest = np.array([(k // 300, k % 300) for k in sorted(rest_keys)])
        touching = (~obs[rest]).any(axis=1).sum()
        pool = len(rest) - touching
        n_inf = math.floor(0.3 * pool)
        n_valid = math.floor(0.3 * (pool - n_inf))
        assert len(s.test_pos) == n_test
        assert len(s.inference) == touching + n_inf
        assert len(s.valid_pos) == n_valid
        assert len(s.train) == pool - n_inf - n_valid

    def test_buckets_partition_test(self):
        g = graph_with(300, 1200)
        s = inductive_split(g, 3, 0.3)
        idx = s.bucket_indices()
        parts = np.concatenate([idx[b] for b in ("obs-obs", "obs-unobs", "unobs-unobs")])
        assert sorted(parts.tolist()) == list(range(len(s.test_pos)))
        assert all(len(idx[b]) > 0 for b in idx)

    def test_training_graph_relabel(self):
        g = graph_with(200, 800)
        s = inductive_split(g, 0, 0.3)
        tg, nodes = s.training_graph()
        assert tg.num_nodes == len(s.observed_nodes)
        back = nodes[tg.edges]
        back.sort(axis=1)
        assert sorted(map(tuple, back.tolist())) == sorted(map(tuple, s.train.tolist()))

    @settings(max_examples=25)
    @given(st.integers(20, 80), st.floats(0.05, 0.5), st.integers(0, 2**31))
    def test_invariants(self, n, frac, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, n, 0.25)
        try:
            s = inductive_split(g, seed, frac)
        except ValueError:
            return  # tiny graphs can leave no training edges
        check_bundle(s, g)


class TestSerialization:
    @pytest.mark.parametrize("setting", ["transductive", "inductive"])
    def test_roundtrip_lossless(self, tmp_path, setting):
        g = graph_with(150, 600)
        s = transductive_split(g, 0) if setting == "transductive" else inductive_split(g, 0, 0.3)
        s.save(tmp_path / "s.json")
        back = SplitBundle.load(tmp_path / "s.json")
        assert back == s
        assert (tmp_path / "s.json").read_bytes() == back.to_json().encode()
        for name in ("train", "valid_pos", "valid_neg", "test_pos", "test_neg", "inference"):
            np.testing.assert_array_equal(getattr(back, name), getattr(s, name))
        assert back.test_buckets == s.test_buckets

    def test_byte_deterministic(self, tmp_path):
        g = graph_with(150, 600)
        inductive_split(g, 7, 0.3).save(tmp_path / "a.json")
        inductive_split(g, 7, 0.3).save(tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
