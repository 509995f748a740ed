"""Bit-routing binary search tree index."""

import numpy as np
import pytest

from cuebench.bitvec import DescriptorArray
from cuebench.search import BruteForceIndex, BstIndex
from cuebench.search.bst import _Inner, _Leaf

from _oracles import match_result_as_dict, random_images_and_queries


def as_dicts(result):
    return [match_result_as_dict(m) for m in result.matches]


class TestDegenerateEquivalence:
    def test_unbounded_leaf_equals_brute_force(self):
        """With no leaf-size bound the tree never splits, so the single
        bucket must reproduce brute-force results exactly."""
        rng = np.random.default_rng(17)
        for trial in range(10):
            images, queries = random_images_and_queries(rng, nbits=96)
            bf = BruteForceIndex()
            bst = BstIndex(max_leaf_size=None)
            for image_id, arr in images:
                bf.insert(image_id, arr)
                bst.insert(image_id, arr)
            assert bst.depth() == 0
            for qid, arr, tau in queries:
                a = bf.query(qid, arr, tau)
                b = bst.query(qid, arr, tau)
                assert as_dicts(a) == as_dicts(b)
                assert a.image_scores == b.image_scores


class TestRouting:
    def test_self_recall_is_total(self):
        """Every stored descriptor routes to its own leaf, so querying the
        stored set verbatim finds each at distance zero."""
        rng = np.random.default_rng(23)
        bits = rng.integers(0, 2, size=(500, 128), dtype=np.uint8)
        arr = DescriptorArray.from_bit_matrix(bits)
        bst = BstIndex(max_leaf_size=20)
        bst.insert("ref", arr)
        res = bst.query("q", arr, tau=0)
        assert len(res.matches) == 500
        assert all(m.distance == 0 for m in res.matches)
        assert [m.reference_descriptor_id for m in res.matches] == list(range(500))

    def test_structural_invariants(self):
        """Full-tree audit: children agree with their split bits, split bits
        never repeat along a path, and leaves respect the size bound."""
        rng = np.random.default_rng(29)
        bst = BstIndex(max_leaf_size=10)
        for i in range(8):
            bits = rng.integers(0, 2, size=(40, 64), dtype=np.uint8)
            bst.insert(f"img{i}", DescriptorArray.from_bit_matrix(bits))

        def bit_of(row, bit):
            return int((bst._words[row, bit // 64] >> np.uint64(bit % 64)) & np.uint64(1))

        seen_rows = []

        def audit(node, path_bits, constraints):
            if isinstance(node, _Leaf):
                assert len(node.rows) <= 10
                for row in node.rows:
                    for bit, value in constraints.items():
                        assert bit_of(row, bit) == value
                seen_rows.extend(node.rows)
                return
            assert isinstance(node, _Inner)
            assert node.bit not in path_bits
            audit(node.zero, path_bits | {node.bit}, {**constraints, node.bit: 0})
            audit(node.one, path_bits | {node.bit}, {**constraints, node.bit: 1})

        audit(bst._root, set(), {})
        assert sorted(seen_rows) == list(range(8 * 40))
        assert bst.depth() >= 1

    def test_split_prefers_balanced_bit(self):
        """A bucket whose bit 3 splits it exactly in half must split there
        rather than on a skewed bit."""
        bits = np.zeros((12, 8), dtype=np.uint8)
        bits[:6, 3] = 1  # perfectly balanced
        bits[:2, 5] = 1  # skewed 2/12
        bits[:, 0] = 1  # uniform: unusable
        bst = BstIndex(max_leaf_size=11)
        bst.insert("ref", DescriptorArray.from_bit_matrix(bits))
        assert isinstance(bst._root, _Inner)
        assert bst._root.bit == 3

    def test_no_split_when_all_bits_uniform(self):
        """Identical descriptors offer no splitting bit, so the bucket may
        exceed the bound instead of recursing forever."""
        bits = np.ones((30, 16), dtype=np.uint8)
        bst = BstIndex(max_leaf_size=5)
        bst.insert("ref", DescriptorArray.from_bit_matrix(bits))
        assert bst.depth() == 0
        assert bst.leaf_sizes() == [30]
        res = bst.query("q", DescriptorArray.from_bit_matrix(bits[:1]), tau=0)
        assert len(res.matches) == 1
        assert res.matches[0].reference_descriptor_id == 0  # tie -> lowest id

    def test_single_path_descent_is_approximate(self):
        """The true nearest neighbor may sit behind a different split value,
        in which case it is invisible to the single-path search."""
        bits = np.zeros((8, 8), dtype=np.uint8)
        bits[:4, 0] = 1  # bit 0 splits 4/4
        bits[4:, 1:4] = 1  # zero-side rows carry extra set bits
        bst = BstIndex(max_leaf_size=4)
        bst.insert("ref", DescriptorArray.from_bit_matrix(bits))
        assert isinstance(bst._root, _Inner) and bst._root.bit == 0
        # query sits on the one-side of bit 0 but is closest to row 4
        q = np.zeros((1, 8), dtype=np.uint8)
        q[0, 0] = 1
        q[0, 1:4] = 1
        res = bst.query("q", DescriptorArray.from_bit_matrix(q), tau=8)
        bf = BruteForceIndex()
        bf.insert("ref", DescriptorArray.from_bit_matrix(bits))
        exact = bf.query("q", DescriptorArray.from_bit_matrix(q), tau=8)
        assert res.matches[0].distance > exact.matches[0].distance


class TestRecallFloor:
    def test_recall_at_one_vs_brute_force(self):
        """On a mildly noisy benchmark the single-path search must agree
        with brute force on at least half the queries."""
        rng = np.random.default_rng(31)
        db_bits = rng.integers(0, 2, size=(2000, 128), dtype=np.uint8)
        flips = rng.random(db_bits.shape) < 0.05
        q_bits = np.where(flips, 1 - db_bits, db_bits).astype(np.uint8)
        bf = BruteForceIndex()
        bst = BstIndex(max_leaf_size=100)
        db = DescriptorArray.from_bit_matrix(db_bits)
        bf.insert("ref", db)
        bst.insert("ref", db)
        queries = DescriptorArray.from_bit_matrix(q_bits)
        exact = bf.query("q", queries, tau=128)
        approx = bst.query("q", queries, tau=128)
        exact_by_q = {m.query_descriptor_index: m.reference_descriptor_id for m in exact.matches}
        approx_by_q = {m.query_descriptor_index: m.reference_descriptor_id for m in approx.matches}
        agree = sum(
            1 for q, ref in exact_by_q.items() if approx_by_q.get(q) == ref
        )
        assert agree / len(exact_by_q) >= 0.5


class TestValidation:
    def test_rejects_bad_leaf_size(self):
        with pytest.raises(ValueError):
            BstIndex(max_leaf_size=0)
        with pytest.raises(ValueError):
            BstIndex(max_leaf_size=-3)

    def test_duplicate_image_rejected(self):
        arr = DescriptorArray.from_bit_matrix(np.ones((2, 8), dtype=np.uint8))
        bst = BstIndex()
        bst.insert("a", arr)
        with pytest.raises(ValueError, match="already inserted"):
            bst.insert("a", arr)

    def test_width_mismatch_rejected(self):
        bst = BstIndex()
        bst.insert("a", DescriptorArray.from_bit_matrix(np.ones((2, 8), dtype=np.uint8)))
        with pytest.raises(ValueError, match="does not match"):
            bst.query("q", DescriptorArray.from_bit_matrix(np.ones((1, 16), dtype=np.uint8)), 2)
