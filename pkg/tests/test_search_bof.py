"""Vocabulary-tree (bag-of-features) index."""

import numpy as np
import pytest

from cuebench.bitvec import DescriptorArray
from cuebench.search import BofIndex, BruteForceIndex, Vocabulary
from cuebench.search.bof import bow_transform, l1_similarity


def cluster_bits(rng, center, count, flip_p):
    flips = rng.random((count, center.size)) < flip_p
    return np.where(flips, 1 - center, center).astype(np.uint8)


def corpus_images(rng, n_images=12, descs=20, nbits=64):
    images = []
    for i in range(n_images):
        bits = rng.integers(0, 2, size=(descs, nbits), dtype=np.uint8)
        images.append((f"img{i:02d}", DescriptorArray.from_bit_matrix(bits)))
    return images


class TestKMajority:
    def test_two_separated_clusters_recovered(self):
        """Two clusters far apart in Hamming space must yield centroids
        within 2 bits of the true centers."""
        rng = np.random.default_rng(41)
        a = np.zeros(64, dtype=np.uint8)
        b = np.ones(64, dtype=np.uint8)
        bits = np.vstack(
            [cluster_bits(rng, a, 40, 0.02), cluster_bits(rng, b, 40, 0.02)]
        )
        arr = DescriptorArray.from_bit_matrix(bits)
        vocab = Vocabulary.train(arr, k=2, depth=1, seed=3)
        assert vocab.word_count == 2
        found = {vocab.centroid(i).popcount() for i in range(1, vocab.node_count)}
        # popcounts near 0 and near 64 identify the recovered centers
        assert min(found) <= 2
        assert max(found) >= 62

    def test_assignment_cost_non_increasing(self):
        """The clustering objective (total Hamming distance to assigned
        centroids) never increases across iterations."""
        rng = np.random.default_rng(43)
        bits = rng.integers(0, 2, size=(120, 96), dtype=np.uint8)
        arr = DescriptorArray.from_bit_matrix(bits)
        words = arr.words

        costs = []
        # re-run the clustering loop manually to observe per-iteration cost
        k = 8
        init = np.random.default_rng(7).choice(120, size=k, replace=False)
        centroids = words[np.sort(init)].copy()
        assignment = np.full(120, -1, dtype=np.int64)
        from cuebench.search.bof import _majority_centroid

        for _ in range(10):
            x = words[:, None, :] ^ centroids[None, :, :]
            d = np.bitwise_count(x).sum(axis=2, dtype=np.int64)
            new_assignment = d.argmin(axis=1)
            costs.append(int(d[np.arange(120), new_assignment].sum()))
            if np.array_equal(new_assignment, assignment):
                break
            assignment = new_assignment
            for c in range(k):
                members = words[assignment == c]
                if len(members):
                    centroids[c] = _majority_centroid(members, 96)
        assert costs == sorted(costs, reverse=True)

    def test_identical_training_descriptors_single_word(self):
        bits = np.tile(np.array([1, 0, 1, 1, 0, 0, 1, 0], dtype=np.uint8), (30, 1))
        arr = DescriptorArray.from_bit_matrix(bits)
        vocab = Vocabulary.train(arr, k=5, depth=2, seed=0)
        assert vocab.word_count == 1
        ids = vocab.word_ids(arr)
        assert set(ids.tolist()) == {0}

    def test_same_seed_is_bit_identical(self):
        rng = np.random.default_rng(47)
        bits = rng.integers(0, 2, size=(200, 128), dtype=np.uint8)
        arr = DescriptorArray.from_bit_matrix(bits)
        a = Vocabulary.train(arr, k=4, depth=2, seed=11)
        b = Vocabulary.train(arr, k=4, depth=2, seed=11)
        assert a.to_bytes() == b.to_bytes()

    def test_rejects_too_few_descriptors_and_bad_k(self):
        arr = DescriptorArray.from_bit_matrix(np.ones((3, 8), dtype=np.uint8))
        with pytest.raises(ValueError, match="at least k"):
            Vocabulary.train(arr, k=5, depth=2)
        with pytest.raises(ValueError, match="k must be"):
            Vocabulary.train(arr, k=1, depth=2)

    def test_tree_respects_branching_and_depth(self):
        rng = np.random.default_rng(53)
        bits = rng.integers(0, 2, size=(500, 64), dtype=np.uint8)
        vocab = Vocabulary.train(
            DescriptorArray.from_bit_matrix(bits), k=3, depth=2, seed=1
        )
        assert vocab.word_count <= 3**2
        for node in vocab._nodes:
            assert len(node.children) <= 3


class TestBowVectors:
    def test_weights_normalized_and_nonnegative(self):
        rng = np.random.default_rng(59)
        bits = rng.integers(0, 2, size=(300, 64), dtype=np.uint8)
        arr = DescriptorArray.from_bit_matrix(bits)
        vocab = Vocabulary.train(arr, k=5, depth=2, seed=2)
        assert np.all(vocab.idf >= 0)
        bow = bow_transform(arr.subset(np.arange(50)), vocab)
        assert bow
        assert all(w > 0 for w in bow.values())
        assert sum(bow.values()) == pytest.approx(1.0)

    def test_l1_similarity_identity_and_disjoint(self):
        a = {0: 0.5, 3: 0.5}
        assert l1_similarity(a, dict(a)) == pytest.approx(1.0)
        assert l1_similarity(a, {7: 1.0}) == 0.0
        # mixed case: shared word 3 only
        b = {3: 0.25, 8: 0.75}
        assert l1_similarity(a, b) == pytest.approx(0.25)


class TestSerialization:
    def test_round_trip_lossless(self, tmp_path):
        rng = np.random.default_rng(61)
        bits = rng.integers(0, 2, size=(400, 256), dtype=np.uint8)
        arr = DescriptorArray.from_bit_matrix(bits)
        vocab = Vocabulary.train(arr, k=6, depth=3, seed=9)
        path = tmp_path / "vocab.bin"
        vocab.save(path)
        loaded = Vocabulary.load(path)
        assert loaded.to_bytes() == vocab.to_bytes()
        assert np.array_equal(loaded.idf, vocab.idf)
        probe = arr.subset(np.arange(64))
        assert np.array_equal(loaded.word_ids(probe), vocab.word_ids(probe))

    def test_bad_magic_rejected(self):
        with pytest.raises(ValueError, match="magic"):
            Vocabulary.from_bytes(b"XXXX" + b"\x00" * 32)


class TestBofIndex:
    def test_identical_image_scores_maximal(self):
        rng = np.random.default_rng(67)
        images = corpus_images(rng)
        index = BofIndex(branching_factor=5, depth=2, seed=4)
        for image_id, arr in images:
            index.insert(image_id, arr)
        ranked = index.rank_images(images[3][1])
        assert ranked[0][0] == "img03"
        assert ranked[0][1] == pytest.approx(1.0)

    def test_inverted_index_matches_dense_oracle(self):
        """Inverted-index scores equal dense BowVector comparison on every
        pair of a 20-image corpus."""
        rng = np.random.default_rng(71)
        images = corpus_images(rng, n_images=20, descs=15)
        index = BofIndex(branching_factor=5, depth=2, top_n=20, seed=5)
        for image_id, arr in images:
            index.insert(image_id, arr)
        index.rank_images(images[0][1])  # force training
        vocab = index.vocabulary
        bows = {image_id: bow_transform(arr, vocab) for image_id, arr in images}
        for image_id, arr in images:
            ranked = dict(index.rank_images(arr, top_n=20))
            dense = {
                other: l1_similarity(bows[image_id], bows[other])
                for other, _ in images
            }
            for other, score in ranked.items():
                assert score == pytest.approx(dense[other])
            # every image sharing a word must be present in the ranking
            sharers = {o for o, s in dense.items() if s > 0}
            assert sharers == set(ranked)

    def test_non_sharing_image_never_outranks_sharers(self):
        rng = np.random.default_rng(73)
        # two descriptor populations with disjoint vocabulary regions
        lo = rng.integers(0, 2, size=(30, 64), dtype=np.uint8)
        lo[:, 32:] = 0
        hi = rng.integers(0, 2, size=(30, 64), dtype=np.uint8)
        hi[:, :32] = 0
        index = BofIndex(branching_factor=2, depth=1, seed=6)
        index.insert("low", DescriptorArray.from_bit_matrix(lo))
        index.insert("high", DescriptorArray.from_bit_matrix(hi))
        ranked = index.rank_images(DescriptorArray.from_bit_matrix(lo[:10]))
        names = [image_id for image_id, _ in ranked]
        assert names[0] == "low"
        if "high" in names:
            assert names.index("high") > names.index("low")

    def test_query_synthesizes_descriptor_matches(self):
        rng = np.random.default_rng(79)
        images = corpus_images(rng, n_images=8, descs=12)
        index = BofIndex(branching_factor=4, depth=2, top_n=3, seed=7)
        bf = BruteForceIndex()
        for image_id, arr in images:
            index.insert(image_id, arr)
            bf.insert(image_id, arr)
        res = index.query("probe", images[5][1], tau=10)
        assert res.matches
        for m in res.matches:
            assert m.distance == 0
            assert m.reference_image_id == "img05"
        # descriptor ids are global, matching the brute-force convention
        exact = bf.query("probe", images[5][1], tau=10)
        assert [m.reference_descriptor_id for m in res.matches] == [
            m.reference_descriptor_id for m in exact.matches
        ]
        assert res.image_scores[0] == ("img05", 12)

    def test_images_inserted_after_training_are_searchable(self):
        rng = np.random.default_rng(83)
        images = corpus_images(rng, n_images=10, descs=10)
        index = BofIndex(branching_factor=4, depth=2, retrain_every=1000, seed=8)
        for image_id, arr in images[:9]:
            index.insert(image_id, arr)
        index.rank_images(images[0][1])  # trains on the first 9 images
        late_id, late_arr = images[9]
        index.insert(late_id, late_arr)
        ranked = index.rank_images(late_arr)
        assert ranked[0][0] == late_id

    def test_retrain_counter_triggers_rebuild(self):
        rng = np.random.default_rng(89)
        images = corpus_images(rng, n_images=7, descs=10)
        index = BofIndex(branching_factor=3, depth=1, retrain_every=3, seed=9)
        for image_id, arr in images[:3]:
            index.insert(image_id, arr)
        index.rank_images(images[0][1])
        first_vocab = index.vocabulary.to_bytes()
        for image_id, arr in images[3:6]:
            index.insert(image_id, arr)
        index.rank_images(images[0][1])  # 3 inserts since training -> retrain
        assert index.vocabulary.to_bytes() != first_vocab

    def test_external_vocabulary_is_never_retrained(self):
        rng = np.random.default_rng(97)
        images = corpus_images(rng, n_images=6, descs=10)
        train = DescriptorArray(
            np.vstack([arr.words for _, arr in images]), 64
        )
        vocab = Vocabulary.train(train, k=4, depth=2, seed=10)
        index = BofIndex(retrain_every=1, vocabulary=vocab)
        for image_id, arr in images:
            index.insert(image_id, arr)
        index.rank_images(images[0][1])
        assert index.vocabulary is vocab

    def test_augmented_descriptors_need_no_code_changes(self):
        """The backend only sees packed bits, so augmented descriptors of a
        different width work unchanged."""
        rng = np.random.default_rng(101)
        images = [
            (f"img{i}", DescriptorArray.from_bit_matrix(
                rng.integers(0, 2, size=(10, 272), dtype=np.uint8)))
            for i in range(6)
        ]
        index = BofIndex(branching_factor=3, depth=2, seed=11)
        for image_id, arr in images:
            index.insert(image_id, arr)
        res = index.query("probe", images[2][1], tau=27.2)
        assert res.image_scores[0][0] == "img2"

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            BofIndex(branching_factor=1)
        with pytest.raises(ValueError):
            BofIndex(depth=0)
        with pytest.raises(ValueError):
            BofIndex(top_n=0)
        with pytest.raises(ValueError):
            BofIndex(retrain_every=0)
