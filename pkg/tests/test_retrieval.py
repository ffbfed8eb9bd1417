"""Tests for gallery retrieval; rankings are checked against a brute-force
cosine scan written inline.
"""

import numpy as np
import pytest

from gepc.errors import InvalidInputError
from gepc.retrieval import GalleryEntry, GalleryIndex, nearest_gallery


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def make_index(embeddings, class_ids=None, ids=None):
    n = len(embeddings)
    class_ids = class_ids if class_ids is not None else [0] * n
    ids = ids if ids is not None else list(range(n))
    entries = [
        GalleryEntry(
            image_id=i, class_id=c, embedding=unit(e), annotation_path=f"ann/{i}.json"
        )
        for i, c, e in zip(ids, class_ids, embeddings)
    ]
    return GalleryIndex(entries)


def brute_force(query, index, class_filter, k):
    q = unit(query)
    rows = []
    for e in index.entries:
        if class_filter is not None and e.class_id != class_filter:
            continue
        rows.append((e.image_id, float(q @ e.embedding)))
    rows.sort(key=lambda r: (-r[1], r[0]))
    return rows[:k]


class TestNearestGallery:
    def test_exact_embedding_ranks_first_with_similarity_one(self):
        rng = np.random.default_rng(0)
        vecs = [rng.standard_normal(8) for _ in range(6)]
        index = make_index(vecs)
        got = nearest_gallery(index.entries[3].embedding, index, None, k=2)
        assert got[0][0] == 3
        assert got[0][1] == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal_query_orders_by_image_id(self):
        vecs = [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]]
        index = make_index(vecs, ids=[7, 2, 5])
        got = nearest_gallery(np.array([0.0, 0.0, 0.0, 1.0]), index, None, k=3)
        assert [g[0] for g in got] == [2, 5, 7]
        assert all(abs(s) < 1e-12 for _, s in got)

    def test_matches_brute_force_on_random_vectors(self):
        rng = np.random.default_rng(42)
        vecs = [rng.standard_normal(16) for _ in range(50)]
        classes = rng.integers(0, 3, size=50).tolist()
        index = make_index(vecs, class_ids=classes)
        for trial in range(10):
            q = rng.standard_normal(16)
            for cf in (None, 0, 1, 2):
                got = nearest_gallery(q, index, cf, k=5)
                want = brute_force(q, index, cf, 5)
                assert [g[0] for g in got] == [w[0] for w in want]
                np.testing.assert_allclose(
                    [g[1] for g in got], [w[1] for w in want], atol=1e-12
                )

    def test_similarities_non_increasing(self):
        rng = np.random.default_rng(1)
        index = make_index([rng.standard_normal(8) for _ in range(20)])
        got = nearest_gallery(rng.standard_normal(8), index, None, k=20)
        sims = [s for _, s in got]
        assert all(a >= b - 1e-15 for a, b in zip(sims, sims[1:]))

    def test_scaling_query_leaves_order_unchanged(self):
        rng = np.random.default_rng(2)
        index = make_index([rng.standard_normal(8) for _ in range(12)])
        q = rng.standard_normal(8)
        a = nearest_gallery(q, index, None, k=12)
        b = nearest_gallery(q * 3.7, index, None, k=12)
        assert [x[0] for x in a] == [x[0] for x in b]
        np.testing.assert_allclose([x[1] for x in a], [x[1] for x in b], atol=1e-12)

    def test_class_filter_excludes_other_classes(self):
        rng = np.random.default_rng(3)
        index = make_index(
            [rng.standard_normal(4) for _ in range(6)],
            class_ids=[0, 1, 0, 1, 0, 1],
        )
        got = nearest_gallery(rng.standard_normal(4), index, 1, k=6)
        assert {g[0] for g in got} == {1, 3, 5}

    def test_empty_filtered_index(self):
        index = make_index([[1.0, 0.0]], class_ids=[0])
        with pytest.raises(InvalidInputError, match="no gallery candidates"):
            nearest_gallery(np.array([1.0, 0.0]), index, 9, k=1)

    def test_k_larger_than_index_returns_all(self):
        index = make_index([[1.0, 0.0], [0.0, 1.0]])
        assert len(nearest_gallery(np.array([1.0, 1.0]), index, None, k=10)) == 2

    def test_bad_k(self):
        index = make_index([[1.0, 0.0]])
        with pytest.raises(InvalidInputError):
            nearest_gallery(np.array([1.0, 0.0]), index, None, k=0)

    def test_dimension_mismatch(self):
        index = make_index([[1.0, 0.0, 0.0]])
        with pytest.raises(InvalidInputError):
            nearest_gallery(np.array([1.0, 0.0]), index, None, k=1)

    def test_zero_query_rejected(self):
        index = make_index([[1.0, 0.0]])
        with pytest.raises(InvalidInputError):
            nearest_gallery(np.zeros(2), index, None, k=1)

    def test_string_image_ids_sort_lexicographically(self):
        vecs = [[1, 0], [0, 1]]
        index = make_index(vecs, ids=["img_b", "img_a"])
        got = nearest_gallery(np.array([1.0, 1.0]), index, None, k=2)
        assert [g[0] for g in got] == ["img_a", "img_b"]


class TestGalleryIndex:
    def test_unit_norm_enforced(self):
        bad = GalleryEntry(0, 0, np.array([2.0, 0.0]), "a.json")
        with pytest.raises(InvalidInputError, match="unit"):
            GalleryIndex([bad])

    def test_dimension_consistency_enforced(self):
        entries = [
            GalleryEntry(0, 0, np.array([1.0, 0.0]), "a.json"),
            GalleryEntry(1, 0, np.array([1.0, 0.0, 0.0]), "b.json"),
        ]
        with pytest.raises(InvalidInputError, match="dimension"):
            GalleryIndex(entries)

    def test_duplicate_image_ids_rejected(self):
        entries = [
            GalleryEntry(0, 0, np.array([1.0, 0.0]), "a.json"),
            GalleryEntry(0, 1, np.array([0.0, 1.0]), "b.json"),
        ]
        with pytest.raises(InvalidInputError, match="duplicate"):
            GalleryIndex(entries)

    def test_empty_index_rejected(self):
        with pytest.raises(InvalidInputError):
            GalleryIndex([])

    def test_json_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        index = make_index(
            [rng.standard_normal(6) for _ in range(4)],
            class_ids=[0, 0, 1, 1],
            ids=["a", "b", "c", "d"],
        )
        path = tmp_path / "gallery.json"
        index.save(path)
        back = GalleryIndex.load(path)
        assert len(back.entries) == 4
        for orig, loaded in zip(index.entries, back.entries):
            assert loaded.image_id == orig.image_id
            assert loaded.class_id == orig.class_id
            assert loaded.annotation_path == orig.annotation_path
            np.testing.assert_allclose(loaded.embedding, orig.embedding, atol=1e-12)

    def test_save_is_byte_stable(self, tmp_path):
        index = make_index([[1.0, 0.0], [0.0, 1.0]])
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        index.save(p1)
        index.save(p2)
        assert p1.read_bytes() == p2.read_bytes()
