"""Scorers and exact top-K retrieval, checked against brute-force oracles."""

import math

import pytest

from rdrag.cases import load_corpus
from rdrag.embeddings import (
    DeterministicProvider,
    EmbeddingStore,
    EmbeddingVector,
    embed_text,
    normalize,
)
from rdrag.errors import ConfigurationError, DataError, ValidationError
from rdrag.retrieval import (
    RetrievalConfig,
    cosine_similarity,
    perceptual_distance,
    retrieve_cases,
    top_k,
)
from rdrag.rng import SplitMix64

from conftest import write_corpus, write_flat_png, write_png
from oracles import brute_cosine, brute_luminance_patch, brute_perceptual_distance, brute_top_k
from test_cases import rows_for


def vec(*values):
    return EmbeddingVector(dim=len(values), values=tuple(float(v) for v in values))


def random_unit(rng, dim):
    raw = vec(*(rng.next_float() for _ in range(dim)))
    return normalize(raw)


class TestCosine:
    def test_identical_unit_vectors(self):
        v = normalize(vec(1, 2, 3))
        assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine_similarity(vec(1, 0), vec(0, 1)) == 0.0

    def test_forty_five_degrees(self):
        got = cosine_similarity(vec(1, 0), vec(1, 1))
        assert got == pytest.approx(0.7071067811865476, abs=1e-12)

    def test_symmetry(self):
        a, b = vec(0.3, -0.2, 0.9), vec(-0.5, 0.1, 0.4)
        assert cosine_similarity(a, b) == cosine_similarity(b, a)

    def test_scale_invariance(self):
        a, b = vec(1, 2, 3), vec(4, 5, 6)
        scaled = vec(10, 20, 30)
        assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(scaled, b), abs=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(ConfigurationError, match="dimension mismatch"):
            cosine_similarity(vec(1, 0), vec(1, 0, 0))

    def test_zero_vector(self):
        with pytest.raises(DataError, match="zero vector"):
            cosine_similarity(vec(0, 0), vec(1, 0))

    def test_matches_oracle_on_random_pairs(self):
        rng = SplitMix64(77)
        for _ in range(500):
            dim = 2 + rng.next_below(31)
            a = random_unit(rng, dim)
            b = random_unit(rng, dim)
            assert cosine_similarity(a, b) == pytest.approx(
                brute_cosine(a.values, b.values), abs=1e-9
            )


class TestTopK:
    def make_store(self, vectors):
        entries = {
            cid: normalize(vec(*vals)) for cid, vals in vectors.items()
        }
        dim = next(iter(entries.values())).dim
        return EmbeddingStore(dim=dim, entries=entries)

    def test_orders_by_score(self):
        store = self.make_store({"a": (1, 0), "b": (0, 1), "c": (1, 1)})
        hits = top_k(normalize(vec(1, 0)), store, RetrievalConfig(k=3))
        assert [h.case_id for h in hits] == ["a", "c", "b"]

    def test_tie_broken_by_ascending_id(self):
        store = self.make_store({"zeta": (1, 0), "alpha": (1, 0), "mid": (0, 1)})
        hits = top_k(normalize(vec(1, 0)), store, RetrievalConfig(k=2))
        assert [h.case_id for h in hits] == ["alpha", "zeta"]

    def test_k_clamped_with_warning(self, caplog):
        store = self.make_store({"a": (1, 0), "b": (0, 1)})
        with caplog.at_level("WARNING"):
            hits = top_k(normalize(vec(1, 0)), store, RetrievalConfig(k=10))
        assert len(hits) == 2
        assert any("clamping" in r.message for r in caplog.records)

    def test_empty_store(self):
        store = EmbeddingStore(dim=2, entries={})
        with pytest.raises(DataError, match="empty retrieval library"):
            top_k(normalize(vec(1, 0)), store, RetrievalConfig(k=1))

    def test_query_dim_mismatch(self):
        store = self.make_store({"a": (1, 0)})
        with pytest.raises(ConfigurationError, match="query dim 3"):
            top_k(normalize(vec(1, 0, 0)), store, RetrievalConfig(k=1))

    def test_invalid_k(self):
        store = self.make_store({"a": (1, 0)})
        with pytest.raises(ValidationError, match="k must be >= 1"):
            top_k(normalize(vec(1, 0)), store, RetrievalConfig(k=0))

    def test_unknown_scorer(self):
        with pytest.raises(ValidationError, match="unknown scorer"):
            RetrievalConfig(scorer="vibes").validate()

    def test_matches_oracle_on_random_stores(self):
        rng = SplitMix64(404)
        for trial in range(200):
            dim = 2 + rng.next_below(15)
            size = 1 + rng.next_below(32)
            entries = {f"id{i:03d}": random_unit(rng, dim) for i in range(size)}
            store = EmbeddingStore(dim=dim, entries=entries)
            query = random_unit(rng, dim)
            k = 1 + rng.next_below(size)
            hits = top_k(query, store, RetrievalConfig(k=k))
            expected = brute_top_k(
                {cid: brute_cosine(query.values, v.values) for cid, v in entries.items()}, k
            )
            assert [h.case_id for h in hits] == [cid for cid, _ in expected], trial
            for hit, (_, score) in zip(hits, expected):
                assert hit.score == pytest.approx(score, abs=1e-9)


class TestPerceptualDistance:
    def test_identical_images_are_zero(self, tmp_path):
        a = write_png(tmp_path / "a.png", "same", side=16)
        b = write_png(tmp_path / "b.png", "same", side=16)
        assert perceptual_distance(a, b) == 0.0

    def test_black_vs_white_is_one(self, tmp_path):
        black = write_flat_png(tmp_path / "black.png", (0, 0, 0), side=16)
        white = write_flat_png(tmp_path / "white.png", (255, 255, 255), side=16)
        assert perceptual_distance(black, white) == pytest.approx(1.0, abs=1e-12)

    def test_symmetry(self, tmp_path):
        a = write_png(tmp_path / "a.png", "p1", side=20)
        b = write_png(tmp_path / "b.png", "p2", side=12)
        assert perceptual_distance(a, b) == perceptual_distance(b, a)

    def test_matches_pure_python_oracle(self, tmp_path):
        # Different source sizes exercise the resampler both up and down.
        for side_a, side_b, tag in ((8, 8, "s"), (48, 16, "m"), (9, 33, "odd")):
            a = write_png(tmp_path / f"a{tag}.png", f"a{tag}", side=side_a)
            b = write_png(tmp_path / f"b{tag}.png", f"b{tag}", side=side_b)
            got = perceptual_distance(a, b)
            expected = brute_perceptual_distance(a, b)
            assert got == pytest.approx(expected, abs=1e-9), tag

    def test_downscale_matches_oracle_patch(self, tmp_path):
        import numpy as np

        from rdrag.retrieval import _downscale_bilinear, _luminance

        path = write_png(tmp_path / "img.png", "patch", side=21)
        fast = _downscale_bilinear(_luminance(path))
        slow = brute_luminance_patch(path)
        assert np.abs(fast - np.asarray(slow)).max() < 1e-9

    def test_unreadable_image(self, tmp_path):
        path = tmp_path / "broken.png"
        path.write_bytes(b"this is not a png")
        other = write_png(tmp_path / "ok.png", "ok")
        with pytest.raises(DataError, match="cannot decode image"):
            perceptual_distance(path, other)


class TestRetrieveCases:
    def setup_corpus(self, tmp_path, n=8):
        path = write_corpus(tmp_path, rows_for(n, categories=("甲", "乙", "丙")))
        corpus = load_corpus(path)
        provider = DeterministicProvider(dim=8, seed=0)
        entries = {}
        for case in corpus.cases:
            from rdrag.embeddings import embed_image

            entries[case.id] = embed_image(provider, corpus.image_path(case))
        store = EmbeddingStore(dim=8, entries=entries)
        return corpus, store, provider

    def test_cosine_matches_brute_force(self, tmp_path):
        corpus, store, provider = self.setup_corpus(tmp_path)
        query = write_png(tmp_path / "query.png", "query-image")
        got = retrieve_cases(query, corpus, store, RetrievalConfig(k=3), provider=provider)
        from rdrag.embeddings import embed_image

        qv = embed_image(provider, query)
        expected = brute_top_k(
            {cid: brute_cosine(qv.values, v.values) for cid, v in store.entries.items()}, 3
        )
        assert [c.id for c, _ in got] == [cid for cid, _ in expected]
        for (_, score), (_, escore) in zip(got, expected):
            assert score == pytest.approx(escore, abs=1e-9)

    def test_random_scorer_is_deterministic_per_query(self, tmp_path):
        corpus, store, _ = self.setup_corpus(tmp_path)
        query = write_png(tmp_path / "q.png", "q")
        cfg = RetrievalConfig(k=3, scorer="random", seed=42)
        first = retrieve_cases(query, corpus, store, cfg, query_key="case_x")
        second = retrieve_cases(query, corpus, store, cfg, query_key="case_x")
        assert [c.id for c, _ in first] == [c.id for c, _ in second]
        ids = [c.id for c, _ in first]
        assert len(set(ids)) == 3
        assert all(score == 0.0 for _, score in first)

    def test_random_scorer_varies_with_query_key(self, tmp_path):
        corpus, store, _ = self.setup_corpus(tmp_path, n=12)
        query = write_png(tmp_path / "q.png", "q")
        cfg = RetrievalConfig(k=3, scorer="random", seed=42)
        picks = {
            key: tuple(c.id for c, _ in retrieve_cases(query, corpus, store, cfg, query_key=key))
            for key in ("k1", "k2", "k3", "k4", "k5", "k6")
        }
        assert len(set(picks.values())) > 1

    def test_perceptual_scorer_prefers_identical_image(self, tmp_path):
        corpus, store, _ = self.setup_corpus(tmp_path)
        # Query with the exact pixel data of case c003's image.
        query = write_png(tmp_path / "q.png", "c003")
        got = retrieve_cases(query, corpus, store, RetrievalConfig(k=1, scorer="perceptual_baseline"))
        assert got[0][0].id == "c003"
        assert got[0][1] == 0.0

    def test_perceptual_scores_are_negated_distances(self, tmp_path):
        corpus, store, _ = self.setup_corpus(tmp_path, n=4)
        query = write_png(tmp_path / "q.png", "elsewhere")
        got = retrieve_cases(query, corpus, store, RetrievalConfig(k=4, scorer="perceptual_baseline"))
        for case, score in got:
            expected = brute_perceptual_distance(query, corpus.image_path(case))
            assert score == pytest.approx(-expected, abs=1e-9)
        scores = [s for _, s in got]
        assert scores == sorted(scores, reverse=True)

    def test_store_entry_missing_from_corpus(self, tmp_path):
        corpus, store, provider = self.setup_corpus(tmp_path, n=3)
        orphan = dict(store.entries)
        orphan["ghost"] = next(iter(store.entries.values()))
        bad = EmbeddingStore(dim=store.dim, entries=orphan)
        query = write_png(tmp_path / "q.png", "q")
        with pytest.raises(ConfigurationError, match="missing from corpus: ghost"):
            retrieve_cases(query, corpus, bad, RetrievalConfig(k=1), provider=provider)

    def test_cosine_without_provider(self, tmp_path):
        corpus, store, _ = self.setup_corpus(tmp_path, n=3)
        query = write_png(tmp_path / "q.png", "q")
        with pytest.raises(ConfigurationError, match="requires an embedding provider"):
            retrieve_cases(query, corpus, store, RetrievalConfig(k=1))
