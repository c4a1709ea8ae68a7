"""Similarity metrics and pooled search checked against brute-force oracles."""

import numpy as np
import pytest

from irbindiff.errors import MetricError
from irbindiff.ircorpus import FunctionMeta
from irbindiff.retrieval import (
    EmbeddingIndex,
    FunctionEmbedding,
    RECALL_KS,
    TASK_KINDS,
    auc,
    build_pools,
    build_task_pairs,
    cosine_similarity,
    evaluate_task,
    label_pair,
    mrr,
    pair_matches_task,
    read_embeddings_jsonl,
    recall_at_k,
    search,
    task_dims,
    write_embeddings_jsonl,
)


def meta(src, compiler="gcc", version="9", opt="O0", arch="x86",
         project="proj", binary="bin"):
    return FunctionMeta(project=project, binary=binary, source_function=src,
                        compiler=compiler, compiler_version=version,
                        optimization=opt, architecture=arch)


def embedding(src, vector, **kwargs):
    return FunctionEmbedding(meta=meta(src, **kwargs),
                             vector=np.asarray(vector, dtype=np.float64))


def brute_auc(scores, labels):
    """Direct enumeration over all positive/negative pairs, ties half."""
    pos = [s for s, lab in zip(scores, labels) if lab == 1]
    neg = [s for s, lab in zip(scores, labels) if lab == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def brute_rank(scores, gt_index):
    """1-based rank under descending sort with insertion-order ties."""
    gt = scores[gt_index]
    ahead = sum(1 for s in scores if s > gt)
    ahead += sum(1 for i, s in enumerate(scores)
                 if s == gt and i < gt_index)
    return ahead + 1


class TestTaskLabeling:
    def test_task_dims(self):
        assert task_dims("XC") == frozenset({"compiler"})
        assert task_dims("XO+XA") == frozenset({"optimization",
                                                "architecture"})
        assert task_dims("XC+XO+XA") == frozenset({"compiler",
                                                   "optimization",
                                                   "architecture"})

    def test_unknown_kind_rejected(self):
        with pytest.raises(MetricError, match="unknown task kind"):
            task_dims("XB")
        with pytest.raises(MetricError):
            task_dims("XC+XC")

    def test_pair_matches_exactly_the_task_dimensions(self):
        a = meta("f", compiler="gcc", version="9", opt="O0", arch="x86")
        xc = meta("f", compiler="clang", version="11", opt="O0", arch="x86")
        xcxo = meta("f", compiler="clang", version="11", opt="O2",
                    arch="x86")
        assert pair_matches_task(a, xc, "XC")
        assert not pair_matches_task(a, xc, "XO")
        assert not pair_matches_task(a, xc, "XC+XO")
        assert pair_matches_task(a, xcxo, "XC+XO")
        assert not pair_matches_task(a, xcxo, "XC")

    def test_compiler_version_alone_is_a_compiler_difference(self):
        a = meta("f", compiler="gcc", version="9")
        b = meta("f", compiler="gcc", version="11")
        assert pair_matches_task(a, b, "XC")

    def test_identical_settings_match_no_task(self):
        a = meta("f")
        b = meta("g")
        assert not any(pair_matches_task(a, b, kind) for kind in TASK_KINDS)

    def test_label_pair_uses_source_identity(self):
        a = meta("f", compiler="gcc")
        b = meta("f", compiler="clang", version="11")
        c = meta("g", compiler="clang", version="11")
        d = meta("f", binary="other")
        assert label_pair(a, b) == 1
        assert label_pair(a, c) == 0
        assert label_pair(a, d) == 0


class TestCosineSimilarity:
    def test_golden_values(self):
        assert cosine_similarity([1.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)
        assert cosine_similarity([1.0, 0.0], [-2.0, 0.0]) == pytest.approx(-1.0)
        assert cosine_similarity([1.0, 1.0], [1.0, 0.0]) == pytest.approx(
            1.0 / np.sqrt(2.0))

    def test_scale_invariant(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            a = rng.normal(size=6)
            b = rng.normal(size=6)
            np.testing.assert_allclose(cosine_similarity(a, b),
                                       cosine_similarity(3.5 * a, 0.2 * b),
                                       rtol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(MetricError, match="shapes"):
            cosine_similarity([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_zero_norm_rejected(self):
        with pytest.raises(MetricError, match="zero-norm"):
            cosine_similarity([0.0, 0.0], [1.0, 2.0])


class TestAUC:
    def test_perfect_separation(self):
        assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_perfect_inversion(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0

    def test_all_tied_is_half(self):
        assert auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5

    def test_single_tie_counts_half(self):
        # one positive above the negative, one tied with it
        assert auc([0.9, 0.5, 0.5], [1, 1, 0]) == pytest.approx(0.75)

    def test_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(4, 40))
            # coarse grid of score values forces frequent ties
            scores = rng.integers(0, 6, size=n).astype(np.float64) / 5.0
            labels = rng.integers(0, 2, size=n)
            if labels.sum() == 0:
                labels[0] = 1
            if labels.sum() == len(labels):
                labels[0] = 0
            np.testing.assert_allclose(auc(scores, labels),
                                       brute_auc(scores, labels),
                                       rtol=1e-12, atol=1e-15)

    def test_one_class_rejected(self):
        with pytest.raises(MetricError, match="undefined"):
            auc([0.1, 0.2], [1, 1])
        with pytest.raises(MetricError, match="undefined"):
            auc([0.1, 0.2], [0, 0])

    def test_length_mismatch_rejected(self):
        with pytest.raises(MetricError):
            auc([0.1, 0.2, 0.3], [1, 0])


class TestSearch:
    def pool_of(self, entries):
        return EmbeddingIndex(entries)

    def test_rank_of_gt_simple(self):
        query = embedding("f", [1.0, 0.0])
        gt = embedding("f", [0.9, 0.1], compiler="clang", version="11")
        d1 = embedding("g", [1.0, 0.01])   # closer than gt
        d2 = embedding("h", [0.0, 1.0])    # orthogonal
        result = search(query, self.pool_of([d1, gt, d2]), k=3)
        assert result.rank_of_gt == 2
        assert result.pool_size == 3
        assert result.top[0][0] == 0
        scores = [s for _, s in result.top]
        assert scores == sorted(scores, reverse=True)

    def test_ties_keep_insertion_order(self):
        query = embedding("f", [1.0, 0.0])
        gt = embedding("f", [1.0, 0.0], compiler="clang", version="11")
        clone_before = embedding("g", [2.0, 0.0])  # same cosine as gt
        clone_after = embedding("h", [3.0, 0.0])
        r1 = search(query, self.pool_of([clone_before, gt, clone_after]), k=3)
        assert r1.rank_of_gt == 2
        r2 = search(query, self.pool_of([gt, clone_before, clone_after]), k=3)
        assert r2.rank_of_gt == 1

    def test_rank_matches_brute_force_on_random_pools(self):
        rng = np.random.default_rng(23)
        for trial in range(50):
            dim = 8
            query_vec = rng.normal(size=dim)
            gt_vec = rng.normal(size=dim)
            entries = [embedding("q", gt_vec, compiler="clang", version="11")]
            for i in range(20):
                if rng.random() < 0.3:
                    vec = gt_vec * float(rng.integers(1, 4))  # cosine tie
                else:
                    vec = rng.normal(size=dim)
                entries.append(embedding(f"d{i}", vec))
            order = rng.permutation(len(entries))
            shuffled = [entries[int(i)] for i in order]
            query = embedding("q", query_vec)
            result = search(query, self.pool_of(shuffled), k=5)
            scores = [cosine_similarity(query_vec, e.vector)
                      for e in shuffled]
            gt_index = next(i for i, e in enumerate(shuffled)
                            if e.meta.source_function == "q")
            assert result.rank_of_gt == brute_rank(scores, gt_index), \
                f"trial {trial}"

    def test_top_truncates_to_k(self):
        query = embedding("f", [1.0, 0.0])
        entries = [embedding("f", [1.0, 0.1], compiler="clang", version="11")]
        entries += [embedding(f"d{i}", [float(i), 1.0]) for i in range(5)]
        result = search(query, self.pool_of(entries), k=2)
        assert len(result.top) == 2

    def test_pool_without_gt_rejected(self):
        query = embedding("f", [1.0, 0.0])
        pool = self.pool_of([embedding("g", [1.0, 1.0])])
        with pytest.raises(MetricError, match="exactly one ground truth"):
            search(query, pool, k=1)

    def test_pool_with_two_gt_rejected(self):
        query = embedding("f", [1.0, 0.0])
        pool = self.pool_of([
            embedding("f", [1.0, 1.0], compiler="clang", version="11"),
            embedding("f", [0.5, 1.0], opt="O2"),
        ])
        with pytest.raises(MetricError, match="exactly one ground truth"):
            search(query, pool, k=1)

    def test_empty_pool_and_bad_k_rejected(self):
        query = embedding("f", [1.0, 0.0])
        with pytest.raises(MetricError, match="empty pool"):
            search(query, self.pool_of([]), k=1)
        with pytest.raises(ValueError, match="k must be"):
            search(query, self.pool_of([embedding("g", [1.0, 1.0])]), k=0)


class TestRecallAndMRR:
    def results_with_ranks(self, ranks):
        return [type("R", (), {"rank_of_gt": r})() for r in ranks]

    def test_golden_values(self):
        results = self.results_with_ranks([1, 2, 5, 10, 1])
        assert recall_at_k(results, 1) == pytest.approx(0.4)
        assert recall_at_k(results, 2) == pytest.approx(0.6)
        assert recall_at_k(results, 10) == pytest.approx(1.0)
        expected_mrr = np.mean([1.0, 0.5, 0.2, 0.1, 1.0])
        assert mrr(results) == pytest.approx(expected_mrr)

    def test_matches_brute_force_on_random_ranks(self):
        rng = np.random.default_rng(31)
        for _ in range(200):
            ranks = rng.integers(1, 102, size=int(rng.integers(1, 60)))
            results = self.results_with_ranks([int(r) for r in ranks])
            for k in (1, 10, 50):
                expected = sum(1 for r in ranks if r <= k) / len(ranks)
                np.testing.assert_allclose(recall_at_k(results, k), expected,
                                           rtol=1e-12)
            expected_mrr = sum(1.0 / r for r in ranks) / len(ranks)
            np.testing.assert_allclose(mrr(results), expected_mrr, rtol=1e-12)

    def test_recall_monotone_in_k(self):
        rng = np.random.default_rng(37)
        for _ in range(50):
            ranks = [int(r) for r in rng.integers(1, 102, size=40)]
            results = self.results_with_ranks(ranks)
            values = [recall_at_k(results, k) for k in range(1, 102)]
            assert all(a <= b for a, b in zip(values, values[1:]))

    def test_mrr_bounded_by_recall_at_one(self):
        rng = np.random.default_rng(41)
        for _ in range(50):
            ranks = [int(r) for r in rng.integers(1, 102, size=40)]
            results = self.results_with_ranks(ranks)
            assert mrr(results) >= recall_at_k(results, 1)
            assert mrr(results) <= 1.0

    def test_empty_results_rejected(self):
        with pytest.raises(MetricError):
            recall_at_k([], 1)
        with pytest.raises(MetricError):
            mrr([])
        with pytest.raises(ValueError):
            recall_at_k(self.results_with_ranks([1]), 0)


class TestBuildTaskPairs:
    def corpus(self, n_groups=6):
        metas = []
        for g in range(n_groups):
            metas.append(meta(f"f{g}", compiler="gcc", version="9"))
            metas.append(meta(f"f{g}", compiler="clang", version="11"))
        return metas

    def test_counts_and_labels(self):
        metas = self.corpus()
        pairs = build_task_pairs(metas, "XC", n_pos=4, n_neg=6, seed=0)
        labels = [lab for _, _, lab in pairs]
        assert labels.count(1) == 4
        assert labels.count(0) == 6

    def test_pairs_satisfy_task_and_label(self):
        metas = self.corpus()
        for i, j, lab in build_task_pairs(metas, "XC", 4, 6, seed=1):
            assert pair_matches_task(metas[i], metas[j], "XC")
            assert label_pair(metas[i], metas[j]) == lab

    def test_deterministic_per_seed(self):
        metas = self.corpus()
        assert build_task_pairs(metas, "XC", 3, 3, seed=7) == \
            build_task_pairs(metas, "XC", 3, 3, seed=7)

    def test_insufficient_pairs_rejected(self):
        metas = self.corpus(n_groups=2)
        with pytest.raises(MetricError, match="task XC"):
            build_task_pairs(metas, "XC", n_pos=50, n_neg=1)
        with pytest.raises(MetricError):
            build_task_pairs(metas, "XO", n_pos=1, n_neg=1)

    def test_bad_counts_rejected(self):
        with pytest.raises(ValueError):
            build_task_pairs(self.corpus(), "XC", n_pos=0, n_neg=1)


class TestBuildPools:
    def corpus(self, n_groups=8, dim=4, seed=3):
        rng = np.random.default_rng(seed)
        out = []
        for g in range(n_groups):
            out.append(embedding(f"f{g}", rng.normal(size=dim)))
            out.append(embedding(f"f{g}", rng.normal(size=dim),
                                 compiler="clang", version="11"))
        return out

    def test_pool_shape_and_single_gt(self):
        corpus = self.corpus()
        query, gt = corpus[0], corpus[1]
        pools = build_pools([(query, gt)], corpus, pool_size=5, seed=0)
        assert len(pools) == 1
        _, pool = pools[0]
        assert len(pool) == 5
        hits = [e for e in pool if label_pair(query.meta, e.meta)]
        assert len(hits) == 1
        assert hits[0] is gt

    def test_distractors_never_share_query_identity(self):
        corpus = self.corpus()
        queries = [(corpus[2 * g], corpus[2 * g + 1]) for g in range(8)]
        for query, pool in build_pools(queries, corpus, pool_size=9, seed=2):
            shared = [e for e in pool if label_pair(query.meta, e.meta)]
            assert len(shared) == 1

    def test_seeded_determinism(self):
        corpus = self.corpus()
        queries = [(corpus[0], corpus[1])]
        first = build_pools(queries, corpus, pool_size=6, seed=5)
        second = build_pools(queries, corpus, pool_size=6, seed=5)
        keys_a = [e.meta.key() for e in first[0][1]]
        keys_b = [e.meta.key() for e in second[0][1]]
        assert keys_a == keys_b
        third = build_pools(queries, corpus, pool_size=6, seed=6)
        keys_c = [e.meta.key() for e in third[0][1]]
        assert keys_a != keys_c

    def test_unrelated_query_gt_rejected(self):
        corpus = self.corpus()
        with pytest.raises(MetricError, match="share a source"):
            build_pools([(corpus[0], corpus[2])], corpus, pool_size=4)

    def test_pool_larger_than_candidates_rejected(self):
        corpus = self.corpus(n_groups=2)
        with pytest.raises(MetricError, match="distractor candidates"):
            build_pools([(corpus[0], corpus[1])], corpus, pool_size=4)

    def test_bad_pool_size_rejected(self):
        corpus = self.corpus()
        with pytest.raises(ValueError):
            build_pools([(corpus[0], corpus[1])], corpus, pool_size=1)


class TestEvaluateTask:
    def corpus(self, n_groups=12, dim=6, noise=0.05, seed=9):
        """Groups share a direction; instances get small noise."""
        rng = np.random.default_rng(seed)
        out = []
        for g in range(n_groups):
            base = rng.normal(size=dim)
            for compiler, version in (("gcc", "9"), ("clang", "11")):
                vec = base + noise * rng.normal(size=dim)
                out.append(embedding(f"f{g}", vec, compiler=compiler,
                                     version=version))
        return out

    def test_report_structure(self):
        report = evaluate_task(self.corpus(), "XC", n_queries=6, pool_size=5,
                               seed=0)
        assert report["task"] == "XC"
        assert set(report["recall"]) == {str(k) for k in RECALL_KS}
        assert report["n_queries"] == 6
        assert report["pool_size"] == 5
        assert 0.0 <= report["auc"] <= 1.0
        assert 0.0 <= report["mrr"] <= 1.0

    def test_clustered_embeddings_score_high(self):
        report = evaluate_task(self.corpus(noise=0.01), "XC", n_queries=6,
                               pool_size=5, seed=0)
        assert report["auc"] > 0.9
        assert report["recall"]["1"] > 0.9
        assert report["mrr"] > 0.9

    def test_deterministic(self):
        a = evaluate_task(self.corpus(), "XC", n_queries=5, pool_size=5,
                          seed=4)
        b = evaluate_task(self.corpus(), "XC", n_queries=5, pool_size=5,
                          seed=4)
        assert a == b


class TestEmbeddingSerialization:
    def test_jsonl_round_trip(self, tmp_path):
        rng = np.random.default_rng(13)
        entries = [embedding(f"f{i}", rng.normal(size=5)) for i in range(4)]
        path = tmp_path / "emb.jsonl"
        n = write_embeddings_jsonl(entries, path)
        assert n == 4
        loaded = read_embeddings_jsonl(path)
        assert [e.meta.key() for e in loaded] == \
            [e.meta.key() for e in entries]
        for a, b in zip(entries, loaded):
            np.testing.assert_allclose(a.vector, b.vector, rtol=1e-15)

    def test_rewrite_is_byte_stable(self, tmp_path):
        rng = np.random.default_rng(17)
        entries = [embedding(f"f{i}", rng.normal(size=3)) for i in range(3)]
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_embeddings_jsonl(entries, p1)
        write_embeddings_jsonl(read_embeddings_jsonl(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()
