import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinject.corpus import TokenizerConfig, build_corpus
from kinject.errors import DataError, ShapeError, UnknownIdError
from kinject.wck import (Concept, ConceptPackage, compute_tfidf, concept_weights, load_concepts,
                         merge_test_weights, weighted_concept_knowledge)
from oracles import concept_weight_brute, tfidf_brute


def corpus_of(texts, split="train"):
    recs = [{"id": f"r{i + 1}", "text": t, "split": split} for i, t in enumerate(texts)]
    return build_corpus(recs, TokenizerConfig(min_freq=1))


def pkg_of(*names):
    return ConceptPackage(tuple(Concept(tuple(n.split()), "noun") for n in names))


@pytest.fixture
def small():
    return corpus_of(["no effusion", "effusion present", "heart normal"])


@pytest.fixture
def four():
    return corpus_of(["left pleural effusion noted", "pleural thickening", "no effusion", "clear lungs"])


class TestTfIdf:
    def test_zero_idf_word(self, small):
        t = compute_tfidf(small)
        assert t.score("effusion", "r1") == 0.0

    def test_score_no(self, small):
        t = compute_tfidf(small)
        # 0.5 * ln(3/2), high-precision value 0.20273255405408219099
        assert t.score("no", "r1") == pytest.approx(0.20273255405408219, abs=1e-15)

    def test_absent_word(self, small):
        t = compute_tfidf(small)
        assert "heart" not in t.scores["r1"]
        assert t.score("heart", "r1") == 0.0

    def test_empty_corpus(self):
        with pytest.raises(DataError):
            compute_tfidf([])

    def test_df_bounded(self, four):
        t = compute_tfidf(four)
        assert all(v <= t.n_reports for v in t.df.values())

    def test_monotone_in_df(self):
        # same tf for "a" in r1; more documents containing it lowers the score
        lo = compute_tfidf(corpus_of(["a b", "c d", "e f", "g h", "a i"])).score("a", "r1")
        hi = compute_tfidf(corpus_of(["a b", "c d", "e f", "g h", "j i"])).score("a", "r1")
        assert lo < hi

    def test_unknown_report(self, small):
        with pytest.raises(UnknownIdError):
            compute_tfidf(small).score("no", "r9")


class TestConceptWeights:
    def test_concept_with_zero_score(self, small):
        t = compute_tfidf(small)
        s = concept_weights("r1", t, pkg_of("effusion", "pneumothorax"), small)
        assert s.tolist() == [0.0, 0.0]

    def test_multiword_mean(self, four):
        t = compute_tfidf(four)
        brute = tfidf_brute({r.id: list(r.tokens) for r in four})
        s = concept_weights("r1", t, pkg_of("pleural effusion"), four, clamp=False)
        expected = (brute["r1"]["pleural"] + brute["r1"]["effusion"]) / 2
        assert s[0] == pytest.approx(expected, abs=1e-12)

    def test_noncontiguous_is_absent(self):
        c = corpus_of(["pleural small effusion", "x"])
        s = concept_weights("r1", compute_tfidf(c), pkg_of("pleural effusion"), c)
        assert s[0] == 0.0

    def test_clamp(self):
        # "a" in all 3 reports -> ln(3/4) < 0
        c = corpus_of(["a", "a b", "a c"])
        t = compute_tfidf(c)
        assert concept_weights("r1", t, pkg_of("a"), c, clamp=False)[0] < 0
        assert concept_weights("r1", t, pkg_of("a"), c)[0] == 0.0

    def test_unknown_report(self, small):
        with pytest.raises(UnknownIdError):
            concept_weights("zz", compute_tfidf(small), pkg_of("no"), small)


class TestMerge:
    def test_single_equals_concept_weights(self, four):
        t = compute_tfidf(four)
        pkg = pkg_of("effusion", "pleural thickening", "lungs")
        np.testing.assert_array_equal(merge_test_weights(["r2"], t, pkg, four),
                                      concept_weights("r2", t, pkg, four))

    def test_mean_of_two(self):
        # table entries set by hand so the two weights are 0.2 and 0.4
        c2 = corpus_of(["a", "a"])
        t2 = compute_tfidf(c2)
        t2.scores = {"r1": {"a": 0.2}, "r2": {"a": 0.4}}
        assert merge_test_weights(["r1", "r2"], t2, pkg_of("a"), c2)[0] == pytest.approx(0.3, abs=1e-15)

    def test_k3_elementwise(self, four):
        t = compute_tfidf(four)
        pkg = load_concepts()
        ids = ["r1", "r2", "r3"]
        merged = merge_test_weights(ids, t, pkg, four)
        brute = tfidf_brute({r.id: list(r.tokens) for r in four})
        for k, concept in enumerate(pkg):
            vals = [concept_weight_brute(four.get(i).tokens, concept.name, brute[i]) for i in ids]
            assert merged[k] == pytest.approx(sum(vals) / 3, abs=1e-12)

    def test_empty_ids(self, four):
        with pytest.raises(ValueError):
            merge_test_weights([], compute_tfidf(four), pkg_of("a"), four)

    def test_non_train_rejected(self):
        c = build_corpus([{"id": "a", "text": "x", "split": "train"},
                          {"id": "b", "text": "x", "split": "test"}], TokenizerConfig(min_freq=1))
        with pytest.raises(DataError):
            merge_test_weights(["b"], compute_tfidf(c), pkg_of("x"), c)


class TestWeightedKnowledge:
    def test_identity(self):
        F = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(weighted_concept_knowledge(F, np.ones(3)), F)

    def test_zero(self):
        assert not weighted_concept_knowledge(np.ones((3, 2)), np.zeros(3)).any()

    def test_broadcast(self):
        out = weighted_concept_knowledge(np.ones((2, 2)), [2.0, 0.5])
        np.testing.assert_array_equal(out, [[2, 2], [0.5, 0.5]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            weighted_concept_knowledge(np.ones((3, 2)), np.ones(2))

    @given(st.floats(0, 10), st.integers(0, 1000))
    def test_linear(self, a, seed):
        rng = np.random.default_rng(seed)
        F, s = rng.normal(size=(4, 3)), rng.uniform(size=4)
        np.testing.assert_allclose(weighted_concept_knowledge(F, a * s),
                                   a * weighted_concept_knowledge(F, s), rtol=1e-12, atol=1e-12)


class TestPackage:
    def test_default_has_76(self):
        pkg = load_concepts()
        assert pkg.n_concepts == 76 == len({c.name for c in pkg})

    def test_duplicates_rejected(self):
        with pytest.raises(DataError):
            pkg_of("a", "a")

    def test_file_round_trip(self, tmp_path):
        import json
        pkg = load_concepts()
        p = tmp_path / "c.json"
        p.write_text(json.dumps(pkg.to_json()))
        assert load_concepts(p) == pkg


@settings(max_examples=40)
@given(st.data())
def test_zero_padding_property(data):
    words = [f"w{i}" for i in range(8)]
    docs = data.draw(st.lists(st.lists(st.sampled_from(words), min_size=1, max_size=6), min_size=1, max_size=8))
    c = corpus_of([" ".join(d) for d in docs])
    t = compute_tfidf(c)
    pkg = pkg_of(*words[:5], "w1 w2")
    for r in c:
        s = concept_weights(r.id, t, pkg, c)
        occurring = sum(1 for con in pkg if concept_weight_brute(r.tokens, con.name, {w: 1.0 for w in words}) > 0)
        assert int((s > 0).sum()) <= occurring
