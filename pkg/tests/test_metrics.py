import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from kinject.metrics import (MetricReport, bleu_n, cider, clipped_counts, evaluate, meteor_exact,
                             meteor_sentence, rouge_l)
from oracles import cider_brute, lcs_brute

WORDS = st.sampled_from(["the", "lungs", "are", "clear", "no", "effusion", "heart", "."])
SENT = st.lists(WORDS, min_size=1, max_size=7)


def meteor_brute(cand, ref):
    """Enumerate every maximal exact alignment; keep the fewest chunks."""
    best = [0, None]

    def rec(i, used, last, matched, chunks):
        if i == len(cand):
            if matched > best[0] or (matched == best[0] and (best[1] is None or chunks < best[1])):
                best[0], best[1] = matched, chunks
            return
        for j, w in enumerate(ref):
            if w == cand[i] and j not in used:
                rec(i + 1, used | {j}, j, matched + 1, chunks + (0 if last == j - 1 else 1))
        rec(i + 1, used, -2, matched, chunks)

    rec(0, frozenset(), -2, 0, 0)
    m, ch = best
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    return 10 * p * r / (r + 9 * p) * (1 - 0.5 * (ch / m) ** 3)


class TestBleu:
    cand, ref = ["the cat sat on the mat"], ["the cat is on the mat"]

    def test_hand_case(self):
        assert bleu_n(self.cand, self.ref, 1) == pytest.approx(5 / 6, abs=1e-15)
        assert bleu_n(self.cand, self.ref, 2) == pytest.approx(math.sqrt(0.5), abs=1e-15)
        assert bleu_n(self.cand, self.ref, 3) == pytest.approx(0.5, abs=1e-15)
        assert bleu_n(self.cand, self.ref, 4) == 0.0

    def test_brevity_penalty(self):
        assert bleu_n(["the cat"], ["the cat sat"], 1) == pytest.approx(math.exp(-0.5), abs=1e-15)

    def test_clipping(self):
        assert clipped_counts("the the the".split(), "the cat".split(), 1) == (1, 3)

    def test_corpus_level_pooling(self):
        # pooled counts, not a mean of sentence scores
        c, r = ["a b", "c d"], ["a b", "c e"]
        assert bleu_n(c, r, 1) == pytest.approx(3 / 4)

    def test_bad_n(self):
        with pytest.raises(ValueError):
            bleu_n(["a"], ["a"], 5)


class TestRouge:
    def test_hand_case(self):
        assert rouge_l(["a b c d"], ["a c e"]) == pytest.approx(float(Fraction(61, 104)), abs=1e-15)

    def test_disjoint(self):
        assert rouge_l(["a b"], ["c d"]) == 0.0

    @given(SENT, SENT)
    @settings(max_examples=60, deadline=None)
    def test_lcs_oracle(self, c, r):
        lcs = lcs_brute(tuple(c), tuple(r))
        p, rec = lcs / len(c), lcs / len(r)
        ref = 0.0 if lcs == 0 else (1 + 1.44) * p * rec / (rec + 1.44 * p)
        assert rouge_l([c], [r]) == pytest.approx(ref, abs=1e-12)


class TestMeteor:
    def test_identical(self):
        assert meteor_sentence("the cat sat", "the cat sat") == pytest.approx(53 / 54, abs=1e-15)

    def test_reordered(self):
        assert meteor_sentence("sat the cat", "the cat sat") == pytest.approx(23 / 27, abs=1e-15)

    def test_repeated_words_pick_fewest_chunks(self):
        assert meteor_sentence("the cat the dog", "the dog the cat") == pytest.approx(15 / 16, abs=1e-15)

    def test_fmean_weights_recall(self):
        # P = 1, R = 1/2, one chunk
        fmean = 10 * 1 * 0.5 / (0.5 + 9 * 1)
        assert meteor_sentence("a b", "a b c d") == pytest.approx(fmean * (1 - 0.5 * (1 / 2) ** 3))

    def test_no_match(self):
        assert meteor_sentence("a", "b") == 0.0

    @given(SENT, SENT)
    @settings(max_examples=80, deadline=None)
    def test_brute_force_alignment(self, c, r):
        assert meteor_sentence(c, r) == pytest.approx(meteor_brute(c, r), abs=1e-12)


class TestCider:
    @given(st.lists(st.tuples(SENT, SENT), min_size=2, max_size=5))
    @settings(max_examples=50, deadline=None)
    def test_brute_oracle(self, pairs):
        cands, refs = [list(p[0]) for p in pairs], [list(p[1]) for p in pairs]
        assert cider(cands, refs) == pytest.approx(cider_brute(cands, refs), abs=1e-10)

    def test_identity_is_ten(self):
        refs = ["the lungs are clear", "no pleural effusion seen", "heart size is normal"]
        assert cider(refs, refs) == pytest.approx(10.0, abs=1e-12)

    def test_needs_two(self):
        with pytest.raises(ValueError):
            cider(["a"], ["a"])


class TestCorpus:
    refs = ["the lungs are clear .", "no pleural effusion .", "heart size is normal .", "there is opacity ."]

    def test_identity_corpus(self):
        rep = evaluate(self.refs, self.refs)
        assert rep.bleu == [1.0, 1.0, 1.0, 1.0]
        assert rep.rouge_l == 1.0
        assert rep.cider == pytest.approx(10.0)
        expected = sum(1 - 0.5 * (1 / len(r.split())) ** 3 for r in self.refs) / len(self.refs)
        assert rep.meteor == pytest.approx(expected, abs=1e-15)

    @given(st.permutations(range(4)), st.lists(SENT, min_size=4, max_size=4))
    @settings(max_examples=30, deadline=None)
    def test_permutation_invariance(self, perm, cands):
        refs = [r.split() for r in self.refs]
        a = evaluate(cands, refs)
        b = evaluate([cands[i] for i in perm], [refs[i] for i in perm])
        for x, y in zip(a.bleu + [a.rouge_l, a.meteor, a.cider], b.bleu + [b.rouge_l, b.meteor, b.cider]):
            assert x == pytest.approx(y, abs=1e-12)

    @given(st.lists(st.tuples(SENT, SENT), min_size=2, max_size=4))
    @settings(max_examples=30, deadline=None)
    def test_ranges(self, pairs):
        rep = evaluate([p[0] for p in pairs], [p[1] for p in pairs])
        assert all(0 <= b <= 1 for b in rep.bleu)
        assert 0 <= rep.rouge_l <= 1 and 0 <= rep.meteor <= 1 and 0 <= rep.cider <= 10 + 1e-9

    def test_single_sample_cider_zero(self):
        assert evaluate(["a b"], ["a b"]).cider == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            evaluate(["a"], ["a", "b"])
        with pytest.raises(ValueError):
            meteor_exact([], [])

    def test_row_keys(self):
        row = evaluate(self.refs, self.refs).as_row()
        assert list(row) == ["bleu_1", "bleu_2", "bleu_3", "bleu_4", "rouge_l", "meteor", "cider", "n_samples"]
        assert isinstance(MetricReport([0.0] * 4, 0, 0, 0, 1).to_json(), dict)


@given(SENT, SENT, st.integers(1, 4), st.data())
@settings(max_examples=60, deadline=None)
def test_bleu_counts_monotone_under_matching_append(c, r, n, data):
    if len(r) < n:
        return
    start = data.draw(st.integers(0, len(r) - n))
    before = clipped_counts(c, r, n)[0]
    assert clipped_counts(c + r[start:start + n], r, n)[0] >= before


@given(st.lists(WORDS, min_size=8, max_size=14))
@settings(max_examples=40, deadline=None)
def test_identity_meteor_long_samples(s):
    assert meteor_sentence(s, s) > 0.99
