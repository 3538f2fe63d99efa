"""Corpus-level caption metrics: BLEU-1..4, ROUGE-L, METEOR (exact match), CIDEr.

Inputs are parallel lists of candidate and reference texts; each text is
either a whitespace-tokenized string or a token list. One reference per
candidate.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass

from kinject import kernels


@dataclass
class MetricReport:
    bleu: list[float]
    rouge_l: float
    meteor: float
    cider: float
    n_samples: int

    def as_row(self) -> dict:
        row = {f"bleu_{i + 1}": b for i, b in enumerate(self.bleu)}
        row.update(rouge_l=self.rouge_l, meteor=self.meteor, cider=self.cider,
                   n_samples=self.n_samples)
        return row

    def to_json(self) -> dict:
        return asdict(self)


def _toks(x):
    return x.split() if isinstance(x, str) else list(x)


def _pairs(candidates, references):
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise ValueError("empty corpus")
    return [(_toks(c), _toks(r)) for c, r in zip(candidates, references)]


def ngrams(tokens, n) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def clipped_counts(cand, ref, n) -> tuple[int, int]:
    """(clipped matches, candidate n-gram total) for one pair."""
    c = ngrams(cand, n)
    r = ngrams(ref, n)
    return sum(min(k, r[g]) for g, k in c.items()), max(len(cand) - n + 1, 0)


def bleu_n(candidates, references, n=4) -> float:
    """Corpus BLEU-n, no smoothing; any zero precision gives 0."""
    if not 1 <= n <= 4:
        raise ValueError("n must be in 1..4")
    pairs = _pairs(candidates, references)
    c_len = sum(len(c) for c, _ in pairs)
    r_len = sum(len(r) for _, r in pairs)
    if c_len == 0:
        return 0.0
    log_p = 0.0
    for k in range(1, n + 1):
        match = tot = 0
        for c, r in pairs:
            m, t = clipped_counts(c, r, k)
            match += m
            tot += t
        if match == 0:
            return 0.0
        log_p += math.log(match / tot)
    bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_p / n)


def rouge_l(candidates, references, beta=1.2) -> float:
    """Mean sentence-level LCS F-measure."""
    pairs = _pairs(candidates, references)
    scores = []
    for c, r in pairs:
        if not c or not r:
            scores.append(0.0)
            continue
        # intern tokens so the compiled LCS compares integers
        table: dict[str, int] = {}
        ci = [table.setdefault(t, len(table)) for t in c]
        ri = [table.setdefault(t, len(table)) for t in r]
        lcs = kernels.lcs_length(ci, ri)
        if lcs == 0:
            scores.append(0.0)
            continue
        p, rec = lcs / len(c), lcs / len(r)
        scores.append((1 + beta ** 2) * p * rec / (rec + beta ** 2 * p))
    return sum(scores) / len(scores)


def _min_chunk_alignment(cand, ref, beam=256):
    """Alignment with the most exact matches, then the fewest chunks.

    Searches candidate positions left to right, merging states that share
    (used reference positions, last matched reference position). The search
    is exact unless a frontier exceeds ``beam`` states.
    """
    need = Counter(cand) & Counter(ref)
    matches = sum(need.values())
    if matches == 0:
        return 0, 0
    ref_pos: dict[str, list[int]] = {}
    for j, w in enumerate(ref):
        ref_pos.setdefault(w, []).append(j)
    remaining = Counter(cand)
    # state: (used_refs, last_j or -2 if previous candidate unmatched) -> (chunks, matched_per_word)
    frontier = {(frozenset(), -2): (0, ())}
    for w in cand:
        remaining[w] -= 1
        nxt = {}
        for (used, last), (chunks, done) in frontier.items():
            done_w = dict(done)
            got = done_w.get(w, 0)
            options = []
            if got < need[w]:
                for j in ref_pos.get(w, ()):
                    if j not in used:
                        nc = chunks + (0 if last == j - 1 else 1)
                        d2 = dict(done_w)
                        d2[w] = got + 1
                        options.append(((used | {j}, j), (nc, tuple(sorted(d2.items())))))
            # skipping is allowed only while enough occurrences of w remain
            if need[w] - got <= remaining[w]:
                options.append(((used, -2), (chunks, done)))
            for key, val in options:
                if key not in nxt or val[0] < nxt[key][0]:
                    nxt[key] = val
        if len(nxt) > beam:
            nxt = dict(sorted(nxt.items(), key=lambda kv: (kv[1][0], -len(kv[0][0]), sorted(kv[0][0]), kv[0][1]))[:beam])
        frontier = nxt
    best = min(chunks for (used, _), (chunks, _) in frontier.items() if len(used) == matches)
    return matches, best


def meteor_sentence(cand, ref, alpha=0.9, gamma=0.5, beta=3.0) -> float:
    cand, ref = _toks(cand), _toks(ref)
    if not cand or not ref:
        return 0.0
    m, chunks = _min_chunk_alignment(cand, ref)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    fmean = p * r / (alpha * p + (1 - alpha) * r)  # = 10PR / (R + 9P)
    penalty = gamma * (chunks / m) ** beta
    return fmean * (1.0 - penalty)


def meteor_exact(candidates, references) -> float:
    pairs = _pairs(candidates, references)
    return sum(meteor_sentence(c, r) for c, r in pairs) / len(pairs)


def _cider_vec(tokens, n, df, log_n):
    counts = ngrams(tokens, n)
    total = sum(counts.values())
    if total == 0:
        return {}
    return {g: (k / total) * (log_n - math.log(max(1.0, df.get(g, 0.0)))) for g, k in counts.items()}


def _cos(a, b):
    dot = sum(v * b.get(g, 0.0) for g, v in a.items())
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def cider(candidates, references, max_n=4) -> float:
    """Plain CIDEr (no length penalty or clipping), x10, averaged over samples.

    Document frequencies come from the reference corpus.
    """
    pairs = _pairs(candidates, references)
    if len(pairs) < 2:
        raise ValueError("CIDEr needs at least two samples for document frequencies")
    log_n = math.log(float(len(pairs)))
    scores = [0.0] * len(pairs)
    for n in range(1, max_n + 1):
        df = Counter()
        for _, r in pairs:
            df.update(set(ngrams(r, n)))
        for i, (c, r) in enumerate(pairs):
            scores[i] += _cos(_cider_vec(c, n, df, log_n), _cider_vec(r, n, df, log_n)) / max_n
    return 10.0 * sum(scores) / len(scores)


def evaluate(candidates, references) -> MetricReport:
    pairs = _pairs(candidates, references)
    return MetricReport(
        bleu=[bleu_n(candidates, references, n) for n in range(1, 5)],
        rouge_l=rouge_l(candidates, references),
        meteor=meteor_exact(candidates, references),
        cider=cider(candidates, references) if len(pairs) >= 2 else 0.0,
        n_samples=len(pairs),
    )
