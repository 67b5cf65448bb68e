"""Evaluation metrics over tokenized text: corpus BLEU-4, ROUGE-L, TER, and
exact-match METEOR, plus a line-aligned file evaluator that renders all four.

All metrics are implemented here directly; sequences are plain lists of
string tokens.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .corpus import tokenize

BLEU_MAX_ORDER = 4


def ngram_counts(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_corpus(hyps, refs, smoothing=False):
    """Corpus BLEU-4 in [0, 100].

    Clipped n-gram matches and totals are summed over the whole corpus for
    n = 1..4: p_n = matches_n / totals_n. With `smoothing`, any order with
    zero matches uses (matches+1)/(totals+1) instead; without it, a zero
    match count at any order makes the score 0. Brevity penalty is
    min(1, e^(1 - r/c)) for total reference length r and hypothesis length c.
    """
    if len(hyps) != len(refs):
        raise ValueError(f"hypothesis/reference count mismatch: {len(hyps)} vs {len(refs)}")
    if not hyps:
        raise ValueError("empty corpus")
    matches = [0] * BLEU_MAX_ORDER
    totals = [0] * BLEU_MAX_ORDER
    c = r = 0
    for hyp, ref in zip(hyps, refs):
        c += len(hyp)
        r += len(ref)
        for n in range(1, BLEU_MAX_ORDER + 1):
            hc = ngram_counts(hyp, n)
            rc = ngram_counts(ref, n)
            matches[n - 1] += sum(min(count, rc[g]) for g, count in hc.items())
            totals[n - 1] += sum(hc.values())
    log_sum = 0.0
    for m, t in zip(matches, totals):
        if m == 0:
            if not smoothing:
                return 0.0
            m, t = m + 1, t + 1
        log_sum += np.log(m / t)
    if c == 0:
        return 0.0
    bp = min(1.0, float(np.exp(1.0 - r / c)))
    return 100.0 * bp * float(np.exp(log_sum / BLEU_MAX_ORDER))


def lcs_length(a, b):
    """Longest common subsequence length by dynamic programming."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(hyp, ref):
    """Sentence ROUGE-L F-score in [0, 1]: harmonic mean of LCS precision and
    recall, 0 when there is no common subsequence."""
    if not ref:
        raise ValueError("empty reference")
    if not hyp:
        return 0.0
    L = lcs_length(hyp, ref)
    if L == 0:
        return 0.0
    p = L / len(hyp)
    r = L / len(ref)
    return 2 * p * r / (p + r)


def rouge_l_corpus(hyps, refs):
    """Arithmetic mean of sentence F-scores."""
    if len(hyps) != len(refs):
        raise ValueError(f"hypothesis/reference count mismatch: {len(hyps)} vs {len(refs)}")
    if not hyps:
        raise ValueError("empty corpus")
    return sum(rouge_l(h, r) for h, r in zip(hyps, refs)) / len(hyps)


def levenshtein(a, b):
    """Word-level edit distance with unit insert/delete/substitute costs."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    b_arr = np.array(b, dtype=object)
    idx = np.arange(len(b) + 1)
    prev = idx.copy()
    for i, x in enumerate(a, 1):
        cur = np.empty(len(b) + 1, dtype=np.int64)
        cur[0] = i
        cur[1:] = np.minimum(prev[:-1] + (b_arr != x), prev[1:] + 1)
        # close insertions left-to-right: cur[j] <= cur[j-1] + 1 for all j
        cur = np.minimum.accumulate(cur - idx) + idx
        prev = cur
    return int(prev[-1])


def _best_shift(current, ref, base):
    """The block shift most reducing edit distance to `ref`, or None.

    Ties prefer the smallest block, then the leftmost origin, then the
    leftmost destination. A shift qualifies only if it strictly reduces the
    remaining edit distance.
    """
    best_key = None
    best = None
    n = len(current)
    for i in range(n):
        for j in range(i + 1, n + 1):
            block = current[i:j]
            rest = current[:i] + current[j:]
            for k in range(len(rest) + 1):
                if k == i:
                    continue
                cand = rest[:k] + block + rest[k:]
                d = levenshtein(cand, ref)
                if d >= base:
                    continue
                key = (d, j - i, i, k)
                if best_key is None or key < best_key:
                    best_key = key
                    best = (cand, d)
    return best


def ter(hyp, ref):
    """Translation edit rate in percent: 100 * (edits + shifts) / len(ref).

    Shifts are found greedily: while some block move strictly reduces the
    word-level edit distance, apply the one that reduces it most (unit cost
    per shift). The shift search is exhaustive over blocks and destinations,
    so it is exact but quadratic-times-quadratic in sentence length.
    """
    if not ref:
        raise ValueError("empty reference")
    current = list(hyp)
    base = levenshtein(current, ref)
    shifts = 0
    while base > 0:
        found = _best_shift(current, ref, base)
        if found is None:
            break
        current, base = found
        shifts += 1
    return 100.0 * (base + shifts) / len(ref)


def ter_corpus(hyps, refs):
    """Corpus TER: total edits-plus-shifts over total reference length."""
    if len(hyps) != len(refs):
        raise ValueError(f"hypothesis/reference count mismatch: {len(hyps)} vs {len(refs)}")
    if not hyps:
        raise ValueError("empty corpus")
    num = 0.0
    den = 0
    for h, r in zip(hyps, refs):
        num += ter(h, r) * len(r) / 100.0
        den += len(r)
    return 100.0 * num / den


_EXHAUSTIVE_MATCH_LIMIT = 12
_NODE_BUDGET = 300_000


class _BudgetExceeded(Exception):
    pass


def _greedy_pairs(hyp, ref, budget):
    """Leftmost-greedy alignment: scan the hypothesis left to right, matching
    each still-eligible token to the leftmost unused reference position."""
    budget = dict(budget)
    used = [False] * len(ref)
    pairs = []
    for i, t in enumerate(hyp):
        if budget.get(t, 0) <= 0:
            continue
        for j, u in enumerate(ref):
            if not used[j] and u == t:
                used[j] = True
                budget[t] -= 1
                pairs.append((i, j))
                break
    return pairs


def _chunk_count(pairs):
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def _min_chunks_exhaustive(hyp, ref, m):
    """Minimum chunk count over all maximum-cardinality exact alignments.

    Depth-first search over hypothesis positions with memoization on
    (position, used reference positions, adjacency); aborts via exception if
    the explored state count exceeds a fixed budget.
    """
    cand = [[j for j, u in enumerate(ref) if u == t] for t in hyp]
    # most matches obtainable from position i onward, ignoring conflicts
    suffix = [Counter() for _ in range(len(hyp) + 1)]
    for i in range(len(hyp) - 1, -1, -1):
        suffix[i] = suffix[i + 1].copy()
        suffix[i][hyp[i]] += 1
    ref_counts = Counter(ref)
    memo = {}
    nodes = [0]

    def rec(i, mask, last_j, matched, remaining):
        nodes[0] += 1
        if nodes[0] > _NODE_BUDGET:
            raise _BudgetExceeded
        if i == len(hyp):
            return 0 if matched == m else np.inf
        bound = sum(min(remaining[t], suffix[i][t]) for t in remaining if suffix[i][t])
        if matched + bound < m:
            return np.inf
        key = (i, mask, last_j)
        if key in memo:
            return memo[key]
        best = rec(i + 1, mask, -2, matched, remaining)
        for j in cand[i]:
            if mask & (1 << j):
                continue
            start = 0 if j == last_j + 1 else 1
            remaining[hyp[i]] -= 1
            sub = rec(i + 1, mask | (1 << j), j, matched + 1, remaining)
            remaining[hyp[i]] += 1
            best = min(best, start + sub)
        memo[key] = best
        return best

    remaining = Counter({t: min(c, ref_counts[t]) for t, c in Counter(hyp).items() if ref_counts[t]})
    return int(rec(0, 0, -2, 0, remaining))


def meteor_stats(hyp, ref):
    """Matched unigrams and minimal chunk count for one pair.

    Each token matches at most once; the match count is fixed at the maximum
    (per-type minimum of occurrence counts) and the alignment among those of
    maximum size is chosen to minimize chunks. Exhaustive when the match
    count is small, leftmost-greedy otherwise.
    """
    if not ref:
        raise ValueError("empty reference")
    hc, rc = Counter(hyp), Counter(ref)
    m = sum(min(c, rc[t]) for t, c in hc.items())
    if m == 0:
        return 0, 0
    if m <= _EXHAUSTIVE_MATCH_LIMIT:
        try:
            return m, _min_chunks_exhaustive(hyp, ref, m)
        except _BudgetExceeded:
            pass
    budget = {t: min(c, rc[t]) for t, c in hc.items() if rc[t]}
    return m, _chunk_count(_greedy_pairs(hyp, ref, budget))


def _meteor_from_stats(m, chunks, hyp_len, ref_len):
    if m == 0 or hyp_len == 0:
        return 0.0
    p = m / hyp_len
    r = m / ref_len
    f_mean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1.0 - penalty)


def meteor(hyp, ref):
    """Exact-match METEOR score in [0, 1] for one pair."""
    m, chunks = meteor_stats(hyp, ref)
    return _meteor_from_stats(m, chunks, len(hyp), len(ref))


def meteor_corpus(hyps, refs):
    """Corpus METEOR: the formula applied to corpus-summed statistics."""
    if len(hyps) != len(refs):
        raise ValueError(f"hypothesis/reference count mismatch: {len(hyps)} vs {len(refs)}")
    if not hyps:
        raise ValueError("empty corpus")
    m_sum = chunk_sum = hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        m, chunks = meteor_stats(h, r)
        m_sum += m
        chunk_sum += chunks
        hyp_len += len(h)
        ref_len += len(r)
    return _meteor_from_stats(m_sum, chunk_sum, hyp_len, ref_len)


@dataclass
class MetricReport:
    """All four corpus scores plus per-line values; column order matches the
    standard reporting layout (BLEU-4, METEOR, TER, ROUGE-L)."""

    bleu4: float
    meteor: float
    ter: float
    rouge_l: float
    per_sentence: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(
            {"bleu4": self.bleu4, "meteor": self.meteor, "ter": self.ter, "rouge_l": self.rouge_l},
            sort_keys=True,
        )

    def render(self):
        header = f"{'BLEU-4':>8}  {'METEOR':>8}  {'TER':>8}  {'ROUGE-L':>8}"
        row = f"{self.bleu4:>8.2f}  {self.meteor:>8.3f}  {self.ter:>8.2f}  {self.rouge_l:>8.3f}"
        return header + "\n" + row


def evaluate_corpus(hyps, refs, smoothing=False):
    """MetricReport over aligned token-sequence lists."""
    report = MetricReport(
        bleu4=bleu_corpus(hyps, refs, smoothing=smoothing),
        meteor=meteor_corpus(hyps, refs),
        ter=ter_corpus(hyps, refs),
        rouge_l=rouge_l_corpus(hyps, refs),
    )
    for h, r in zip(hyps, refs):
        report.per_sentence.append(
            {
                "bleu4": bleu_corpus([h], [r], smoothing=smoothing),
                "meteor": meteor(h, r),
                "ter": ter(h, r),
                "rouge_l": rouge_l(h, r),
            }
        )
    return report


def evaluate_files(hyp_path, ref_path, smoothing=False):
    """Tokenize two line-aligned files and score hypothesis lines against
    reference lines."""
    with open(hyp_path, encoding="utf-8") as f:
        hyp_lines = f.read().splitlines()
    with open(ref_path, encoding="utf-8") as f:
        ref_lines = f.read().splitlines()
    if len(hyp_lines) != len(ref_lines):
        raise ValueError(
            f"line count mismatch: {hyp_path} has {len(hyp_lines)}, {ref_path} has {len(ref_lines)}"
        )
    hyps = [tokenize(line) for line in hyp_lines]
    refs = [tokenize(line) for line in ref_lines]
    return evaluate_corpus(hyps, refs, smoothing=smoothing)
