"""Interpolated Kneser-Ney n-gram language model with a single absolute
discount.

The highest order discounts raw counts; every lower order discounts
continuation counts (how many distinct one-token left extensions of a gram
were observed); the unigram level interpolates down to the uniform
distribution over the vocabulary, so every query gets positive probability.

Each training sentence is padded with order-1 start markers and terminated by
an end marker; the end marker is a predicted event, the start markers are
context only and never enter the vocabulary.
"""

from __future__ import annotations

from collections import Counter, defaultdict

import numpy as np

from .corpus import BOS, EOS, UNK


class KNModel:
    """Trained model: per-order count tables plus derived context totals.

    Immutable after construction; safe to query concurrently.
    """

    def __init__(self, order, discount, raw, cont):
        if not 0.0 < discount < 1.0:
            raise ValueError("discount must be in (0, 1)")
        if order < 1:
            raise ValueError("order must be >= 1")
        self.order = order
        self.discount = discount
        self.raw = raw  # raw[k]: k-gram tuple -> count, k = 1..order
        self.cont = cont  # cont[k]: k-gram tuple -> continuation count, k = 1..order-1
        self.vocab = sorted(g[0] for g in raw[1])
        self._vindex = set(self.vocab)
        self._ctx_stats = {}
        for k in range(2, order + 1):
            table = raw[k] if k == order else cont[k]
            stats = defaultdict(lambda: [0, 0])
            for gram, count in table.items():
                s = stats[gram[:-1]]
                s[0] += count
                s[1] += 1
            self._ctx_stats[k] = {ctx: tuple(v) for ctx, v in stats.items()}
        uni = raw[1] if order == 1 else cont[1]
        self._uni_table = uni
        self._uni_total = sum(uni.values())
        self._uni_distinct = len(uni)

    @property
    def vocab_size(self):
        return len(self.vocab)

    def _normalize(self, token):
        if token == BOS or token in self._vindex:
            return token
        return UNK

    def prob(self, context, word):
        """Interpolated probability p(word | context), using at most the last
        order-1 context tokens. Unknown tokens map to the unknown marker."""
        ctx = tuple(self._normalize(t) for t in context)[max(0, len(context) - (self.order - 1)) :]
        return self._p(ctx, self._normalize(word), len(ctx) + 1)

    def _p(self, ctx, w, k):
        D = self.discount
        if k == 1:
            if self._uni_total == 0:
                return 1.0 / self.vocab_size
            c = self._uni_table.get((w,), 0)
            lam = D * self._uni_distinct / self._uni_total
            return max(c - D, 0.0) / self._uni_total + lam / self.vocab_size
        lower = self._p(ctx[1:], w, k - 1)
        total, distinct = self._ctx_stats[k].get(ctx, (0, 0))
        if total == 0:
            return lower
        table = self.raw[k] if k == self.order else self.cont[k]
        c = table.get(ctx + (w,), 0)
        return max(c - D, 0.0) / total + (D * distinct / total) * lower

    def logprob_events(self, tokens):
        """Sum of ln p over the prediction events of one sentence (its tokens
        plus the end marker), with per-sentence start padding."""
        tokens = list(tokens)
        padded = [BOS] * (self.order - 1) + tokens
        total = 0.0
        for i, w in enumerate(tokens + [EOS]):
            p = self.prob(padded[i : i + self.order - 1], w)
            if p <= 0.0:
                raise ValueError(f"zero probability for event {w!r}")
            total += np.log(p)
        return total, len(tokens) + 1

    def perplexity(self, tokens):
        """exp of the mean negative log-probability per event, the end-marker
        event included."""
        if not tokens:
            raise ValueError("empty text")
        logp, n = self.logprob_events(tokens)
        return float(np.exp(-logp / n))

    def save(self, path):
        """Plain-text table dump, sorted within each order; reloading and
        saving again reproduces the file byte for byte."""
        lines = [f"# kn order={self.order} discount={self.discount!r}\n"]
        for k in range(1, self.order + 1):
            lines.append(f"# order {k}\n")
            for gram in sorted(self.raw[k]):
                cc = self.cont[k].get(gram, 0) if k < self.order else 0
                lines.append(f"{' '.join(gram)}\t{self.raw[k][gram]}\t{cc}\n")
        with open(path, "w", encoding="utf-8") as f:
            f.writelines(lines)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        if not lines or not lines[0].startswith("# kn "):
            raise ValueError(f"{path}: not a language model file")
        fields = dict(part.split("=") for part in lines[0][5:].split())
        order = int(fields["order"])
        discount = float(fields["discount"])
        raw = {k: {} for k in range(1, order + 1)}
        cont = {k: {} for k in range(1, order)}
        k = None
        for lineno, line in enumerate(lines[1:], 2):
            if line.startswith("# order "):
                k = int(line[8:])
                continue
            if not line:
                continue
            if k is None or not 1 <= k <= order:
                raise ValueError(f"{path}:{lineno}: data before a valid order header")
            try:
                gram_text, count, cc = line.split("\t")
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 'gram<TAB>count<TAB>continuation'") from None
            gram = tuple(gram_text.split(" "))
            raw[k][gram] = int(count)
            if k < order and int(cc) > 0:
                cont[k][gram] = int(cc)
        return cls(order, discount, raw, cont)


def train_lm(stories, order=5, discount=0.75):
    """Fit the model on pre-tokenized stories.

    Counts every k-gram (k = 1..order) ending at a prediction event; lower
    orders additionally receive continuation counts derived from the order
    above.
    """
    stories = list(stories)
    if not stories or all(not s for s in stories):
        raise ValueError("empty corpus")
    raw = {k: Counter() for k in range(1, order + 1)}
    for story in stories:
        seq = [BOS] * (order - 1) + list(story) + [EOS]
        for i in range(order - 1, len(seq)):
            for k in range(1, order + 1):
                raw[k][tuple(seq[i - k + 1 : i + 1])] += 1
    cont = {k: Counter() for k in range(1, order)}
    for k in range(1, order):
        for gram in raw[k + 1]:
            cont[k][gram[1:]] += 1
    return KNModel(order, discount, {k: dict(v) for k, v in raw.items()}, {k: dict(v) for k, v in cont.items()})


def train_lm_stream(tokens, order=5, discount=0.75):
    """Fit on one unbroken token stream with no boundary markers; useful for
    analyzing the smoothing arithmetic in isolation."""
    tokens = list(tokens)
    if not tokens:
        raise ValueError("empty corpus")
    raw = {k: Counter() for k in range(1, order + 1)}
    for i in range(len(tokens)):
        for k in range(1, min(order, i + 1) + 1):
            raw[k][tuple(tokens[i - k + 1 : i + 1])] += 1
    cont = {k: Counter() for k in range(1, order)}
    for k in range(1, order):
        for gram in raw[k + 1]:
            cont[k][gram[1:]] += 1
    return KNModel(order, discount, {k: dict(v) for k, v in raw.items()}, {k: dict(v) for k, v in cont.items()})


def corpus_perplexity(model, stories):
    """Perplexity over many sentences with pooled events."""
    total = 0.0
    events = 0
    for story in stories:
        if not story:
            continue
        lp, n = model.logprob_events(story)
        total += lp
        events += n
    if events == 0:
        raise ValueError("empty text")
    return float(np.exp(-total / events))
