"""Decoding strategies: greedy search and beam search with length-normalized
scoring.

The search engine is generic over a step function, so it can drive the real
model or a hand-built probability table equally well. A step function maps
(previous token ids, per-hypothesis states) for the active hypotheses to
(log-probability rows, new states).

Ties are always resolved toward the lexicographically smaller output id
sequence; the active list is kept in that order so a stable sort over
(beam, token) candidates realizes the rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .corpus import (
    BOS_ID,
    DESC_DELIM_ID,
    EOS_ID,
    PAD_ID,
    SEQ_END_ID,
    UNK_ID,
    detokenize,
    encode_source,
)
from .model import Encoded

LENGTH_NORM_POWER = 0.7

# ids never emitted into generated stories; the end sentinel terminates but is
# stripped, and unknown-word emission stays available unless suppressed.
BANNED_OUTPUT_IDS = (PAD_ID, BOS_ID, DESC_DELIM_ID, SEQ_END_ID)


@dataclass
class Hypothesis:
    """A (possibly unfinished) output prefix with its cumulative log-probability."""

    ids: list = field(default_factory=list)
    logprob: float = 0.0
    finished: bool = False
    state: object = None

    def score(self, alpha=LENGTH_NORM_POWER):
        """Length-normalized score: logprob / len^alpha (len counts every
        emitted id, the end marker included)."""
        return self.logprob / max(len(self.ids), 1) ** alpha


def log_softmax_rows(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _apply_bans(logprobs, banned_ids):
    if banned_ids:
        logprobs[:, list(banned_ids)] = -np.inf
    return logprobs


def greedy_search(step_fn, start_state, start_id, *, max_len, eos_id=EOS_ID, banned_ids=BANNED_OUTPUT_IDS):
    """Emit the argmax token at every step until the end id or the length cap.

    Among equal log-probabilities the lowest id wins.
    """
    hyp = Hypothesis(state=start_state)
    prev = start_id
    for _ in range(max_len):
        logprobs, states = step_fn(np.asarray([prev]), [hyp.state])
        row = _apply_bans(np.array(logprobs, dtype=np.float64), banned_ids)[0]
        v = int(np.argmax(row))
        hyp.ids.append(v)
        hyp.logprob += float(row[v])
        hyp.state = states[0]
        prev = v
        if v == eos_id:
            hyp.finished = True
            break
    if len(hyp.ids) >= max_len:
        hyp.finished = True
    return hyp


def beam_search(
    step_fn,
    start_state,
    start_id,
    *,
    width,
    max_len,
    eos_id=EOS_ID,
    alpha=LENGTH_NORM_POWER,
    banned_ids=BANNED_OUTPUT_IDS,
):
    """Beam search over a step function; returns hypotheses ranked best-first.

    Every step expands all active hypotheses, keeps the `width` best
    continuations by cumulative log-probability, and moves any that emitted
    the end id into a completed pool. The search stops once the pool holds
    `width` finished hypotheses or `max_len` steps have run; hypotheses that
    reach the length cap count as finished. Final ranking uses the
    length-normalized score; unfinished hypotheses are ranked only when
    nothing finished.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    active = [Hypothesis(state=start_state)]
    prev_ids = [start_id]
    completed = []
    for _ in range(max_len):
        if not active or len(completed) >= width:
            break
        logprobs, states = step_fn(np.asarray(prev_ids), [h.state for h in active])
        logprobs = _apply_bans(np.array(logprobs, dtype=np.float64), banned_ids)
        V = logprobs.shape[1]
        flat = (np.array([h.logprob for h in active])[:, None] + logprobs).ravel()
        order = np.argsort(-flat, kind="stable")[:width]
        next_active = []
        for fi in order:
            k, v = divmod(int(fi), V)
            if not np.isfinite(flat[fi]):
                continue
            child = Hypothesis(active[k].ids + [v], float(flat[fi]), v == eos_id, states[k])
            (completed if child.finished else next_active).append(child)
        # keep actives in lexicographic id order so candidate ties at the next
        # step resolve toward the smaller output sequence
        next_active.sort(key=lambda h: h.ids)
        active = next_active
        prev_ids = [h.ids[-1] for h in active]
    for h in active:
        if len(h.ids) >= max_len:
            h.finished = True
    pool = completed + [h for h in active if h.finished]
    if not pool:
        pool = active
    return sorted(pool, key=lambda h: (-h.score(alpha), h.ids))


def _encoded_for_beams(enc, k, cache):
    """Tile a batch-1 encoding to `k` rows of plain constants."""
    if k not in cache:
        anns = [Tensor(np.repeat(a.data, k, axis=0)) for a in enc.annotations]
        projs = [Tensor(np.repeat(p.data, k, axis=0)) for p in enc.ann_proj]
        init = Tensor(np.repeat(enc.init_state.data, k, axis=0))
        cache[k] = Encoded(anns, projs, init, np.repeat(enc.source_mask, k, axis=0))
    return cache[k]


def model_step_fn(model, enc):
    """Adapt a trained model and a batch-1 encoding to the search interface.

    Per-hypothesis state is the pair of decoder layer states as 1-D arrays.
    """
    cache = {}

    def step(prev_ids, states):
        k = len(states)
        enc_k = _encoded_for_beams(enc, k, cache)
        s1 = Tensor(np.stack([s[0] for s in states]))
        s2 = Tensor(np.stack([s[1] for s in states]))
        logits, n1, n2, _ = model.decode_step(prev_ids, s1, s2, enc_k, train=False)
        logprobs = log_softmax_rows(logits.data)
        return logprobs, [(n1.data[i], n2.data[i]) for i in range(k)]

    return step


def generate_ids(model, source_ids, *, mode="beam", beam_width=None, max_len=None, suppress_unk=False):
    """Decode one source id sequence into output ids (end id stripped)."""
    if mode not in ("beam", "greedy"):
        raise ValueError(f"unknown decode mode {mode!r}")
    width = model.hp.beam_width if beam_width is None else beam_width
    cap = model.hp.max_decode_len if max_len is None else max_len
    banned = BANNED_OUTPUT_IDS + ((UNK_ID,) if suppress_unk else ())
    src = np.asarray(source_ids, dtype=np.int64)[None, :]
    enc = model.encode(src, np.ones_like(src, dtype=np.float64), train=False)
    step = model_step_fn(model, enc)
    start_state = (enc.init_state.data[0], enc.init_state.data[0])
    if mode == "greedy":
        best = greedy_search(step, start_state, BOS_ID, max_len=cap, banned_ids=banned)
    else:
        best = beam_search(step, start_state, BOS_ID, width=width, max_len=cap, banned_ids=banned)[0]
    ids = best.ids
    if ids and ids[-1] == EOS_ID:
        ids = ids[:-1]
    return ids


def generate_story(model, vocab, descriptions, **kwargs):
    """Decode a story string for one list of description strings."""
    ids = generate_ids(model, encode_source(descriptions, vocab), **kwargs)
    return detokenize(vocab.decode_ids(ids))
