"""Corpus ingestion: tokenization, vocabulary, encoding, batching, statistics.

Documents pair an ordered list of short descriptions with one story. The
encoder-side token sequence joins the descriptions with a delimiter token and
closes with an end-of-set marker; the decoder side wraps the story in
begin/end sentinels.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

PAD, UNK, BOS, EOS, DESC_DELIM, SEQ_END = "<pad>", "<unk>", "<s>", "</s>", "<d>", "<seq_end>"
RESERVED = (PAD, UNK, BOS, EOS, DESC_DELIM, SEQ_END)
PAD_ID, UNK_ID, BOS_ID, EOS_ID, DESC_DELIM_ID, SEQ_END_ID = range(6)

_PUNCT = ".,!?;:'\"()-"
_TOKEN_RE = re.compile(r"[.,!?;:'\"()\-]|[^\s.,!?;:'\"()\-]+")
_SENT_RE = re.compile(r"[.!?]")


def tokenize(text):
    """Lowercase `text` and split it into tokens.

    Punctuation marks (``.,!?;:'"()-``) become standalone tokens; runs of
    whitespace separate tokens and are otherwise discarded.
    """
    return _TOKEN_RE.findall(text.lower())


def is_punct(token):
    return len(token) == 1 and token in _PUNCT


def count_sentences(text):
    """Number of sentences in `text`, splitting on ``.!?``.

    Text without any terminator counts as one sentence if it has content.
    """
    return sum(1 for part in _SENT_RE.split(text) if part.strip())


@dataclass
class Example:
    """One document: an ordered description list paired with its story."""

    id: str
    descriptions: list[str]
    story: str

    def validate(self):
        if not self.descriptions:
            raise ValueError(f"example {self.id!r}: descriptions must be non-empty")
        if not tokenize(self.story):
            raise ValueError(f"example {self.id!r}: story empty after tokenization")


class Vocab:
    """Bidirectional token/id table with six reserved leading ids."""

    def __init__(self, tokens=(), counts=None):
        self.id_to_token = list(RESERVED) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        self.counts = dict(counts or {})

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def lookup(self, token):
        """Id for `token`, or the UNK id when absent."""
        return self.token_to_id.get(token, UNK_ID)

    def token(self, idx):
        return self.id_to_token[idx]

    def encode_tokens(self, tokens):
        return [self.lookup(t) for t in tokens]

    def decode_ids(self, ids):
        return [self.id_to_token[i] for i in ids]

    def save(self, path):
        """Write non-reserved entries as ``token<TAB>count``, one per line, in id order."""
        with open(path, "w", encoding="utf-8") as f:
            for tok in self.id_to_token[len(RESERVED):]:
                f.write(f"{tok}\t{self.counts.get(tok, 0)}\n")

    @classmethod
    def load(cls, path):
        tokens, counts = [], {}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    tok, count = line.split("\t")
                    counts[tok] = int(count)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: expected 'token<TAB>count'") from None
                tokens.append(tok)
        return cls(tokens, counts)


@dataclass
class EncodedPair:
    """Integer-id encoding of one example."""

    source_ids: list[int]
    target_ids: list[int]

    @property
    def source_length(self):
        return len(self.source_ids)

    @property
    def target_length(self):
        return len(self.target_ids)


@dataclass
class Batch:
    """Padded id matrices with 0/1 masks; row i of every field is the same example."""

    source: np.ndarray
    source_mask: np.ndarray
    target: np.ndarray
    target_mask: np.ndarray

    def __len__(self):
        return self.source.shape[0]


@dataclass
class CorpusStats:
    doc_count: int
    avg_sentences_caption: float
    avg_sentences_story: float
    avg_words_caption: float
    avg_words_story: float
    avg_nonoverlap_words: float
    unseen_nonstop_fraction: float

    def as_dict(self):
        return dict(self.__dict__)


def build_vocab(examples, min_count=2, max_size=30000):
    """Joint source/target vocabulary over `examples`.

    Tokens occurring fewer than `min_count` times are dropped; at most
    `max_size` non-reserved tokens are kept, ranked by descending count with
    lexicographic tie-breaking.
    """
    if not examples:
        raise ValueError("empty corpus")
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter()
    for ex in examples:
        for desc in ex.descriptions:
            counts.update(tokenize(desc))
        counts.update(tokenize(ex.story))
    kept = [t for t, c in counts.items() if c >= min_count and t not in RESERVED]
    kept.sort(key=lambda t: (-counts[t], t))
    kept = kept[:max_size]
    return Vocab(kept, {t: counts[t] for t in kept})


def encode_source(descriptions, vocab):
    """Id sequence for an ordered description list: descriptions joined by the
    delimiter id and closed with the end-of-set id. OOV tokens map to UNK."""
    if not descriptions:
        raise ValueError("descriptions must be non-empty")
    source_ids = []
    for i, desc in enumerate(descriptions):
        if i > 0:
            source_ids.append(DESC_DELIM_ID)
        source_ids.extend(vocab.encode_tokens(tokenize(desc)))
    source_ids.append(SEQ_END_ID)
    return source_ids


def encode_example(ex, vocab):
    """Encode one example: source ids from its descriptions, story wrapped in
    begin/end sentinel ids."""
    story_tokens = tokenize(ex.story)
    if not story_tokens:
        raise ValueError("empty target")
    target_ids = [BOS_ID] + vocab.encode_tokens(story_tokens) + [EOS_ID]
    return EncodedPair(encode_source(ex.descriptions, vocab), target_ids)


def pad_batch(pairs):
    """Pad a group of encoded pairs to their per-batch max lengths."""
    n = len(pairs)
    max_src = max(p.source_length for p in pairs)
    max_tgt = max(p.target_length for p in pairs)
    source = np.full((n, max_src), PAD_ID, dtype=np.int64)
    target = np.full((n, max_tgt), PAD_ID, dtype=np.int64)
    source_mask = np.zeros((n, max_src), dtype=np.float64)
    target_mask = np.zeros((n, max_tgt), dtype=np.float64)
    for i, p in enumerate(pairs):
        source[i, : p.source_length] = p.source_ids
        source_mask[i, : p.source_length] = 1.0
        target[i, : p.target_length] = p.target_ids
        target_mask[i, : p.target_length] = 1.0
    return Batch(source, source_mask, target, target_mask)


def shuffle_order(n, seed):
    """Deterministic permutation of range(n) for a given seed."""
    return np.random.default_rng(seed).permutation(n)


def make_batches(pairs, batch_size, seed):
    """Shuffle `pairs` deterministically by `seed` and group into padded batches.

    The last batch may be smaller than `batch_size`.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not pairs:
        return []
    order = shuffle_order(len(pairs), seed)
    shuffled = [pairs[i] for i in order]
    return [pad_batch(shuffled[i : i + batch_size]) for i in range(0, len(shuffled), batch_size)]


def _doc_word_tokens(texts):
    out = []
    for text in texts:
        out.extend(t for t in tokenize(text) if not is_punct(t))
    return out


def compute_stats(examples, stopwords):
    """Document-level corpus statistics.

    Word counts exclude pure-punctuation tokens (see README on this choice).
    `avg_nonoverlap_words` counts story token *types* absent from that
    document's captions, stopwords excluded; `unseen_nonstop_fraction` is the
    token-level analogue: the fraction of story non-stop tokens whose type
    never appears in the document's captions.
    """
    if not examples:
        raise ValueError("empty corpus")
    stopwords = set(stopwords)
    n = len(examples)
    sent_cap = sent_story = 0
    words_cap = words_story = 0
    nonoverlap = 0
    unseen_tokens = nonstop_tokens = 0
    for ex in examples:
        sent_cap += sum(count_sentences(d) for d in ex.descriptions)
        sent_story += count_sentences(ex.story)
        cap_tokens = _doc_word_tokens(ex.descriptions)
        story_tokens = _doc_word_tokens([ex.story])
        words_cap += len(cap_tokens)
        words_story += len(story_tokens)
        cap_types = set(cap_tokens)
        nonoverlap += len((set(story_tokens) - cap_types) - stopwords)
        for tok in story_tokens:
            if tok in stopwords:
                continue
            nonstop_tokens += 1
            if tok not in cap_types:
                unseen_tokens += 1
    return CorpusStats(
        doc_count=n,
        avg_sentences_caption=sent_cap / n,
        avg_sentences_story=sent_story / n,
        avg_words_caption=words_cap / n,
        avg_words_story=words_story / n,
        avg_nonoverlap_words=nonoverlap / n,
        unseen_nonstop_fraction=(unseen_tokens / nonstop_tokens) if nonstop_tokens else 0.0,
    )


def load_examples(path, require_story=True):
    """Read a JSON Lines corpus: one object per line with `id`, `descriptions`
    and `story` fields. With require_story=False a missing/empty story is
    tolerated (generation inputs)."""
    examples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            try:
                ex = Example(str(obj["id"]), list(obj["descriptions"]), str(obj.get("story", "")))
            except KeyError as e:
                raise ValueError(f"{path}:{lineno}: missing field {e.args[0]!r}") from None
            if require_story:
                ex.validate()
            elif not ex.descriptions:
                raise ValueError(f"{path}:{lineno}: descriptions must be non-empty")
            examples.append(ex)
    return examples


def write_examples(examples, path):
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps({"id": ex.id, "descriptions": ex.descriptions, "story": ex.story}) + "\n")


def load_stopwords(path=None):
    """Stopword set from `path`, or the packaged English function-word list."""
    if path is None:
        text = resources.files("desc2story.data").joinpath("stopwords.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    return {line.strip() for line in text.splitlines() if line.strip()}


def detokenize(tokens):
    """Render a token sequence as one output line (space-joined)."""
    return " ".join(tokens)
