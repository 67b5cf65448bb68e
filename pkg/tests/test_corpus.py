"""Tokenizer, vocabulary, encoding, batching, statistics, and corpus IO."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from desc2story.corpus import (
    BOS_ID,
    DESC_DELIM_ID,
    EOS_ID,
    PAD_ID,
    RESERVED,
    SEQ_END_ID,
    UNK_ID,
    Example,
    Vocab,
    build_vocab,
    compute_stats,
    count_sentences,
    detokenize,
    encode_example,
    encode_source,
    is_punct,
    load_examples,
    load_stopwords,
    make_batches,
    pad_batch,
    shuffle_order,
    tokenize,
    write_examples,
)

TEXTISH = st.text(
    alphabet=st.characters(min_codepoint=32, max_codepoint=0x2FF),
    max_size=60,
)


class TestTokenize:
    def test_lowercases_and_splits_punctuation(self):
        assert tokenize("The cat's mat.") == ["the", "cat", "'", "s", "mat", "."]

    def test_empty_string(self):
        assert tokenize("") == []

    def test_whitespace_runs_collapse(self):
        assert tokenize("a  b") == ["a", "b"]

    def test_punctuation_marks_are_single_tokens(self):
        for mark in ".,!?;:'\"()-":
            assert tokenize(f"x{mark}y") == ["x", mark, "y"]
            assert is_punct(mark)

    @given(TEXTISH)
    def test_no_token_is_empty_or_spacey(self, text):
        for tok in tokenize(text):
            assert tok
            assert not any(ch.isspace() for ch in tok)

    @given(TEXTISH)
    def test_idempotent_over_detokenize(self, text):
        toks = tokenize(text)
        assert tokenize(detokenize(toks)) == toks

    @given(TEXTISH)
    def test_output_tokens_are_lowercase(self, text):
        for tok in tokenize(text):
            assert tok == tok.lower()


class TestCountSentences:
    def test_terminator_split(self):
        assert count_sentences("a b. c d.") == 2
        assert count_sentences("what? yes! ok.") == 3

    def test_unterminated_content_counts_once(self):
        assert count_sentences("no terminator") == 1
        assert count_sentences("") == 0


class TestVocab:
    def test_reserved_ids_are_fixed(self):
        v = Vocab()
        assert len(v) == 6
        assert v.decode_ids(range(6)) == list(RESERVED)
        assert (PAD_ID, UNK_ID, BOS_ID, EOS_ID, DESC_DELIM_ID, SEQ_END_ID) == (0, 1, 2, 3, 4, 5)

    def test_lookup_falls_back_to_unk(self):
        v = Vocab(["alpha"])
        assert v.lookup("alpha") == 6
        assert v.lookup("missing") == UNK_ID

    def test_min_count_filters(self):
        exs = [Example("0", ["a a b"], "a .")]
        v = build_vocab(exs, min_count=2)
        assert "a" in v and "b" not in v

    def test_max_size_keeps_most_frequent(self):
        exs = [Example("0", ["a b", "a"], "a .")]
        v = build_vocab(exs, min_count=1, max_size=1)
        assert len(v) == 7
        assert "a" in v

    def test_count_ties_break_alphabetically(self):
        exs = [Example("0", ["b a"], "b a")]
        v = build_vocab(exs, min_count=1, max_size=1)
        assert "a" in v and "b" not in v

    def test_empty_corpus_errors(self):
        with pytest.raises(ValueError, match="empty corpus"):
            build_vocab([], min_count=1)
        with pytest.raises(ValueError):
            build_vocab([Example("0", ["x"], "x")], min_count=0)

    def test_all_counts_meet_min_count(self):
        exs = [Example(str(i), [f"t{i} t{i} common"], "common .") for i in range(5)]
        v = build_vocab(exs, min_count=2)
        for tok in v.id_to_token[6:]:
            assert v.counts[tok] >= 2

    def test_save_load_round_trip(self, tmp_path):
        exs = [Example("0", ["a b b"], "c c .")]
        v = build_vocab(exs, min_count=1)
        path = tmp_path / "vocab.tsv"
        v.save(path)
        w = Vocab.load(path)
        assert w.id_to_token == v.id_to_token
        assert all(w.counts[t] == v.counts[t] for t in v.counts)

    def test_load_rejects_malformed_line(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("token-without-count\n")
        with pytest.raises(ValueError, match="bad.tsv:1"):
            Vocab.load(path)


class TestEncoding:
    def vocab(self):
        return build_vocab([Example("0", ["a b", "c d"], "e f .")], min_count=1)

    def test_source_layout_delimiters_and_end(self):
        v = self.vocab()
        ids = encode_source(["a b", "c d"], v)
        a, b, c, d = (v.lookup(t) for t in "abcd")
        assert ids == [a, b, DESC_DELIM_ID, c, d, SEQ_END_ID]

    def test_single_description_has_no_delimiter(self):
        v = self.vocab()
        ids = encode_source(["a b"], v)
        assert DESC_DELIM_ID not in ids
        assert ids[-1] == SEQ_END_ID

    def test_oov_becomes_unk(self):
        v = self.vocab()
        ids = encode_source(["a zzz"], v)
        assert ids[1] == UNK_ID

    def test_target_wrapped_in_bos_eos(self):
        v = self.vocab()
        pair = encode_example(Example("0", ["a b"], "e f ."), v)
        assert pair.target_ids[0] == BOS_ID
        assert pair.target_ids[-1] == EOS_ID
        assert len(pair.target_ids) == 5

    def test_empty_inputs_error(self):
        v = self.vocab()
        with pytest.raises(ValueError):
            encode_source([], v)
        with pytest.raises(ValueError):
            encode_example(Example("0", ["a"], "   "), v)


class TestBatching:
    def pairs(self, lengths):
        v = build_vocab([Example("0", ["a"], "a .")], min_count=1)
        out = []
        for n in lengths:
            out.append(encode_example(Example("x", ["a"], " ".join(["a"] * n)), v))
        return out

    def test_batch_count_70_over_32(self):
        batches = make_batches(self.pairs([1] * 70), 32, seed=0)
        assert [len(b) for b in batches] == [32, 32, 6]

    def test_same_seed_same_batches(self):
        pairs = self.pairs(range(1, 21))
        a = make_batches(pairs, 8, seed=7)
        b = make_batches(pairs, 8, seed=7)
        for x, y in zip(a, b):
            assert np.array_equal(x.source, y.source)
            assert np.array_equal(x.target, y.target)

    def test_padding_width_and_mask(self):
        pairs = self.pairs([1, 3])
        batch = pad_batch(pairs)
        assert batch.target.shape[1] == 5
        short = list(batch.target_mask[0])
        assert short == [1, 1, 1, 0, 0]
        assert list(batch.target[0][3:]) == [PAD_ID, PAD_ID]

    def test_flattened_batches_are_a_permutation(self):
        pairs = self.pairs(range(1, 16))
        seed = 11
        batches = make_batches(pairs, 4, seed)
        flat = [tuple(p.target_ids) for b in batches for p in _rows(b)]
        order = shuffle_order(len(pairs), seed)
        assert flat == [tuple(pairs[i].target_ids) for i in order]

    def test_mask_matches_pad_positions(self):
        batch = pad_batch(self.pairs([2, 5, 3]))
        assert np.array_equal(batch.target_mask == 1, batch.target != PAD_ID)


def _rows(batch):
    """Recover unpadded pairs from a batch for permutation checks."""
    from desc2story.corpus import EncodedPair

    out = []
    for i in range(len(batch)):
        t = [int(x) for x in batch.target[i] if x != PAD_ID]
        s = [int(x) for x in batch.source[i] if x != PAD_ID]
        out.append(EncodedPair(s, t))
    return out


class TestStats:
    def test_hand_worked_document(self):
        exs = [Example("0", ["a b. c d."], "a e f.")]
        stats = compute_stats(exs, stopwords={"a"})
        assert stats.doc_count == 1
        assert stats.avg_sentences_caption == 2
        assert stats.avg_sentences_story == 1
        assert stats.avg_nonoverlap_words == 2
        assert stats.unseen_nonstop_fraction == 1.0

    def test_identity_document_is_all_zero_overlap(self):
        exs = [Example("0", ["x y."], "x y.")]
        stats = compute_stats(exs, stopwords=set())
        assert stats.avg_nonoverlap_words == 0
        assert stats.unseen_nonstop_fraction == 0.0

    def test_ranges(self):
        exs = [Example(str(i), ["p q r."], "p z.") for i in range(3)]
        stats = compute_stats(exs, stopwords={"q"})
        for value in stats.as_dict().values():
            assert np.isfinite(value)
        assert 0.0 <= stats.unseen_nonstop_fraction <= 1.0

    def test_empty_corpus_errors(self):
        with pytest.raises(ValueError):
            compute_stats([], stopwords=set())


class TestCorpusIO:
    def test_jsonl_round_trip(self, tmp_path):
        exs = [Example("7", ["one desc", "two desc"], "the story .")]
        path = tmp_path / "c.jsonl"
        write_examples(exs, path)
        back = load_examples(path)
        assert back == exs

    def test_bad_json_names_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id": "0", "descriptions": ["a"], "story": "s ."}\nnot json\n')
        with pytest.raises(ValueError, match="c.jsonl:2"):
            load_examples(path)

    def test_missing_field_names_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id": "0", "story": "s ."}\n')
        with pytest.raises(ValueError, match="descriptions"):
            load_examples(path)

    def test_story_optional_only_when_allowed(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id": "0", "descriptions": ["a b"]}\n')
        with pytest.raises(ValueError):
            load_examples(path)
        exs = load_examples(path, require_story=False)
        assert exs[0].story == ""

    def test_packaged_stopwords_are_tokenizer_compatible(self):
        stops = load_stopwords()
        assert "the" in stops and "of" in stops
        for word in stops:
            assert tokenize(word) == [word]
