"""Shared fixtures: synthetic corpora and small models sized for fast tests."""

import numpy as np
import pytest

from desc2story.corpus import Example, build_vocab
from desc2story.model import Hyperparams, Seq2SeqModel


def synthetic_examples(n=20):
    """Deterministic description/story pairs a small model can memorize.

    Each pair carries a unique key token so no two sources collide; without
    it the mapping is ambiguous and memorization stalls.
    """
    words = [f"w{i}" for i in range(25)]
    examples = []
    for i in range(n):
        key = f"k{i}"
        a = words[(i * 7) % 25]
        b = words[(i * 11 + 3) % 25]
        c = words[(i * 13 + 5) % 25]
        story = f"{a} {b} {key} {c} {words[(i + 2) % 25]} ."
        examples.append(Example(str(i), [f"{key} {a} {b}", f"{c} {a}"], story))
    return examples


@pytest.fixture(scope="session")
def overfit_examples():
    return synthetic_examples(20)


@pytest.fixture(scope="session")
def overfit_vocab(overfit_examples):
    return build_vocab(overfit_examples, min_count=1)


def tiny_model(vocab_size=11, embed_dim=3, hidden_dim=4, dropout=0.0, seed=0, dtype=np.float64):
    """Small double-precision model for gradient and search tests."""
    hp = Hyperparams(
        vocab_size=vocab_size,
        embed_dim=embed_dim,
        hidden_dim=hidden_dim,
        dropout=dropout,
        max_decode_len=12,
    )
    return Seq2SeqModel(hp, seed=seed, dtype=dtype)


def zero_params(model):
    for p in model.params():
        p.data[...] = 0.0
    return model
