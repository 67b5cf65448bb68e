"""Estimator-style wrappers: fit/predict story generation and a fit/score
language model, following the scikit-learn parameter conventions.

These wrap the functional modules (corpus, training, decoding, ngram) so the
workbench composes with sklearn tooling like `clone` and `get_params`; all
real work happens in those modules.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .corpus import Example, build_vocab, encode_source, tokenize
from .decoding import generate_ids
from .metrics import bleu_corpus
from .model import Hyperparams
from .ngram import corpus_perplexity, train_lm
from .training import TrainConfig, train


def _check_fitted(estimator, attributes):
    missing = [a for a in attributes if not hasattr(estimator, a)]
    if missing:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit before using this method"
        )


def _as_description_lists(X):
    """Validate X as a non-empty list of non-empty description-string lists."""
    if not isinstance(X, (list, tuple)) or len(X) == 0:
        raise ValueError("X must be a non-empty sequence of description lists")
    out = []
    for i, descs in enumerate(X):
        if isinstance(descs, str) or not isinstance(descs, (list, tuple)) or len(descs) == 0:
            raise ValueError(f"X[{i}] must be a non-empty list of description strings")
        out.append([str(d) for d in descs])
    return out


class StoryGenerator(BaseEstimator):
    """Generate a story from an ordered list of scene descriptions.

    fit(X, y) trains the encoder-decoder on description-list/story pairs;
    predict(X) decodes stories with beam search (or greedily). Follows
    the scikit-learn estimator protocol: constructor only stores
    hyperparameters, fitted state lives in trailing-underscore attributes.
    """

    def __init__(
        self,
        embed_dim=256,
        hidden_dim=256,
        dropout=0.2,
        beam_width=5,
        max_decode_len=100,
        batch_size=32,
        max_iterations=1000,
        lr=0.001,
        clip_norm=5.0,
        min_count=2,
        max_vocab_size=30000,
        mode="beam",
        seed=0,
    ):
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.dropout = dropout
        self.beam_width = beam_width
        self.max_decode_len = max_decode_len
        self.batch_size = batch_size
        self.max_iterations = max_iterations
        self.lr = lr
        self.clip_norm = clip_norm
        self.min_count = min_count
        self.max_vocab_size = max_vocab_size
        self.mode = mode
        self.seed = seed

    def fit(self, X, y):
        X = _as_description_lists(X)
        if y is None or len(y) != len(X):
            raise ValueError("y must be a story sequence aligned with X")
        examples = [Example(str(i), descs, str(story)) for i, (descs, story) in enumerate(zip(X, y))]
        for ex in examples:
            ex.validate()
        self.vocab_ = build_vocab(examples, min_count=self.min_count, max_size=self.max_vocab_size)
        hp = Hyperparams(
            vocab_size=len(self.vocab_),
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            dropout=self.dropout,
            beam_width=self.beam_width,
            max_decode_len=self.max_decode_len,
        )
        config = TrainConfig(
            hyperparams=hp,
            max_iterations=self.max_iterations,
            batch_size=self.batch_size,
            clip_norm=self.clip_norm,
            lr=self.lr,
            seed=self.seed,
        )
        result = train(config, self.vocab_, examples)
        self.model_ = result.model
        self.train_records_ = result.records
        return self

    def predict(self, X):
        _check_fitted(self, ("model_", "vocab_"))
        X = _as_description_lists(X)
        stories = []
        for descs in X:
            ids = generate_ids(
                self.model_, encode_source(descs, self.vocab_), mode=self.mode
            )
            stories.append(" ".join(self.vocab_.decode_ids(ids)))
        return stories

    def score(self, X, y):
        """Corpus BLEU-4 of predictions against reference stories, on [0, 1]."""
        _check_fitted(self, ("model_", "vocab_"))
        hyps = [tokenize(s) for s in self.predict(X)]
        refs = [tokenize(str(s)) for s in y]
        return bleu_corpus(hyps, refs, smoothing=True) / 100.0


class KneserNeyLM(BaseEstimator):
    """N-gram language model estimator: fit on tokenized (or raw) stories,
    then query probabilities and perplexity."""

    def __init__(self, order=5, discount=0.75):
        self.order = order
        self.discount = discount

    @staticmethod
    def _as_token_lists(X):
        if not isinstance(X, (list, tuple)) or len(X) == 0:
            raise ValueError("X must be a non-empty sequence of stories")
        return [tokenize(s) if isinstance(s, str) else [str(t) for t in s] for s in X]

    def fit(self, X, y=None):
        self.model_ = train_lm(self._as_token_lists(X), order=self.order, discount=self.discount)
        return self

    def prob(self, context, word):
        _check_fitted(self, ("model_",))
        return self.model_.prob(context, word)

    def perplexity(self, X):
        _check_fitted(self, ("model_",))
        return corpus_perplexity(self.model_, self._as_token_lists(X))

    def score(self, X, y=None):
        """Mean log-probability per event (higher is better)."""
        return -float(np.log(self.perplexity(X)))
