"""desc2story: a story-generation workbench.

Turns an ordered list of scene descriptions into a short story with a
GRU encoder-decoder plus attention, trained with Adam on a numpy-based
reverse-mode autodiff kernel. Ships its own evaluation metrics (BLEU-4,
METEOR, TER, ROUGE-L), a Kneser-Ney n-gram language model, and the `d2s`
command-line tool.

Submodules are imported lazily so the command-line entry can pin thread
environment variables before numpy loads.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "Vocab": "corpus",
    "Example": "corpus",
    "CorpusStats": "corpus",
    "tokenize": "corpus",
    "build_vocab": "corpus",
    "encode_example": "corpus",
    "compute_stats": "corpus",
    "load_examples": "corpus",
    "Hyperparams": "model",
    "Seq2SeqModel": "model",
    "save_checkpoint": "model",
    "load_checkpoint": "model",
    "TrainConfig": "training",
    "train": "training",
    "generate_story": "decoding",
    "beam_search": "decoding",
    "greedy_search": "decoding",
    "bleu_corpus": "metrics",
    "rouge_l": "metrics",
    "ter": "metrics",
    "meteor": "metrics",
    "evaluate_corpus": "metrics",
    "KNModel": "ngram",
    "train_lm": "ngram",
    "StoryGenerator": "estimators",
    "KneserNeyLM": "estimators",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    if name in _EXPORTS:
        import importlib

        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
