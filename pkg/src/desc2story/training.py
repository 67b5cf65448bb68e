"""Training loop: batched teacher-forced optimization with Adam, gradient
clipping, periodic greedy-decode validation, and best-checkpoint retention.

One iteration consumes one batch. Batches are reshuffled every epoch from a
seed derived per epoch, so a run is fully determined by (data, config, seed).
The log is CSV with header ``iteration,loss,val_bleu4`` and one row per
iteration, appended and flushed record by record so an interrupted run keeps
a valid prefix.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .corpus import encode_example, make_batches, tokenize
from .decoding import generate_ids
from .metrics import bleu_corpus
from .model import Hyperparams, Seq2SeqModel, save_checkpoint

LOG_HEADER = "iteration,loss,val_bleu4"


@dataclass
class TrainConfig:
    hyperparams: Hyperparams
    max_iterations: int
    batch_size: int = 32
    eval_every: int = 100
    clip_norm: float = 5.0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_path: object = None
    log_path: object = None

    def validate(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be ≥ 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        return self


@dataclass
class TrainLogRecord:
    iteration: int
    loss: float
    val_bleu4: float = None

    def csv_row(self):
        tail = "" if self.val_bleu4 is None else repr(self.val_bleu4)
        return f"{self.iteration},{self.loss!r},{tail}"


@dataclass
class TrainResult:
    model: Seq2SeqModel
    records: list = field(default_factory=list)
    best_val_bleu: float = None
    checkpoint_path: object = None


def validation_bleu(model, vocab, examples):
    """Greedy-decode every example and score corpus BLEU-4 against its story.

    Smoothing is on: early models match no 4-grams at all, and a hard zero
    would make every early checkpoint equally (un)attractive.
    """
    hyps = []
    refs = []
    for ex in examples:
        pair = encode_example(ex, vocab)
        ids = generate_ids(model, pair.source_ids, mode="greedy")
        hyps.append(vocab.decode_ids(ids))
        refs.append(tokenize(ex.story))
    return bleu_corpus(hyps, refs, smoothing=True)


def train(config, vocab, train_examples, val_examples=None, progress=None):
    """Optimize a fresh model on `train_examples`.

    Each iteration: forward loss with dropout on, backprop, global-norm clip,
    Adam step. Every `eval_every` iterations the model greedily decodes the
    validation set; the checkpoint file always holds the weights with the
    best validation BLEU seen so far. Returns the final in-memory model, the
    log records, and where the best checkpoint went.
    """
    config.validate()
    if not train_examples:
        raise ValueError("empty training corpus")
    hp = config.hyperparams.validate()
    model = Seq2SeqModel(hp, seed=config.seed)
    optimizer = ad.Adam(
        model.params(), lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps
    )
    drop_rng = ad.rng_stream(config.seed, "dropout")
    pairs = [encode_example(ex, vocab) for ex in train_examples]
    params = model.params()
    result = TrainResult(model, checkpoint_path=config.checkpoint_path)
    log_file = None
    if config.log_path is not None:
        log_file = open(config.log_path, "w", encoding="utf-8")
        log_file.write(LOG_HEADER + "\n")
        log_file.flush()
    saved = False
    try:
        iteration = 0
        epoch = 0
        start = time.monotonic()
        while iteration < config.max_iterations:
            epoch_seed = ad.rng_stream(config.seed, f"shuffle:epoch{epoch}").integers(0, 2**63)
            for batch in make_batches(pairs, config.batch_size, epoch_seed):
                iteration += 1
                try:
                    loss, _ = model.forward_loss(batch, train=True, drop_rng=drop_rng)
                except FloatingPointError as e:
                    raise RuntimeError(f"non-finite loss at iteration {iteration}: {e}") from e
                loss_value = float(loss.data)
                if not np.isfinite(loss_value):
                    raise RuntimeError(f"non-finite loss at iteration {iteration}")
                ad.zero_grads(params)
                ad.backward(loss)
                ad.clip_gradients(params, config.clip_norm)
                optimizer.step()
                record = TrainLogRecord(iteration, loss_value)
                if val_examples and iteration % config.eval_every == 0:
                    record.val_bleu4 = validation_bleu(model, vocab, val_examples)
                    if result.best_val_bleu is None or record.val_bleu4 >= result.best_val_bleu:
                        result.best_val_bleu = record.val_bleu4
                        if config.checkpoint_path is not None:
                            save_checkpoint(config.checkpoint_path, model, optimizer)
                            saved = True
                result.records.append(record)
                if log_file is not None:
                    log_file.write(record.csv_row() + "\n")
                    log_file.flush()
                if progress is not None and (
                    iteration % config.eval_every == 0 or iteration == config.max_iterations
                ):
                    progress(record, time.monotonic() - start)
                if iteration >= config.max_iterations:
                    break
            epoch += 1
        if config.checkpoint_path is not None and not saved:
            save_checkpoint(config.checkpoint_path, model, optimizer)
    finally:
        if log_file is not None:
            log_file.close()
    return result


def moving_average(values, window):
    """Trailing moving averages of `values` with the given window size."""
    if window < 1:
        raise ValueError("window must be >= 1")
    arr = np.asarray(values, dtype=np.float64)
    if len(arr) < window:
        return np.array([])
    csum = np.concatenate([[0.0], np.cumsum(arr)])
    return (csum[window:] - csum[:-window]) / window
