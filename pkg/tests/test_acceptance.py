"""Acceptance gate: one test per release criterion, each printing a single
PASS/FAIL line (visible with -s; pytest -v shows the same verdict per test).

Run order mirrors the criterion numbering; criteria 2 and 3 share one
training run. The corpus-statistics check (criterion 8) needs the full
dataset and skips itself when the data is not present.
"""

import contextlib
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from desc2story import autodiff as ad
from desc2story.cli import run as cli_run
from desc2story.corpus import (
    BOS_ID,
    EOS_ID,
    Batch,
    build_vocab,
    encode_example,
    tokenize,
    write_examples,
)
from desc2story.decoding import LENGTH_NORM_POWER, beam_search, generate_ids, greedy_search
from desc2story.metrics import bleu_corpus, meteor, rouge_l, ter
from desc2story.model import (
    Hyperparams,
    Seq2SeqModel,
    load_checkpoint,
    save_checkpoint,
)
from desc2story.ngram import corpus_perplexity, train_lm, train_lm_stream
from desc2story.training import TrainConfig, moving_average, train

from conftest import synthetic_examples


@contextlib.contextmanager
def criterion(n, summary):
    try:
        yield
    except BaseException:
        print(f"criterion {n} FAIL  {summary}")
        raise
    print(f"criterion {n} PASS  {summary}")


# --- criterion 1 -----------------------------------------------------------

def test_criterion_1_gradient_fidelity():
    with criterion(1, "analytic gradients match finite differences on the tiny model"):
        start = time.monotonic()
        hp = Hyperparams(vocab_size=11, embed_dim=3, hidden_dim=4, dropout=0.0)
        model = Seq2SeqModel(hp, seed=5, dtype=np.float64)
        rng = np.random.default_rng(0)
        source = rng.integers(6, 11, size=(1, 5))
        target = np.array([[BOS_ID, 7, 9, EOS_ID]])
        batch = Batch(
            source=source,
            source_mask=np.ones((1, 5)),
            target=target,
            target_mask=np.ones((1, 4)),
        )

        def loss_value():
            return model.forward_loss(batch, train=False)[0].data.item()

        loss, _ = model.forward_loss(batch, train=False)
        params = model.params()
        ad.zero_grads(params)
        ad.backward(loss)
        worst = 0.0
        for p in params:
            analytic = p.gradient().copy()
            numeric = ad.finite_diff(loss_value, p.data, h=1e-5)
            scale = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), 1e-8)
            worst = max(worst, float(np.max(np.abs(numeric - analytic) / scale)))
        elapsed = time.monotonic() - start
        assert worst < 1e-4, f"max relative error {worst:.3e}"
        assert elapsed < 30.0, f"took {elapsed:.1f}s"


# --- criteria 2 and 3 ------------------------------------------------------

@pytest.fixture(scope="module")
def overfit_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("overfit")
    examples = synthetic_examples(20)
    vocab = build_vocab(examples, min_count=1)
    hp = Hyperparams(vocab_size=len(vocab), embed_dim=64, hidden_dim=64, dropout=0.0)
    config = TrainConfig(
        hyperparams=hp,
        max_iterations=2000,
        batch_size=32,
        eval_every=100,
        lr=0.002,
        seed=1,
        checkpoint_path=root / "best.ckpt",
        log_path=root / "train.csv",
    )
    start = time.monotonic()
    result = train(config, vocab, examples, val_examples=examples)
    elapsed = time.monotonic() - start
    return result, config, vocab, examples, elapsed


def test_criterion_2_overfit_oracle(overfit_run):
    with criterion(2, "20 synthetic pairs memorized within 2000 iterations"):
        result, config, vocab, examples, elapsed = overfit_run
        final_loss = result.records[-1].loss
        exact = 0
        for ex in examples:
            ids = generate_ids(result.model, encode_example(ex, vocab).source_ids, mode="greedy")
            exact += vocab.decode_ids(ids) == tokenize(ex.story)
        assert len(result.records) <= 2000
        assert final_loss <= 0.05, f"final loss {final_loss:.4f}"
        assert exact >= 18, f"only {exact}/20 reproduced"
        assert elapsed < 300.0, f"took {elapsed:.1f}s"


def test_criterion_3_training_curve_shape(overfit_run):
    with criterion(3, "loss halves over the log and best-checkpoint BLEU never drops"):
        result, config, vocab, examples, _ = overfit_run
        lines = Path(config.log_path).read_text().splitlines()
        assert lines[0] == "iteration,loss,val_bleu4"
        losses, evals = [], []
        for line in lines[1:]:
            _, loss, bleu = line.split(",")
            losses.append(float(loss))
            if bleu:
                evals.append(float(bleu))
        ma = moving_average(losses, 100)
        assert ma.size >= 2
        assert ma[-1] <= 0.5 * ma[0], f"moving average went {ma[0]:.4f} -> {ma[-1]:.4f}"
        best_sequence = []
        for bleu in evals:
            if not best_sequence or bleu >= best_sequence[-1]:
                best_sequence.append(bleu)
        assert best_sequence == sorted(best_sequence)
        assert len(best_sequence) >= 1


# --- criterion 4 -----------------------------------------------------------

def test_criterion_4_metric_oracles():
    with criterion(4, "hand-computed metric values reproduced"):
        start = time.monotonic()
        ident = [tokenize("a b c d e f")]
        assert bleu_corpus(ident, ident) == 100.0
        assert ter(ident[0], ident[0]) == 0.0
        assert rouge_l(ident[0], ident[0]) == 1.0

        hand = bleu_corpus([tokenize("a b c d e f")], [tokenize("a b c d x f")])
        assert abs(hand - 53.73) <= 0.01

        assert rouge_l(tokenize("a b c d"), tokenize("a c b d")) == 0.750

        assert ter(tokenize("a b c"), tokenize("a b c d")) == 25.0
        assert ter(tokenize("d a b c"), tokenize("a b c d")) == 25.0

        assert abs(meteor(tokenize("a b c"), tokenize("a b c")) - 0.98148) <= 1e-5
        assert meteor(tokenize("a b"), tokenize("b a")) == 0.5

        elapsed = time.monotonic() - start
        assert elapsed < 1.0, f"took {elapsed:.2f}s"


# --- criterion 5 -----------------------------------------------------------

def _toy_step(rows, n_ids):
    """Step function over a prefix-keyed table of probability rows."""

    def step(prev_ids, states):
        logps, news = [], []
        for prev, st in zip(prev_ids, states):
            prefix = st if int(prev) == BOS_ID else st + (int(prev),)
            dist = np.zeros(n_ids)
            for i, p in rows[prefix].items():
                dist[i] = p
            with np.errstate(divide="ignore"):
                logps.append(np.log(dist))
            news.append(prefix)
        return np.array(logps), news

    return step


def test_criterion_5_beam_greedy_equivalence():
    with criterion(5, "beam width 1 equals greedy; width 2 solves the depth-2 toy exactly"):
        for i in range(100):
            rng = np.random.default_rng(i)
            hp = Hyperparams(
                vocab_size=int(rng.integers(8, 15)),
                embed_dim=int(rng.integers(2, 5)),
                hidden_dim=int(rng.integers(2, 5)),
                dropout=0.0,
                max_decode_len=int(rng.integers(5, 13)),
            )
            model = Seq2SeqModel(hp, seed=i)
            source = list(rng.integers(0, hp.vocab_size, size=int(rng.integers(1, 7))))
            greedy_ids = generate_ids(model, source, mode="greedy")
            beam_ids = generate_ids(model, source, mode="beam", beam_width=1)
            assert beam_ids == greedy_ids, f"model {i} disagrees"

        # depth-2 toy: two content steps over ids {1, 6, 7}, then forced stop
        rows = {
            (): {6: 0.5, 7: 0.3, 1: 0.2},
            (6,): {7: 0.8, 6: 0.1, 1: 0.1},
            (7,): {6: 0.6, 7: 0.2, 1: 0.2},
            (1,): {6: 0.9, 7: 0.05, 1: 0.05},
        }
        for first in (1, 6, 7):
            for second in (1, 6, 7):
                rows[(first, second)] = {EOS_ID: 1.0}
        step = _toy_step(rows, 8)
        best = beam_search(step, (), BOS_ID, width=2, max_len=10)[0]

        candidates = []
        for first in (1, 6, 7):
            for second in (1, 6, 7):
                logp = math.log(rows[()][first]) + math.log(rows[(first,)][second])
                ids = [first, second, EOS_ID]
                candidates.append((logp / len(ids) ** LENGTH_NORM_POWER, ids, logp))
        exhaustive_score, exhaustive_ids, exhaustive_logp = max(candidates)
        assert best.ids == exhaustive_ids
        assert abs(best.logprob - exhaustive_logp) < 1e-12


# --- criterion 6 -----------------------------------------------------------

def test_criterion_6_kneser_ney():
    with criterion(6, "KN normalization, hand probability, and shuffle gap hold"):
        rng = np.random.default_rng(0)
        words = [f"w{i}" for i in range(25)]
        corpus = [
            [words[j] for j in rng.integers(0, 25, size=rng.integers(1, 12))]
            for _ in range(60)
        ]
        model = train_lm(corpus, order=5)
        for _ in range(1000):
            k = int(rng.integers(0, 5))
            ctx = [
                words[int(rng.integers(0, 25))] if rng.random() > 0.1 else f"oov{int(rng.integers(9))}"
                for _ in range(k)
            ]
            total = sum(model.prob(ctx, w) for w in model.vocab)
            assert abs(total - 1.0) <= 1e-6, (ctx, total)

        toy = train_lm_stream(["a", "b", "a", "b"], order=2, discount=0.75)
        assert abs(toy.prob(["a"], "b") - 0.8125) < 1e-12

        for seed in range(5):
            srng = np.random.default_rng(100 + seed)
            sentences = [
                [words[j] for j in srng.integers(0, 12, size=srng.integers(2, 10))]
                for _ in range(50)
            ]
            m = train_lm(sentences, order=3)
            flat = [w for s in sentences for w in s]
            srng.shuffle(flat)
            shuffled, pos = [], 0
            for s in sentences:
                shuffled.append(flat[pos : pos + len(s)])
                pos += len(s)
            assert corpus_perplexity(m, sentences) <= corpus_perplexity(m, shuffled), seed


# --- criterion 7 -----------------------------------------------------------

def test_criterion_7_determinism(tmp_path):
    with criterion(7, "same-seed runs produce identical checkpoints; save/load is bitwise"):
        examples = synthetic_examples(6)
        corpus = tmp_path / "corpus.jsonl"
        write_examples(examples, corpus)
        vocab_path = tmp_path / "vocab.tsv"
        assert cli_run(["build-vocab", "--corpus", str(corpus), "--output", str(vocab_path),
                        "--min-count", "1"]) == 0
        ckpts = []
        for name in ("a", "b"):
            ckpt = tmp_path / f"{name}.ckpt"
            code = cli_run([
                "train", "--corpus", str(corpus), "--val", str(corpus),
                "--vocab", str(vocab_path),
                "--checkpoint", str(ckpt), "--log", str(tmp_path / f"{name}.csv"),
                "--embed-dim", "8", "--hidden-dim", "8", "--dropout", "0.1",
                "--iterations", "8", "--batch-size", "3", "--eval-every", "4",
                "--seed", "3", "--deterministic",
            ])
            assert code == 0
            ckpts.append(ckpt)
        first, second = (p.read_bytes() for p in ckpts)
        assert first == second

        model, optimizer = load_checkpoint(ckpts[0], with_optimizer=True)
        resaved = tmp_path / "resaved.ckpt"
        save_checkpoint(resaved, model, optimizer)
        assert resaved.read_bytes() == first


# --- criterion 8 -----------------------------------------------------------

def _dataset_path():
    env = os.environ.get("VIST_TRAIN_JSONL")
    if env:
        return Path(env)
    here = Path(__file__).resolve().parent.parent
    for candidate in (here / "data" / "vist_train.jsonl", here / "vist_train.jsonl"):
        if candidate.exists():
            return candidate
    return None


def test_criterion_8_corpus_statistics():
    path = _dataset_path()
    if path is None or not path.exists():
        pytest.skip("full training split not available (set VIST_TRAIN_JSONL)")
    with criterion(8, "published corpus statistics reproduced on the train split"):
        from desc2story.corpus import compute_stats, load_examples, load_stopwords

        examples = load_examples(path)
        stats = compute_stats(examples, load_stopwords())
        assert stats.doc_count == 32987
        assert abs(stats.avg_words_caption - 52.0) <= 1.0
        assert abs(stats.avg_words_story - 56.0) <= 1.0
        assert abs(stats.avg_nonoverlap_words - 23.0) <= 2.0
        assert abs(stats.unseen_nonstop_fraction - 0.41) <= 0.03
