"""Training tests: loss, Adam, batching, the loop, checkpoints."""

import math
import os

import numpy as np
import pytest

import sarcattn.tensor as T
from sarcattn.checkpoint import (CheckpointError, load_checkpoint,
                                 save_checkpoint, FORMAT_VERSION, MAGIC)
from sarcattn.model import ModelConfig, forward, init_params
from sarcattn.synthetic import generate_synthetic
from sarcattn.tensor import Tensor, backward
from sarcattn.text import Example, TokenSequence, build_vocab, prepare, tokenize
from sarcattn.training import (AdamState, Batch, DivergenceError,
                               NonFiniteGradient, adam_step, bce_loss,
                               init_adam, make_batches, predict_scores, train)


def tiny_config(**kw):
    base = dict(num_layers=1, num_heads=2, embed_dim=8, gru_hidden=8,
                dropout_rate=0.0, max_len=32, vocab_size=12, seed=1)
    base.update(kw)
    return ModelConfig(**base).validate()


def seqs_from_texts(texts, labels, vocab=None):
    token_lists = [tokenize(t) for t in texts]
    vocab = vocab or build_vocab(token_lists, 1)
    examples = [Example(t, l) for t, l in zip(texts, labels)]
    return prepare(examples, vocab, 32), vocab


class TestBCE:
    def test_half_score_positive_label(self):
        loss = bce_loss(Tensor(np.array([0.5])), np.array([1.0]))
        np.testing.assert_allclose(float(loss.data), math.log(2.0), rtol=1e-12)

    def test_exact_prediction_clamped_tiny(self):
        loss = bce_loss(Tensor(np.array([1.0, 0.0])), np.array([1.0, 0.0]))
        assert 0.0 < float(loss.data) <= 1e-6 * abs(math.log(1e-7))

    def test_batch_hand_value(self):
        loss = bce_loss(Tensor(np.array([0.9, 0.2])), np.array([1.0, 0.0]))
        expected = (-math.log(0.9) - math.log(0.8)) / 2.0
        np.testing.assert_allclose(float(loss.data), expected, rtol=1e-12)

    def test_label_validation(self):
        with pytest.raises(ValueError):
            bce_loss(Tensor(np.array([0.5])), np.array([2.0]))

    def test_gradient(self):
        x = Tensor(np.array([0.3, 0.8, 0.5]))
        labels = np.array([0.0, 1.0, 1.0])
        err = T.grad_check(lambda t: bce_loss(T.sigmoid(t), labels), x, 1e-5)
        assert err < 1e-6


class TestAdam:
    def _single(self, value, grad, lr=0.1):
        p = Tensor(np.array([value]))
        p.grad = np.array([grad])
        state = init_adam([("p", p)], lr=lr)
        adam_step([("p", p)], state)
        return p, state

    def test_first_step_closed_form(self):
        # bias corrections cancel at t=1: delta = -lr * g / (|g| + eps)
        for g in (0.5, -3.0, 1e-4):
            p, state = self._single(1.0, g, lr=0.1)
            expected = 1.0 - 0.1 * g / (abs(g) + state.eps)
            np.testing.assert_allclose(p.data, [expected], rtol=1e-12)
            assert abs(p.data[0] - (1.0 - 0.1 * math.copysign(1.0, g))) < 1e-3

    def test_zero_gradient_no_change(self):
        p, _ = self._single(2.5, 0.0)
        np.testing.assert_array_equal(p.data, [2.5])

    def test_two_steps_shrinking_updates(self):
        p = Tensor(np.array([1.0]))
        state = init_adam([("p", p)], lr=0.1)
        deltas = []
        for _ in range(2):
            before = p.data.copy()
            p.grad = np.array([0.7])
            adam_step([("p", p)], state)
            deltas.append(abs(p.data[0] - before[0]))
        assert deltas[1] <= deltas[0] + 1e-12

    def test_non_finite_gradient_aborts_naming_parameter(self):
        p = Tensor(np.array([1.0]))
        q = Tensor(np.array([2.0]))
        p.grad = np.array([0.1])
        q.grad = np.array([np.nan])
        state = init_adam([("p", p), ("deep.q", q)], lr=0.1)
        with pytest.raises(NonFiniteGradient, match="deep.q"):
            adam_step([("p", p), ("deep.q", q)], state)
        np.testing.assert_array_equal(p.data, [1.0])  # aborted before update

    def test_grads_zeroed_after_step(self):
        p = Tensor(np.array([1.0]))
        p.grad = np.array([0.5])
        state = init_adam([("p", p)], lr=0.1)
        adam_step([("p", p)], state)
        assert p.grad is None
        assert state.t == 1

    def test_missing_grad_treated_as_zero(self):
        p = Tensor(np.array([4.0]))
        state = init_adam([("p", p)], lr=0.1)
        adam_step([("p", p)], state)
        np.testing.assert_array_equal(p.data, [4.0])


class TestBatches:
    def _samples(self, lengths):
        return [(TokenSequence(ids=list(range(2, 2 + n)),
                               words=["w"] * n), i % 2)
                for i, n in enumerate(lengths)]

    def test_padding_and_mask(self):
        [batch] = make_batches(self._samples([3, 5]), 2, seed=0, shuffle=False)
        assert batch.ids.shape == (2, 5)
        np.testing.assert_array_equal(batch.mask,
                                      [[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]])
        np.testing.assert_array_equal(batch.ids[0, 3:], [0, 0])  # PAD fill

    def test_shuffle_deterministic(self):
        samples = self._samples(range(1, 11))
        a = make_batches(samples, 4, seed=9, shuffle=True)
        b = make_batches(samples, 4, seed=9, shuffle=True)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.ids, y.ids)
        c = make_batches(samples, 4, seed=10, shuffle=True)
        assert any(not np.array_equal(x.ids, y.ids) for x, y in zip(a, c))

    def test_final_short_batch_kept(self):
        batches = make_batches(self._samples([2] * 10), 4, seed=0, shuffle=False)
        assert [b.size for b in batches] == [4, 4, 2]

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            make_batches([], 4, seed=0, shuffle=False)


class TestTrainLoop:
    def test_loss_decreases_on_one_sample(self):
        samples, vocab = seqs_from_texts(["alpha beta gamma delta"], [1])
        cfg = tiny_config(vocab_size=vocab.size)
        params = init_params(cfg)
        state = init_adam(params.trainable_tensors(), lr=1e-2)
        [batch] = make_batches(samples, 1, seed=0, shuffle=False)
        losses = []
        from sarcattn.model import forward_batch
        for _ in range(3):
            scores, _ = forward_batch(batch.ids, batch.mask, batch.lengths,
                                      params, cfg)
            loss = bce_loss(scores, batch.labels)
            losses.append(float(loss.data))
            backward(loss)
            adam_step(params.trainable_tensors(), state)
        assert losses[1] < losses[0] and losses[2] < losses[1]

    def test_seed_determinism(self):
        rows = generate_synthetic(40, 12, seed=5)
        examples = [Example(r["text"], r["label"]) for r in rows]
        token_lists = [tokenize(e.text) for e in examples]
        vocab = build_vocab(token_lists, 1)
        samples = prepare(examples, vocab, 32)
        cfg = tiny_config(vocab_size=vocab.size, dropout_rate=0.2, seed=7)
        r1 = train(cfg, samples[:30], samples[30:], epochs=2, lr=1e-3,
                   batch_size=8)
        r2 = train(cfg, samples[:30], samples[30:], epochs=2, lr=1e-3,
                   batch_size=8)
        assert r1.history == r2.history
        for (_, a), (_, b) in zip(r1.params.named_tensors(),
                                  r2.params.named_tensors()):
            np.testing.assert_array_equal(a.data, b.data)

    def test_frozen_batch_loss_nonincreasing(self):
        # 20 consecutive steps on one frozen synthetic batch at lr 1e-4
        rows = generate_synthetic(64, 20, seed=2)
        examples = [Example(r["text"], r["label"]) for r in rows]
        token_lists = [tokenize(e.text) for e in examples]
        vocab = build_vocab(token_lists, 1)
        samples = prepare(examples, vocab, 32)
        cfg = tiny_config(vocab_size=vocab.size, embed_dim=16, gru_hidden=16,
                          num_layers=2, seed=3)
        params = init_params(cfg)
        state = init_adam(params.trainable_tensors(), lr=1e-4)
        [batch] = make_batches(samples, 64, seed=0, shuffle=False)
        from sarcattn.model import forward_batch
        losses = []
        for _ in range(21):
            scores, _ = forward_batch(batch.ids, batch.mask, batch.lengths,
                                      params, cfg)
            loss = bce_loss(scores, batch.labels)
            losses.append(float(loss.data))
            backward(loss)
            adam_step(params.trainable_tensors(), state)
        increases = sum(1 for a, b in zip(losses, losses[1:]) if b > a)
        assert increases <= 2

    def test_divergence_aborts(self, tmp_path):
        samples, vocab = seqs_from_texts(["a b c", "d e f"], [1, 0])
        cfg = tiny_config(vocab_size=vocab.size)
        # poisoned embeddings make the first forward produce a NaN loss
        # (clamped BCE itself cannot overflow, so inject upstream)
        from sarcattn.text import EmbeddingTable
        bad = EmbeddingTable(matrix=Tensor(np.full((vocab.size, 8), np.inf)),
                             trainable=True)
        with np.errstate(invalid="ignore"), pytest.raises(DivergenceError):
            train(cfg, samples, samples, epochs=2, lr=1e-4, batch_size=2,
                  embedding_table=bad)

    def test_metrics_jsonl_written(self, tmp_path):
        samples, vocab = seqs_from_texts(
            ["a b", "c d", "e f", "g h"], [1, 0, 1, 0])
        cfg = tiny_config(vocab_size=vocab.size)
        path = tmp_path / "metrics.jsonl"
        train(cfg, samples, samples, epochs=3, lr=1e-3, batch_size=2,
              metrics_path=path)
        import json
        lines = [json.loads(l) for l in path.read_text().splitlines()]
        assert len(lines) == 3
        assert all(l["epoch"] == i for i, l in enumerate(lines))
        assert {"train_loss", "f1", "precision", "recall",
                "accuracy"} <= set(lines[0])


class TestCheckpoint:
    def _setup(self, tmp_path):
        samples, vocab = seqs_from_texts(
            ["ripe mango falls", "dry leaf drifts sideways slowly"], [1, 0])
        cfg = tiny_config(vocab_size=vocab.size)
        params = init_params(cfg)
        path = tmp_path / "model.ckpt"
        return cfg, vocab, params, samples, path

    def test_round_trip_bit_identical_predictions(self, tmp_path):
        cfg, vocab, params, samples, path = self._setup(tmp_path)
        state = init_adam(params.trainable_tensors(), lr=1e-4)
        state.t = 3
        save_checkpoint(path, cfg, vocab, params, adam_state=state,
                        metadata={"epoch": 2})
        ckpt = load_checkpoint(path)
        assert ckpt.config == cfg
        assert ckpt.vocab.itos == vocab.itos
        assert ckpt.adam.t == 3
        assert ckpt.metadata == {"epoch": 2}
        for (seq, _) in samples:
            before, _ = forward(seq, params, cfg)
            after, _ = forward(seq, ckpt.params, ckpt.config)
            assert float(before.data) == float(after.data)

    def test_save_is_byte_stable(self, tmp_path):
        cfg, vocab, params, _, path = self._setup(tmp_path)
        save_checkpoint(path, cfg, vocab, params)
        first = path.read_bytes()
        save_checkpoint(path, cfg, vocab, params)
        assert path.read_bytes() == first

    def test_truncated_file(self, tmp_path):
        cfg, vocab, params, _, path = self._setup(tmp_path)
        save_checkpoint(path, cfg, vocab, params)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) - 64])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\0" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_version_bump_rejected(self, tmp_path):
        cfg, vocab, params, _, path = self._setup(tmp_path)
        save_checkpoint(path, cfg, vocab, params)
        blob = bytearray(path.read_bytes())
        needle = f'"format_version": {FORMAT_VERSION}'.encode()
        replacement = f'"format_version": {FORMAT_VERSION + 1}'.encode()
        idx = blob.find(needle)
        assert idx > 0
        blob[idx:idx + len(needle)] = replacement
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_corrupt_shape_table(self, tmp_path):
        cfg, vocab, params, _, path = self._setup(tmp_path)
        save_checkpoint(path, cfg, vocab, params)
        blob = path.read_bytes()
        # trailing garbage must be refused too
        path.write_bytes(blob + b"extra")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_train_keeps_best_checkpoint(self, tmp_path):
        samples, vocab = seqs_from_texts(
            ["a b c", "b c d", "c d e", "d e f"], [1, 0, 1, 0])
        cfg = tiny_config(vocab_size=vocab.size)
        path = tmp_path / "best.ckpt"
        result = train(cfg, samples, samples, epochs=2, lr=1e-3, batch_size=2,
                       vocab=vocab, checkpoint_path=path)
        ckpt = load_checkpoint(path)
        assert ckpt.metadata["epoch"] == result.best_epoch
        scores, labels = predict_scores(result.params, cfg, samples)
        ck_scores, _ = predict_scores(ckpt.params, ckpt.config, samples)
        np.testing.assert_array_equal(scores, ck_scores)
