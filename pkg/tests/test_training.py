import math

import numpy as np
import pytest

from milsent import autodiff as ad
from milsent import data, models, training
from milsent.errors import TrainingError, ValidationError


def small_config(kind="milnet", vocab_size=0, **overrides):
    base = dict(
        kind=kind,
        num_classes=5,
        vocab_size=vocab_size,
        embedding_dim=8,
        windows=(2, 3),
        feature_maps=4,
        gru_hidden=4,
        attention_dim=5,
        dropout=0.0,
        recurrent_dropout=0.0,
        seed=0,
    )
    base.update(overrides)
    return models.ModelConfig(**base)


def encoded_synthetic(num_docs, seed=0, **kwargs):
    docs = data.generate_synthetic(num_docs, seed=seed, **kwargs)
    vocab = data.build_vocab(docs, min_count=1)
    data.encode_corpus(docs, vocab)
    return docs, vocab


class TestAdadeltaStep:
    def test_zero_gradient_leaves_parameters_and_decays_accumulators(self):
        t = ad.parameter(np.array([1.0, -2.0]), name="w")
        state = training.AdadeltaState([("w", t)], rho=0.9, epsilon=1e-6)
        state.sq_grad["w"][:] = 4.0
        state.sq_update["w"][:] = 2.0
        t.grad = np.zeros(2)
        training.adadelta_step([("w", t)], state)
        assert np.array_equal(t.data, [1.0, -2.0])
        assert np.allclose(state.sq_grad["w"], 0.9 * 4.0)
        assert np.allclose(state.sq_update["w"], 0.9 * 2.0)

    def test_first_step_matches_hand_evaluated_formula(self):
        t = ad.parameter(np.array([0.0]), name="w")
        state = training.AdadeltaState([("w", t)], rho=0.95, epsilon=1e-6)
        t.grad = np.array([1.0])
        training.adadelta_step([("w", t)], state)
        expected = -math.sqrt(1e-6) / math.sqrt(0.05 + 1e-6)
        assert t.data[0] == pytest.approx(expected, rel=1e-12)

    def test_identical_parameters_receive_identical_updates(self):
        a = ad.parameter(np.array([0.3, -0.7]), name="a")
        b = ad.parameter(np.array([0.3, -0.7]), name="b")
        state = training.AdadeltaState([("a", a), ("b", b)])
        for _ in range(5):
            a.grad = np.array([0.5, -1.5])
            b.grad = np.array([0.5, -1.5])
            training.adadelta_step([("a", a), ("b", b)], state)
        assert np.array_equal(a.data, b.data)

    def test_update_always_opposes_gradient(self):
        rng = np.random.default_rng(0)
        for rho in (0.0, 0.5, 0.95):
            t = ad.parameter(rng.normal(size=6), name="w")
            state = training.AdadeltaState([("w", t)], rho=rho, epsilon=1e-3)
            for _ in range(10):
                before = t.data.copy()
                grad = rng.normal(size=6)
                t.grad = grad
                training.adadelta_step([("w", t)], state)
                delta = t.data - before
                moved = grad != 0.0
                assert np.all(np.sign(delta[moved]) == -np.sign(grad[moved]))

    def test_weight_decay_applies_only_to_named_tensors(self):
        a = ad.parameter(np.array([2.0]), name="a")
        b = ad.parameter(np.array([2.0]), name="b")
        state = training.AdadeltaState([("a", a), ("b", b)])
        a.grad = np.zeros(1)
        b.grad = np.zeros(1)
        training.adadelta_step([("a", a), ("b", b)], state, weight_decay=0.1, decay_names={"a"})
        assert a.data[0] < 2.0  # decayed toward zero
        assert b.data[0] == 2.0

    def test_non_finite_gradient_aborts_with_parameter_name(self):
        t = ad.parameter(np.array([1.0]), name="classifier.w")
        state = training.AdadeltaState([("classifier.w", t)])
        t.grad = np.array([np.inf])
        with pytest.raises(TrainingError, match="classifier.w"):
            training.adadelta_step([("classifier.w", t)], state)


class TestTrainConfig:
    def test_zero_epochs_rejected(self):
        with pytest.raises(ValidationError):
            training.TrainConfig(epochs=0)

    def test_zero_batch_rejected(self):
        with pytest.raises(ValidationError):
            training.TrainConfig(batch_size=0)


class TestTrain:
    def test_loss_decreases_on_small_corpus(self):
        docs, vocab = encoded_synthetic(50, seed=3)
        config = small_config(vocab_size=len(vocab))
        tc = training.TrainConfig(epochs=3, batch_size=16, val_fraction=0.0, seed=1)
        result = training.train(config, tc, docs)
        losses = [h["train_loss"] for h in result.history]
        assert losses[-1] < losses[0]
        non_decreasing = sum(b >= a for a, b in zip(losses, losses[1:]))
        assert non_decreasing <= 1

    def test_empty_corpus_rejected(self):
        config = small_config(vocab_size=4)
        with pytest.raises(ValidationError):
            training.train(config, training.TrainConfig(), [])

    def test_same_seed_reproduces_parameters_and_history(self):
        docs, vocab = encoded_synthetic(30, seed=5)
        config = small_config(vocab_size=len(vocab), dropout=0.2, recurrent_dropout=0.1)
        tc = training.TrainConfig(epochs=2, batch_size=10, seed=7)
        a = training.train(config, tc, docs)
        b = training.train(config, tc, docs)
        assert a.history == b.history
        for (name_a, ta), (_, tb) in zip(a.params.named_tensors(), b.params.named_tensors()):
            assert np.array_equal(ta.data, tb.data), name_a

    def test_validation_selects_best_epoch(self):
        docs, vocab = encoded_synthetic(40, seed=11)
        config = small_config(vocab_size=len(vocab))
        tc = training.TrainConfig(epochs=2, batch_size=20, val_fraction=0.2, seed=0)
        result = training.train(config, tc, docs)
        accuracies = [h["val_accuracy"] for h in result.history]
        assert result.best_epoch == int(np.argmax(accuracies)) + 1

    def test_metrics_file_is_jsonl(self, tmp_path):
        import json

        docs, vocab = encoded_synthetic(20, seed=2)
        config = small_config(vocab_size=len(vocab))
        tc = training.TrainConfig(epochs=2, batch_size=10, seed=0)
        path = tmp_path / "metrics.jsonl"
        training.train(config, tc, docs, metrics_path=path)
        rows = [json.loads(line) for line in path.read_text().splitlines()]
        assert [r["epoch"] for r in rows] == [1, 2]
        assert all("train_loss" in r and "val_accuracy" in r for r in rows)

    def test_frozen_embeddings_do_not_move(self):
        docs, vocab = encoded_synthetic(20, seed=8)
        config = small_config(vocab_size=len(vocab), train_embeddings=False)
        tc = training.TrainConfig(epochs=1, batch_size=10, val_fraction=0.0, seed=0)
        result = training.train(config, tc, docs)
        fresh = models.init_params(config, rng=np.random.default_rng(config.seed))
        assert np.array_equal(result.params.embeddings.data, fresh.embeddings.data)

    def test_padding_row_stays_zero(self):
        docs, vocab = encoded_synthetic(20, seed=9)
        config = small_config(vocab_size=len(vocab))
        tc = training.TrainConfig(epochs=2, batch_size=10, val_fraction=0.0, seed=0)
        result = training.train(config, tc, docs)
        assert np.array_equal(result.params.embeddings.data[vocab.pad_id], np.zeros(8))

    def test_segcnn_trains_on_segment_labels(self):
        docs, vocab = encoded_synthetic(15, seed=4)
        config = small_config("segcnn", num_classes=3, vocab_size=len(vocab))
        tc = training.TrainConfig(epochs=2, batch_size=32, val_fraction=0.1, seed=0)
        result = training.train(config, tc, docs)
        assert len(result.history) == 2
        assert result.history[-1]["val_accuracy"] >= 0.0


def separable_docs(vocab_size_hint=None):
    texts = [
        ("good_0 good_1 good_2", 3),
        ("good_3 good_4 good_0", 3),
        ("bad_0 bad_1 bad_2", 1),
        ("bad_3 bad_4 bad_0", 1),
    ]
    docs = [
        data.Document(id=f"d{i}", label=label, segments=[data.make_segment(t)])
        for i, (t, label) in enumerate(texts)
    ]
    vocab = data.build_vocab(docs, min_count=1)
    data.encode_corpus(docs, vocab)
    return docs, vocab


class TestOverfitSanity:
    def test_separable_docs_reach_perfect_accuracy(self):
        docs, vocab = separable_docs()
        config = small_config(num_classes=3, vocab_size=len(vocab), attention_mode="average")
        report = training.overfit_sanity(config, docs, max_steps=200)
        assert report.success
        assert report.steps <= 200
        assert report.accuracy == 1.0

    def test_single_document_trivially_fit(self):
        docs, vocab = separable_docs()
        config = small_config(num_classes=3, vocab_size=len(vocab), attention_mode="average")
        report = training.overfit_sanity(config, docs[:1], max_steps=200)
        assert report.success

    def test_contradictory_labels_cap_accuracy(self):
        base, _ = separable_docs()
        twin = data.Document(id="twin", label=1, segments=base[0].segments)
        docs = [base[0], twin]  # identical text, labels 3 and 1
        vocab = data.build_vocab(docs, min_count=1)
        data.encode_corpus(docs, vocab)
        config = small_config(num_classes=3, vocab_size=len(vocab), attention_mode="average")
        report = training.overfit_sanity(config, docs, max_steps=30)
        assert not report.success
        assert report.accuracy <= 0.5

    def test_rejects_large_corpora(self):
        docs, vocab = encoded_synthetic(9, seed=0)
        config = small_config(vocab_size=len(vocab))
        with pytest.raises(ValidationError):
            training.overfit_sanity(config, docs)
