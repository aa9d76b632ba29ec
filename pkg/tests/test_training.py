import numpy as np
import pytest

import synthgrammar
from conftest import mention
from nestner.autodiff import Gradients, Parameters
from nestner.core import NestnerError, Sentence, Token
from nestner.corpus import UNK, TaggedCorpus, build_vocabulary, merge
from nestner.embeddings import EmbeddingConfig
from nestner.training import (
    LazyAdam,
    OptimizerConfig,
    OptimizerError,
    RegularizationConfig,
    TrainConfig,
    build_model,
    evaluate_model,
    train,
    word_dropout,
)

TINY = EmbeddingConfig(trainable_dim=8, char_dim=0, char_rnn_dim=0)
NO_REG = RegularizationConfig(0.0, 0.0)


def small_corpus():
    return synthgrammar.generate(8, seed=11)


class TestConfigs:
    @pytest.mark.parametrize("kwargs", [{"learning_rate": 0.0}, {"beta1": 1.0}, {"beta2": -0.1}])
    def test_optimizer_validation(self, kwargs):
        with pytest.raises(ValueError):
            OptimizerConfig(**kwargs)

    def test_optimizer_defaults_match_training_regimen(self):
        cfg = OptimizerConfig()
        assert (cfg.beta1, cfg.beta2, cfg.lazy) == (0.9, 0.98, True)

    @pytest.mark.parametrize("kwargs", [{"dropout_rate": 1.0}, {"word_dropout_rate": -0.2}])
    def test_regularization_validation(self, kwargs):
        with pytest.raises(ValueError):
            RegularizationConfig(**kwargs)

    def test_regularization_defaults(self):
        cfg = RegularizationConfig()
        assert (cfg.dropout_rate, cfg.word_dropout_rate) == (0.5, 0.2)

    def test_train_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=1, batch_size=0)
        assert TrainConfig(epochs=1).batch_size == 8


class TestLazyAdam:
    def _grads(self, **dense):
        grads = Gradients()
        for name, value in dense.items():
            grads.dense[name] = np.asarray(value, dtype=np.float64)
        return grads

    def test_first_step_closed_form(self):
        # g=1 at step 1: m_hat = 1, v_hat = 1, update = -lr / (1 + eps)
        params = Parameters()
        params.add("w", np.array([2.0]))
        adam = LazyAdam(params, OptimizerConfig(learning_rate=0.1))
        adam.step(self._grads(w=[1.0]))
        assert params["w"][0] == pytest.approx(2.0 - 0.1, abs=1e-8)

    def test_zero_gradient_first_step_keeps_parameter(self):
        params = Parameters()
        params.add("w", np.array([1.5]))
        adam = LazyAdam(params)
        adam.step(self._grads(w=[0.0]))
        assert params["w"][0] == 1.5

    def test_untouched_rows_bit_identical_after_100_steps(self):
        params = Parameters()
        rng = np.random.default_rng(0)
        params.add("table", rng.standard_normal((4, 3)))
        frozen_row = params["table"][2].tobytes()
        adam = LazyAdam(params)
        for step in range(100):
            grads = Gradients()
            grads.rows["table"] = {0: np.ones(3), 3: np.full(3, -0.5)}
            adam.step(grads)
        assert params["table"][2].tobytes() == frozen_row
        assert adam.m["table"][2].tobytes() == np.zeros(3).tobytes()
        assert params["table"][0].tobytes() != np.zeros(3).tobytes()

    def test_non_finite_gradient_rejected_naming_parameter(self):
        params = Parameters()
        params.add("bad", np.array([1.0]))
        snapshot = params["bad"].copy()
        adam = LazyAdam(params)
        with pytest.raises(OptimizerError) as err:
            adam.step(self._grads(bad=[np.nan]))
        assert "bad" in str(err.value)
        np.testing.assert_array_equal(params["bad"], snapshot)
        assert adam.step_count == 0

    def test_non_lazy_decays_all_moments(self):
        params = Parameters()
        params.add("a", np.array([1.0]))
        params.add("b", np.array([1.0]))
        adam = LazyAdam(params, OptimizerConfig(lazy=False))
        adam.step(self._grads(a=[1.0]))
        adam.step(self._grads(a=[1.0], b=[1.0]))
        # b's first update used a decayed-but-zero moment, so b moved once
        assert params["b"][0] != 1.0

    def test_lazy_rows_update_in_sorted_order_deterministically(self):
        def run():
            params = Parameters()
            params.add("t", np.ones((3, 2)))
            adam = LazyAdam(params)
            grads = Gradients()
            grads.rows["t"] = {2: np.ones(2), 0: np.ones(2)}
            adam.step(grads)
            return params["t"].tobytes()

        assert run() == run()


class TestWordDropout:
    def test_rate_zero_is_identity(self):
        forms = ["a", "b", "c"]
        assert word_dropout(forms, 0.0, np.random.default_rng(0)) == forms

    def test_rate_one_replaces_everything(self):
        out = word_dropout(["a", "b"], 0.999999999, np.random.default_rng(0))
        assert out == [UNK, UNK]

    def test_rate_concentrates_around_mean(self):
        rng = np.random.default_rng(123)
        forms = ["w"] * 10_000
        replaced = word_dropout(forms, 0.2, rng).count(UNK)
        assert 0.18 <= replaced / 10_000 <= 0.22


class TestBuildModel:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            build_model("tagger", small_corpus())

    def test_nesting_depth_rejected_at_build(self):
        deep = Sentence(
            (Token("a"), Token("b")),
            frozenset({mention("X", 0, 2), mention("Y", 0, 2), mention("Z", 0, 2)}),
        )
        corpus = TaggedCorpus((deep,))
        with pytest.raises(NestnerError) as err:
            build_model("seq2seq", corpus, embedding=TINY, max_components_per_token=2)
        assert "depth" in str(err.value)

    def test_pos_dim_resolved_from_vocabulary(self):
        corpus = TaggedCorpus((Sentence((Token("a", pos="N"), Token("b", pos="V"))),))
        model = build_model(
            "crf",
            corpus,
            embedding=EmbeddingConfig(
                trainable_dim=4, char_dim=0, char_rnn_dim=0, use_pos_onehot=True
            ),
            hidden_dim=4,
        )
        assert model.config.embedding.pos_dim == 2


class TestTrainLoop:
    def test_empty_corpus_rejected(self):
        model = build_model("crf", small_corpus(), embedding=TINY, hidden_dim=8)
        with pytest.raises(NestnerError):
            train(model, TaggedCorpus(()), TrainConfig(epochs=1))

    def test_same_seed_identical_runs(self):
        corpus = small_corpus()

        def run():
            model = build_model("crf", corpus, embedding=TINY, hidden_dim=8, seed=5)
            metrics = train(model, corpus, TrainConfig(epochs=3, seed=9))
            preds = [sorted((m.entity_type, m.start, m.end) for m in model.predict(s)) for s in corpus]
            return metrics, preds

        first, second = run(), run()
        assert first == second

    def test_loss_below_initial_after_ten_epochs_both_kinds(self):
        corpus = small_corpus()
        for kind in ("crf", "seq2seq"):
            model = build_model(
                kind, corpus, embedding=TINY, hidden_dim=8, decoder_dim=8,
                label_embed_dim=4, seed=1,
            )
            metrics = train(model, corpus, TrainConfig(epochs=10, seed=1), regularization=NO_REG)
            assert metrics[-1]["train_loss"] < metrics[0]["train_loss"], kind

    def test_rows_absent_from_all_batches_stay_put(self):
        corpus = small_corpus()
        vocab_corpus = merge(corpus, TaggedCorpus((Sentence((Token("zzz"),)),)))
        vocab = build_vocabulary(vocab_corpus)
        model = build_model("crf", corpus, embedding=TINY, hidden_dim=8, vocab=vocab)
        row = vocab.form_id("zzz")
        assert row > 1
        before = model.params["embed.form"][row].tobytes()
        train(model, corpus, TrainConfig(epochs=2, seed=3), regularization=NO_REG)
        assert model.params["embed.form"][row].tobytes() == before

    def test_eval_passes_are_identical(self):
        corpus = small_corpus()
        model = build_model("crf", corpus, embedding=TINY, hidden_dim=8)
        train(model, corpus, TrainConfig(epochs=2, seed=4))
        assert evaluate_model(model, corpus) == evaluate_model(model, corpus)

    def test_dev_tracking_and_include_dev(self, tmp_path):
        corpus = small_corpus()
        dev = synthgrammar.generate(4, seed=99)
        model = build_model("crf", corpus, embedding=TINY, hidden_dim=8)
        metrics = train(
            model, corpus, TrainConfig(epochs=2, seed=5), dev=dev,
            checkpoint_path=tmp_path / "ckpt.json",
        )
        assert all("dev_f1" in record for record in metrics)
        assert (tmp_path / "ckpt.json").exists()

        merged_model = build_model("crf", corpus, embedding=TINY, hidden_dim=8)
        merged = train(
            merged_model, corpus,
            TrainConfig(epochs=1, seed=5, include_dev_in_train=True), dev=dev,
        )
        assert all("dev_f1" not in record for record in merged)

    def test_best_dev_parameters_restored(self):
        corpus = small_corpus()
        dev = synthgrammar.generate(4, seed=98)
        model = build_model("crf", corpus, embedding=TINY, hidden_dim=8)
        metrics = train(model, corpus, TrainConfig(epochs=4, seed=6), dev=dev)
        best = max(record["dev_f1"] for record in metrics)
        assert evaluate_model(model, dev) == pytest.approx(best)

    def test_word_dropout_trains_unk_row(self):
        corpus = small_corpus()
        model = build_model("crf", corpus, embedding=TINY, hidden_dim=8)
        before = model.params["embed.form"][1].copy()
        train(
            model, corpus, TrainConfig(epochs=2, seed=7),
            regularization=RegularizationConfig(0.0, 0.5),
        )
        assert not np.array_equal(model.params["embed.form"][1], before)
