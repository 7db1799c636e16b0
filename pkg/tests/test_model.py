"""Span classifier: encoding, head, gradients, selection, training, decoding."""

import math

import numpy as np
import pytest

from helpers import (
    brute_force_top_negatives,
    max_gradient_rel_err,
    random_training_setup,
)
from spanclean.corpus import LabelSet, Sentence, Span, SpanDataset, enumerate_samples
from spanclean.distant import NoiseSpec, SynthConfig, generate_synthetic, inject_noise
from spanclean.errors import ConfigError, DataError, NumericError
from spanclean.model import (
    AdamState,
    Batch,
    ModelConfig,
    TrainConfig,
    Vocab,
    adam_step,
    encode,
    eval_logits,
    forward,
    init_params,
    load_checkpoint,
    loss_and_grads,
    predict_spans,
    resolve_overlaps,
    save_checkpoint,
    select_top_negatives,
    span_repr,
    train_epoch,
    train_model,
)


def tiny_config(**kwargs) -> ModelConfig:
    defaults = dict(
        vocab_size=8,
        embed_dim=3,
        encoder_variant="lookup",
        hidden_dim=4,
        num_layers=2,
        width_embed_dim=2,
        max_width=2,
        num_classes=3,
        dropout_rate=0.0,
    )
    defaults.update(kwargs)
    return ModelConfig(**defaults)


def zeroed(params):
    for arr in params.as_dict().values():
        arr[...] = 0.0
    return params


class TestConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            tiny_config(hidden_dim=0)
        with pytest.raises(ConfigError):
            tiny_config(dropout_rate=1.0)
        with pytest.raises(ConfigError):
            tiny_config(num_classes=1)
        with pytest.raises(ConfigError):
            tiny_config(encoder_variant="transformer")

    def test_span_repr_dim(self):
        assert tiny_config().span_repr_dim == 8


class TestVocab:
    def test_reserved_slots(self):
        v = Vocab.build([Sentence(("b", "a"))])
        assert v.tokens[:2] == ("<pad>", "<unk>")
        assert v.tokens[2:] == ("a", "b")

    def test_oov_maps_to_unk(self):
        v = Vocab.build([Sentence(("a",))])
        assert v.encode("zzz") == 1
        assert list(v.encode_tokens(["a", "zzz"])) == [2, 1]


class TestEncode:
    def test_lookup_is_embedding_row(self):
        cfg = tiny_config()
        vocab = Vocab.build([Sentence(("a",))])
        params = init_params(cfg, seed=0)
        h = encode(Sentence(("a",)), params, cfg, vocab)
        np.testing.assert_array_equal(h[0], params.embedding[vocab.encode("a")])

    def test_window_radius_zero_mean_is_self(self):
        cfg = tiny_config(encoder_variant="window", window_radius=0)
        vocab = Vocab.build([Sentence(("a", "b"))])
        params = init_params(cfg, seed=1)
        ids = vocab.encode_tokens(["a", "b"])
        emb = params.embedding[ids]
        expected = np.maximum(
            np.concatenate([emb, emb], axis=1) @ params.mixer_w.T + params.mixer_b, 0.0
        )
        h = encode(["a", "b"], params, cfg, vocab)
        np.testing.assert_allclose(h, expected, rtol=0, atol=0)

    def test_window_wider_than_sentence_averages_everything(self):
        cfg = tiny_config(encoder_variant="window", window_radius=5)
        vocab = Vocab.build([Sentence(("a", "b", "c"))])
        params = init_params(cfg, seed=2)
        ids = vocab.encode_tokens(["a", "b", "c"])
        emb = params.embedding[ids]
        mean_all = emb.mean(axis=0)
        expected = np.maximum(
            np.concatenate([emb, np.tile(mean_all, (3, 1))], axis=1) @ params.mixer_w.T
            + params.mixer_b,
            0.0,
        )
        h = encode(["a", "b", "c"], params, cfg, vocab)
        np.testing.assert_allclose(h, expected, rtol=1e-15, atol=1e-15)


class TestSpanRepr:
    def setup_method(self):
        self.cfg = tiny_config()
        self.vocab = Vocab.build([Sentence(("a", "b", "c", "d"))])
        self.params = init_params(self.cfg, seed=3)
        self.h = encode(["a", "b", "c", "d"], self.params, self.cfg, self.vocab)

    def test_single_token_span(self):
        x = span_repr(self.h, 1, 1, self.params, self.cfg)
        np.testing.assert_array_equal(x[:3], self.h[1])
        np.testing.assert_array_equal(x[3:6], self.h[1])
        np.testing.assert_array_equal(x[6:], self.params.width_table[0])

    def test_length(self):
        for (s, e) in [(0, 0), (0, 2), (1, 3)]:
            assert span_repr(self.h, s, e, self.params, self.cfg).shape == (8,)

    def test_same_endpoints_differ_only_in_width_block(self):
        # spans (0,0) vs a hypothetical width row swap: compare (1,1) and (1,1)
        # with different width rows via (1,2) sharing the start only
        x00 = span_repr(self.h, 0, 0, self.params, self.cfg)
        x00_again = np.concatenate([self.h[0], self.h[0], self.params.width_table[0]])
        np.testing.assert_array_equal(x00, x00_again)

    def test_width_cap_enforced(self):
        with pytest.raises(ValueError, match="width"):
            span_repr(self.h, 0, 3, self.params, self.cfg)


class TestForward:
    def test_zero_params_give_uniform(self):
        cfg = tiny_config()
        params = zeroed(init_params(cfg, seed=0))
        z, p = forward(np.zeros(cfg.span_repr_dim), params, cfg)
        np.testing.assert_array_equal(z, np.zeros(3))
        np.testing.assert_allclose(p, np.full(3, 1 / 3), atol=1e-15)

    def test_bias_becomes_logits(self):
        cfg = tiny_config()
        params = zeroed(init_params(cfg, seed=0))
        params.out_b[...] = [1.0, 2.0, 3.0]
        z, _ = forward(np.ones(cfg.span_repr_dim), params, cfg)
        np.testing.assert_array_equal(z, [1.0, 2.0, 3.0])

    def test_softmax_sums_to_one(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=5)
        rng = np.random.default_rng(0)
        x = rng.normal(size=(50, cfg.span_repr_dim))
        _, p = forward(x, params, cfg)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p > 0) and np.all(p < 1)

    def test_softmax_shift_invariance(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=5)
        x = np.ones(cfg.span_repr_dim)
        _, p1 = forward(x, params, cfg)
        params.out_b += 17.3
        _, p2 = forward(x, params, cfg)
        np.testing.assert_allclose(p1, p2, atol=1e-12)

    def test_eval_mode_ignores_rng(self):
        cfg = tiny_config(dropout_rate=0.5)
        params = init_params(cfg, seed=6)
        x = np.ones(cfg.span_repr_dim)
        _, p1 = forward(x, params, cfg, mode="eval", rng=np.random.default_rng(1))
        _, p2 = forward(x, params, cfg, mode="eval", rng=np.random.default_rng(2))
        np.testing.assert_array_equal(p1, p2)

    def test_train_mode_needs_rng(self):
        cfg = tiny_config(dropout_rate=0.5)
        params = init_params(cfg, seed=6)
        with pytest.raises(ValueError, match="rng"):
            forward(np.ones(cfg.span_repr_dim), params, cfg, mode="train")

    def test_nan_params_raise_numeric_error(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=7)
        params.out_w[0, 0] = np.nan
        with pytest.raises(NumericError, match="logits"):
            forward(np.ones(cfg.span_repr_dim), params, cfg)
        with pytest.raises(NumericError, match="out_w"):
            params.check_finite()


def one_sample_batch(cfg, label=1):
    sent = Sentence(("a",), distant_spans=(Span(0, 0, label),) if label else ())
    sample_label = label
    from spanclean.corpus import SpanSample

    return Batch(
        samples=(SpanSample(0, 0, 0, sample_label),),
        sentences={0: sent},
    )


class TestLoss:
    def test_uniform_logits_give_log_k(self):
        cfg = tiny_config(num_classes=2)
        params = zeroed(init_params(cfg, seed=0))
        vocab = Vocab.build([Sentence(("a",))])
        batch = one_sample_batch(cfg, label=1)
        loss, _, aux = loss_and_grads(batch, params, cfg, vocab, mode="eval")
        assert loss == pytest.approx(math.log(2), abs=1e-15)
        assert aux["n_terms"] == 1

    def test_topneg_term_count(self):
        _, batch, cfg, params, vocab = random_training_setup(seed=11, encoder_variant="lookup")
        n_pos = len(batch.pos_indices)
        n_neg = len(batch.neg_indices)
        assert n_neg > 1
        rng = np.random.default_rng(0)
        _, _, aux = loss_and_grads(
            batch, params, cfg, vocab, rng=rng, neg_fraction=0.25, mode="eval"
        )
        assert aux["n_terms"] == n_pos + max(1, math.ceil(0.25 * n_neg))

    def test_gradient_matches_finite_differences(self):
        # the full sweep (5+ random configs, both encoders) runs in the
        # acceptance suite; one config per encoder here for fast feedback
        for variant, seed in [("lookup", 101), ("window", 202)]:
            _, batch, cfg, params, vocab = random_training_setup(seed=seed, encoder_variant=variant)
            err = max_gradient_rel_err(batch, params, cfg, vocab, with_dropout=False)
            assert err <= 1e-4, f"{variant}: rel err {err:.2e}"

    def test_gradient_with_dropout_masks_fixed(self):
        _, batch, cfg, params, vocab = random_training_setup(
            seed=303, encoder_variant="window", dropout=0.4
        )
        err = max_gradient_rel_err(batch, params, cfg, vocab, with_dropout=True, seed=9)
        assert err <= 1e-4, f"rel err {err:.2e}"


class TestSelectTopNegatives:
    def test_highest_similarity_selected(self):
        # one positive along e0; negatives at cos 0.9-ish, 0.1-ish, negative
        vecs = np.array(
            [
                [1.0, 0.0],  # positive
                [0.9, 0.44],  # high similarity
                [0.1, 0.99],  # low
                [-0.5, 0.1],  # negative similarity
            ]
        )
        chosen = select_top_negatives(
            vecs, np.array([0]), np.array([1, 2, 3]), 0.05, np.random.default_rng(0)
        )
        assert list(chosen) == [1]

    def test_identical_unit_vectors_score_one(self):
        v = np.array([[1.0, 0.0], [1.0, 0.0]])
        chosen = select_top_negatives(v, np.array([0]), np.array([1]), 1.0, np.random.default_rng(0))
        assert list(chosen) == [1]

    def test_zero_norm_contributes_zero(self):
        vecs = np.array([[1.0, 0.0], [0.0, 0.0], [0.5, 0.0]])
        chosen = select_top_negatives(
            vecs, np.array([0]), np.array([1, 2]), 0.5, np.random.default_rng(0)
        )
        # zero vector scores 0, the aligned one scores 1
        assert list(chosen) == [2]

    def test_ceil_count(self):
        rng = np.random.default_rng(1)
        vecs = rng.normal(size=(41, 4))
        chosen = select_top_negatives(vecs, np.array([0]), np.arange(1, 41), 0.05, rng)
        assert len(chosen) == 2  # ceil(0.05 * 40)

    def test_minimum_one(self):
        rng = np.random.default_rng(1)
        vecs = rng.normal(size=(4, 3))
        chosen = select_top_negatives(vecs, np.array([0]), np.arange(1, 4), 0.01, rng)
        assert len(chosen) == 1

    def test_no_negatives(self):
        chosen = select_top_negatives(
            np.ones((2, 3)), np.array([0, 1]), np.array([], dtype=np.intp), 0.5, np.random.default_rng(0)
        )
        assert len(chosen) == 0

    def test_no_positives_falls_back_to_uniform(self):
        rng = np.random.default_rng(3)
        vecs = rng.normal(size=(10, 4))
        neg = np.arange(10)
        chosen = select_top_negatives(vecs, np.array([], dtype=np.intp), neg, 0.3, rng)
        assert len(chosen) == 3
        assert len(set(chosen)) == 3
        assert set(chosen) <= set(range(10))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            n_neg = int(rng.integers(1, 30))
            n_pos = int(rng.integers(1, 6))
            vecs = rng.normal(size=(n_pos + n_neg, 5))
            if rng.random() < 0.3:
                vecs[int(rng.integers(0, n_pos + n_neg))] = 0.0
            pos = np.arange(n_pos)
            neg = np.arange(n_pos, n_pos + n_neg)
            frac = float(rng.choice([0.05, 0.1, 0.33, 0.8]))
            got = set(
                int(i) for i in select_top_negatives(vecs, pos, neg, frac, np.random.default_rng(0))
            )
            assert got == brute_force_top_negatives(vecs, pos, neg, frac)


def small_corpus(seed=0, n=24):
    data, _ = generate_synthetic(SynthConfig(num_sentences=n, seed=seed))
    noisy, _ = inject_noise(data, NoiseSpec(seed=seed + 1), max_width=4)
    return enumerate_samples(noisy, max_width=4)


def corpus_model_config(dataset, vocab, **kwargs):
    defaults = dict(
        vocab_size=len(vocab),
        embed_dim=8,
        encoder_variant="lookup",
        hidden_dim=12,
        num_layers=2,
        width_embed_dim=4,
        max_width=4,
        num_classes=dataset.label_set.num_types + 1,
        dropout_rate=0.2,
    )
    defaults.update(kwargs)
    return ModelConfig(**defaults)


class TestTraining:
    def test_zero_lr_keeps_params(self):
        ds = small_corpus()
        vocab = Vocab.build(ds.sentences)
        cfg = corpus_model_config(ds, vocab)
        params, _, _ = train_model(ds, cfg, TrainConfig(epochs=2, lr=0.0), seed=4, vocab=vocab)
        fresh = init_params(cfg, seed=4)
        for name, arr in params.as_dict().items():
            np.testing.assert_array_equal(arr, fresh.as_dict()[name])

    def test_same_seed_bit_identical(self):
        ds = small_corpus()
        vocab = Vocab.build(ds.sentences)
        cfg = corpus_model_config(ds, vocab)
        tc = TrainConfig(epochs=3, lr=1e-3, neg_fraction=0.2)
        p1, _, l1 = train_model(ds, cfg, tc, seed=9, vocab=vocab)
        p2, _, l2 = train_model(ds, cfg, tc, seed=9, vocab=vocab)
        assert l1 == l2
        for name, arr in p1.as_dict().items():
            np.testing.assert_array_equal(arr, p2.as_dict()[name])

    def test_different_seed_differs(self):
        ds = small_corpus()
        vocab = Vocab.build(ds.sentences)
        cfg = corpus_model_config(ds, vocab)
        tc = TrainConfig(epochs=1)
        p1, _, _ = train_model(ds, cfg, tc, seed=1, vocab=vocab)
        p2, _, _ = train_model(ds, cfg, tc, seed=2, vocab=vocab)
        assert any(
            not np.array_equal(arr, p2.as_dict()[name]) for name, arr in p1.as_dict().items()
        )

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_repeated_batch_loss_non_increasing(self, seed):
        # one fixed batch, 20 optimizer steps at lr 1e-3: the eval-mode
        # loss measured after each step must never go up
        ds = small_corpus(seed=seed, n=16)
        vocab = Vocab.build(ds.sentences)
        cfg = corpus_model_config(ds, vocab)
        batch = Batch(samples=ds.samples, sentences=dict(enumerate(ds.sentences)))
        params = init_params(cfg, seed=seed)
        state = AdamState.for_params(params)
        rng = np.random.default_rng([seed, 1])
        losses = []
        for _ in range(20):
            _, grads, _ = loss_and_grads(batch, params, cfg, vocab, rng=rng, mode="train")
            adam_step(params, grads, state, lr=1e-3)
            eval_loss, _, _ = loss_and_grads(batch, params, cfg, vocab, mode="eval")
            losses.append(eval_loss)
        assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:])), losses

    def test_epoch_requires_enumeration(self):
        data, _ = generate_synthetic(SynthConfig(num_sentences=4, seed=0))
        vocab = Vocab.build(data.sentences)
        cfg = corpus_model_config(data, vocab)
        params = init_params(cfg, seed=0)
        with pytest.raises(ValueError, match="enumerate"):
            train_epoch(
                data, params, AdamState.for_params(params), cfg, TrainConfig(), vocab,
                np.random.default_rng(0),
            )

    def test_vocab_size_mismatch(self):
        ds = small_corpus()
        vocab = Vocab.build(ds.sentences)
        cfg = corpus_model_config(ds, vocab, vocab_size=len(vocab) + 5)
        with pytest.raises(ConfigError, match="vocab"):
            train_model(ds, cfg, TrainConfig(epochs=1), seed=0, vocab=vocab)


class TestEvalLogits:
    def test_matches_per_span_forward(self):
        ds = small_corpus(n=6)
        vocab = Vocab.build(ds.sentences)
        cfg = corpus_model_config(ds, vocab)
        params, _, _ = train_model(ds, cfg, TrainConfig(epochs=1), seed=3, vocab=vocab)
        logits = eval_logits(ds, params, cfg, vocab, chunk_sentences=2)
        for i, sample in enumerate(ds.samples):
            h = encode(ds.sentences[sample.sentence_id], params, cfg, vocab)
            x = span_repr(h, sample.start, sample.end, params, cfg)
            z, _ = forward(x, params, cfg)
            np.testing.assert_allclose(logits[i], z, atol=1e-12)


class TestResolveOverlaps:
    def test_higher_probability_wins(self):
        spans = resolve_overlaps([(0.9, 0, 2, 1), (0.8, 1, 3, 2)])
        assert spans == (Span(0, 2, 1),)

    def test_non_overlapping_all_kept(self):
        spans = resolve_overlaps([(0.9, 0, 1, 1), (0.8, 2, 3, 2)])
        assert spans == (Span(0, 1, 1), Span(2, 3, 2))

    def test_tie_prefers_earlier_start_then_shorter(self):
        assert resolve_overlaps([(0.5, 2, 3, 1), (0.5, 1, 2, 1)]) == (Span(1, 2, 1),)
        assert resolve_overlaps([(0.5, 1, 3, 1), (0.5, 1, 2, 1)]) == (Span(1, 2, 1),)

    def test_empty(self):
        assert resolve_overlaps([]) == ()


class TestPredict:
    def test_zero_params_predict_nothing(self):
        cfg = tiny_config()
        vocab = Vocab.build([Sentence(("a", "b"))])
        params = zeroed(init_params(cfg, seed=0))
        assert predict_spans(Sentence(("a", "b")), params, cfg, vocab) == ()

    def test_trained_model_finds_planted_entities(self):
        data, _ = generate_synthetic(SynthConfig(num_sentences=300, seed=5))
        # train directly on gold labels: an easy fit for the window
        # encoder, which can see entity-run boundaries (the plain lookup
        # cannot tell a sub-span of an entity from the entity itself)
        from dataclasses import replace as d_replace

        gold_as_distant = SpanDataset(
            data.label_set,
            tuple(d_replace(s, distant_spans=s.gold_spans) for s in data.sentences),
        )
        ds = enumerate_samples(gold_as_distant, max_width=3)
        vocab = Vocab.build(ds.sentences)
        cfg = corpus_model_config(
            ds, vocab, max_width=3, embed_dim=32, hidden_dim=48,
            encoder_variant="window", window_radius=2,
        )
        params, _, _ = train_model(ds, cfg, TrainConfig(epochs=20, lr=1e-2), seed=0, vocab=vocab)
        correct = total = 0
        for sent in ds.sentences[:50]:
            pred = predict_spans(sent, params, cfg, vocab)
            gold = set(sent.gold_spans)
            correct += len(gold & set(pred))
            total += len(gold)
        assert total > 0
        assert correct / total > 0.7


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        ds = small_corpus(n=5)
        vocab = Vocab.build(ds.sentences)
        cfg = corpus_model_config(ds, vocab, encoder_variant="window")
        params, _, _ = train_model(ds, cfg, TrainConfig(epochs=1), seed=8, vocab=vocab)
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, params, cfg, vocab, seed=8, epoch=1)
        loaded, cfg2, vocab2, meta = load_checkpoint(path)
        assert cfg2 == cfg
        assert vocab2.tokens == vocab.tokens
        assert meta == {"seed": 8, "epoch": 1}
        for name, arr in params.as_dict().items():
            np.testing.assert_array_equal(arr, loaded.as_dict()[name])

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"\x00\x01\x02 not a checkpoint")
        with pytest.raises(DataError):
            load_checkpoint(str(path))

    def test_rejects_truncation(self, tmp_path):
        ds = small_corpus(n=4)
        vocab = Vocab.build(ds.sentences)
        cfg = corpus_model_config(ds, vocab)
        params = init_params(cfg, seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(str(path), params, cfg, vocab, seed=0, epoch=0)
        blob = path.read_bytes()
        path.write_bytes(blob[:-16])
        with pytest.raises(DataError, match="truncated"):
            load_checkpoint(str(path))

    def test_rejects_trailing_bytes(self, tmp_path):
        ds = small_corpus(n=4)
        vocab = Vocab.build(ds.sentences)
        cfg = corpus_model_config(ds, vocab)
        params = init_params(cfg, seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(str(path), params, cfg, vocab, seed=0, epoch=0)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(DataError, match="trailing"):
            load_checkpoint(str(path))
