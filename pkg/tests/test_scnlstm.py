"""Tests for the attribute-conditioned caption decoder."""

import itertools

import numpy as np
import pytest

from attrcap.nncore import (
    DimensionError,
    ParameterError,
    Rng,
    gradient_check,
    sigmoid,
    softmax,
)
from attrcap.scnlstm import (
    BOS_ID,
    EOS_ID,
    UNK_ID,
    CaptionSequence,
    CaptionTrainConfig,
    CaptionVocab,
    ScnLstm,
    ScnLstmConfig,
    beam_search,
    ensemble_beam_search,
    load_captioner,
    load_captioner_ensemble,
    save_captioner,
    save_captioner_ensemble,
    train_captioner,
)

TINY = ScnLstmConfig(
    vocab_size=5, n_words=2, feature_dim=3, embed_dim=3,
    hidden_dim=4, factor_dim=4, dropout=0.0,
)


def tiny_model(seed=0, scale=None, config=TINY):
    model = ScnLstm(config, seed=seed)
    if scale is not None:
        model.params = {k: v * scale for k, v in model.params.items()}
    return model


def zero_model(config=TINY):
    model = ScnLstm(config, seed=0)
    model.params = {k: np.zeros_like(v) for k, v in model.params.items()}
    return model


def tiny_inputs(seed=100):
    rng = Rng(seed)
    return rng.normal((TINY.feature_dim,)), np.abs(rng.normal((TINY.n_words,)))


# ---------------------------------------------------------------------------
# Token vocabulary
# ---------------------------------------------------------------------------


def test_vocab_orders_words_by_count_then_alphabet():
    lists = [["dog", "cat", "a"], ["a", "dog", "cat"], ["a", "zebra"],
             ["a", "apple", "zebra"], ["a", "dog"]]
    vocab = CaptionVocab.from_token_lists(lists, min_count=2)
    assert vocab.words == ["<bos>", "<eos>", "<unk>", "a", "dog", "cat", "zebra"]
    assert len(vocab) == 7
    assert vocab.index["a"] == 3


def test_vocab_default_min_count_drops_rare_words():
    lists = [["a", "b"]] * 4 + [["a"]]
    vocab = CaptionVocab.from_token_lists(lists)
    assert vocab.words == ["<bos>", "<eos>", "<unk>", "a"]


def test_vocab_encode_wraps_sequence_and_maps_unknowns():
    vocab = CaptionVocab(words=["<bos>", "<eos>", "<unk>", "a", "dog"])
    assert vocab.encode(["a", "dog", "xyzzy"]) == [BOS_ID, 3, 4, UNK_ID, EOS_ID]
    assert vocab.encode([]) == [BOS_ID, EOS_ID]


def test_vocab_decode_stops_at_eos_and_keeps_unknown_marker():
    vocab = CaptionVocab(words=["<bos>", "<eos>", "<unk>", "a", "dog"])
    assert vocab.decode([BOS_ID, 4, UNK_ID, 3, EOS_ID, 4]) == ["dog", "<unk>", "a"]
    assert vocab.decode([BOS_ID, EOS_ID]) == []


def test_vocab_encode_decode_roundtrip_for_known_words():
    vocab = CaptionVocab.from_token_lists([["red", "cat"], ["red", "dog"]],
                                          min_count=1)
    tokens = ["red", "cat", "dog"]
    assert vocab.decode(vocab.encode(tokens)) == tokens


# ---------------------------------------------------------------------------
# Decoded sequences
# ---------------------------------------------------------------------------


def test_sequence_requires_bos_start_and_eos_end():
    seq = CaptionSequence(tokens=(BOS_ID, 3, 4, EOS_ID), log_prob=-1.0)
    assert seq.length == 3
    with pytest.raises(DimensionError):
        CaptionSequence(tokens=(3, 4, EOS_ID), log_prob=-1.0)
    with pytest.raises(DimensionError):
        CaptionSequence(tokens=(BOS_ID, 3, 4), log_prob=-1.0)
    with pytest.raises(DimensionError):
        CaptionSequence(tokens=(), log_prob=0.0)


def test_sequence_rejects_interior_specials():
    with pytest.raises(DimensionError):
        CaptionSequence(tokens=(BOS_ID, EOS_ID, 3, EOS_ID), log_prob=-1.0)
    with pytest.raises(DimensionError):
        CaptionSequence(tokens=(BOS_ID, 3, BOS_ID, EOS_ID), log_prob=-1.0)


# ---------------------------------------------------------------------------
# Parameter initialization
# ---------------------------------------------------------------------------


def test_init_is_seed_reproducible():
    a = ScnLstm(TINY, seed=3)
    b = ScnLstm(TINY, seed=3)
    c = ScnLstm(TINY, seed=4)
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])
    assert any(not np.array_equal(a.params[n], c.params[n]) for n in a.params)


def test_init_shapes_and_zero_biases():
    cfg = ScnLstmConfig(vocab_size=7, n_words=3, feature_dim=6, embed_dim=4,
                        hidden_dim=5, factor_dim=2, dropout=0.0)
    model = ScnLstm(cfg, seed=0)
    p = model.params
    for gate in "ifoc":
        assert p[f"W{gate}a"].shape == (5, 2)
        assert p[f"W{gate}b"].shape == (2, 3)
        assert p[f"W{gate}c"].shape == (2, 4)
        assert p[f"U{gate}a"].shape == (5, 2)
        assert p[f"U{gate}b"].shape == (2, 3)
        assert p[f"U{gate}c"].shape == (2, 5)
        assert np.array_equal(p[f"b{gate}"], np.zeros(5))
    assert p["Cv"].shape == (5, 6)
    assert p["embed"].shape == (7, 4)
    assert p["Wout"].shape == (7, 5)
    assert np.array_equal(p["bout"], np.zeros(7))


def test_pretrained_embeddings_are_installed_and_validated():
    table = Rng(9).normal((TINY.vocab_size, TINY.embed_dim))
    model = ScnLstm(TINY, seed=0, embeddings=table)
    assert np.array_equal(model.params["embed"], table)
    with pytest.raises(DimensionError):
        ScnLstm(TINY, seed=0, embeddings=table[:, :-1])


# ---------------------------------------------------------------------------
# Single-step cell
# ---------------------------------------------------------------------------


def test_cell_with_zero_parameters_halves_the_cell_state():
    model = zero_model()
    rng = Rng(5)
    x = rng.normal((2, TINY.embed_dim))
    h_prev = rng.normal((2, TINY.hidden_dim))
    c_prev = rng.normal((2, TINY.hidden_dim))
    d = rng.normal((2, TINY.n_words))
    h, c, _ = model.cell_forward(x, h_prev, c_prev, d)
    assert np.allclose(c, 0.5 * c_prev, atol=1e-15)
    assert np.allclose(h, 0.5 * np.tanh(0.5 * c_prev), atol=1e-15)


def test_zero_attribute_vector_blocks_input_and_recurrence():
    model = tiny_model(seed=2)
    for gate in "ifoc":
        model.params[f"b{gate}"] = np.zeros(TINY.hidden_dim)
    rng = Rng(6)
    c_prev = rng.normal((1, TINY.hidden_dim))
    d = np.zeros((1, TINY.n_words))
    outs = []
    for _ in range(2):
        x = rng.normal((1, TINY.embed_dim))
        h_prev = rng.normal((1, TINY.hidden_dim))
        outs.append(model.cell_forward(x, h_prev, c_prev, d)[:2])
    assert np.array_equal(outs[0][0], outs[1][0])
    assert np.array_equal(outs[0][1], outs[1][1])
    assert np.allclose(outs[0][1], 0.5 * c_prev, atol=1e-15)


def test_image_term_shifts_every_gate_preactivation():
    model = zero_model()
    z = Rng(7).normal((1, TINY.hidden_dim))
    zeros = np.zeros((1, TINY.hidden_dim))
    h, c, _ = model.cell_forward(
        np.zeros((1, TINY.embed_dim)), zeros, zeros,
        np.zeros((1, TINY.n_words)), z=z,
    )
    sig = sigmoid(z)
    expected_c = sig * np.tanh(z)
    assert np.allclose(c, expected_c, atol=1e-15)
    assert np.allclose(h, sig * np.tanh(expected_c), atol=1e-15)


def test_cell_backward_matches_finite_differences():
    model = tiny_model(seed=11)
    rng = Rng(12)
    x = rng.normal((2, TINY.embed_dim))
    h_prev = rng.normal((2, TINY.hidden_dim))
    c_prev = rng.normal((2, TINY.hidden_dim))
    d = rng.normal((2, TINY.n_words))
    z = rng.normal((2, TINY.hidden_dim))
    r_h = rng.normal((2, TINY.hidden_dim))
    r_c = rng.normal((2, TINY.hidden_dim))

    def param_loss(p):
        h, c, cache = model.cell_forward(x, h_prev, c_prev, d, z=z, params=p)
        grads = {name: np.zeros_like(value) for name, value in p.items()}
        model.cell_backward(r_h, r_c, cache, grads, params=p)
        return float((h * r_h).sum() + (c * r_c).sum()), grads

    assert gradient_check(param_loss, model.params, eps=1e-5) < 1e-4

    def input_loss(inputs):
        h, c, cache = model.cell_forward(
            inputs["x"], inputs["h_prev"], inputs["c_prev"], inputs["d"],
            z=inputs["z"],
        )
        grads = {name: np.zeros_like(value) for name, value in model.params.items()}
        dx, dh_prev, dc_prev, dd, dz = model.cell_backward(r_h, r_c, cache, grads)
        loss = float((h * r_h).sum() + (c * r_c).sum())
        return loss, {"x": dx, "h_prev": dh_prev, "c_prev": dc_prev,
                      "d": dd, "z": dz}

    inputs = {"x": x, "h_prev": h_prev, "c_prev": c_prev, "d": d, "z": z}
    assert gradient_check(input_loss, inputs, eps=1e-5) < 1e-4


def test_sequence_gradients_match_finite_differences():
    model = tiny_model(seed=16)
    rng = Rng(17)
    samples = [
        (rng.normal((TINY.feature_dim,)), np.abs(rng.normal((TINY.n_words,))),
         [BOS_ID, 3, EOS_ID]),
        (rng.normal((TINY.feature_dim,)), np.abs(rng.normal((TINY.n_words,))),
         [BOS_ID, 4, 2, EOS_ID]),
    ]
    err = gradient_check(
        lambda p: model.batch_loss(samples, mode="inference", params=p)[:2],
        model.params, eps=1e-5,
    )
    assert err < 1e-4


# ---------------------------------------------------------------------------
# Sequence scoring
# ---------------------------------------------------------------------------


def test_zero_model_predicts_the_uniform_distribution():
    model = zero_model()
    feature, d = tiny_inputs()
    samples = [(feature, d, [BOS_ID, 3, 4, EOS_ID])]
    assert model.batch_nll(samples) == pytest.approx(np.log(TINY.vocab_size),
                                                     abs=1e-12)
    probs, _, _ = model.step_probs(
        [BOS_ID], np.zeros((1, TINY.hidden_dim)), np.zeros((1, TINY.hidden_dim)),
        np.asarray(d).reshape(1, -1),
    )
    assert np.allclose(probs, 1.0 / TINY.vocab_size, atol=1e-15)


def test_batch_nll_equals_inference_mode_batch_loss():
    model = tiny_model(seed=15)
    rng = Rng(16)
    samples = [
        (rng.normal((TINY.feature_dim,)), np.abs(rng.normal((TINY.n_words,))),
         [BOS_ID, w, 3, EOS_ID])
        for w in (2, 3, 4)
    ]
    loss, grads, n_tokens = model.batch_loss(samples, mode="inference")
    assert model.batch_nll(samples) == loss
    assert n_tokens == 9
    assert set(grads) == set(model.params)


def test_teacher_forcing_matches_stepwise_rollout():
    model = tiny_model(seed=17, scale=2.0)
    feature, d = tiny_inputs(18)
    ids = [BOS_ID, 4, 2, 3, EOS_ID]
    feature_row = np.asarray(feature, dtype=np.float64).reshape(1, -1)
    d_row = np.asarray(d, dtype=np.float64).reshape(1, -1)
    z = feature_row @ model.params["Cv"].T
    h = np.zeros((1, TINY.hidden_dim))
    c = np.zeros_like(h)
    total = 0.0
    for t in range(1, len(ids)):
        probs, h, c = model.step_probs([ids[t - 1]], h, c, d_row,
                                       z=z if t == 1 else None)
        total += float(np.log(probs[0, ids[t]]))
    assert model.sequence_log_likelihood(ids, feature, d) == pytest.approx(
        total, abs=1e-12)


def test_train_mode_dropout_requires_a_rng():
    cfg = ScnLstmConfig(vocab_size=5, n_words=2, feature_dim=3, embed_dim=3,
                        hidden_dim=4, factor_dim=4, dropout=0.5)
    model = ScnLstm(cfg, seed=0)
    feature, d = tiny_inputs()
    with pytest.raises(ParameterError):
        model.batch_loss([(feature, d, [BOS_ID, 3, EOS_ID])], mode="train")


def test_malformed_token_sequences_are_rejected():
    model = tiny_model()
    feature, d = tiny_inputs()
    bad = [
        [BOS_ID],                     # no predicted token
        [3, 4, EOS_ID],               # missing BOS
        [BOS_ID, 3, 4],               # missing EOS
        [BOS_ID, EOS_ID, 3, EOS_ID],  # interior EOS
        [BOS_ID, 3, BOS_ID, EOS_ID],  # interior BOS
        [BOS_ID, TINY.vocab_size, EOS_ID],  # id beyond the vocabulary
        [BOS_ID, -1, EOS_ID],         # negative id
    ]
    for ids in bad:
        with pytest.raises(DimensionError):
            model.sequence_log_likelihood(ids, feature, d)


def test_empty_batches_are_rejected():
    model = tiny_model()
    with pytest.raises(ParameterError):
        model.batch_loss([], mode="inference")
    with pytest.raises(ParameterError):
        model.batch_nll([])


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def train_samples(n=3, seed=20):
    rng = Rng(seed)
    bodies = [[3, 4], [4, 2, 3], [2]]
    return [
        (rng.normal((TINY.feature_dim,)), np.abs(rng.normal((TINY.n_words,))),
         [BOS_ID, *bodies[i % len(bodies)], EOS_ID])
        for i in range(n)
    ]


def test_zero_learning_rate_leaves_parameters_at_initialization():
    samples = train_samples()
    tcfg = CaptionTrainConfig(learning_rate=0.0, batch_size=2, max_epochs=3,
                              clip_norm=5.0, seed=7)
    model, history = train_captioner(samples, TINY, tcfg)
    fresh = ScnLstm(TINY, seed=Rng(7).split(0).seed)
    for name in fresh.params:
        assert np.array_equal(model.params[name], fresh.params[name])
    assert len(history["train_loss"]) == 3


def test_training_is_seed_reproducible_and_reduces_the_loss():
    samples = train_samples()
    tcfg = CaptionTrainConfig(learning_rate=2e-2, batch_size=3, max_epochs=40,
                              clip_norm=5.0, seed=1)
    model_a, hist_a = train_captioner(samples, TINY, tcfg)
    model_b, hist_b = train_captioner(samples, TINY, tcfg)
    for name in model_a.params:
        assert np.array_equal(model_a.params[name], model_b.params[name])
    assert hist_a["train_loss"] == hist_b["train_loss"]
    assert hist_a["train_loss"][-1] < hist_a["train_loss"][0]
    assert hist_a["best_epoch"] == len(hist_a["train_loss"]) - 1
    assert hist_a["val_loss"] == []


def test_early_stopping_restores_the_best_validation_parameters():
    samples = train_samples()
    val = [(Rng(21).normal((TINY.feature_dim,)),
            np.abs(Rng(22).normal((TINY.n_words,))), [BOS_ID, 4, 4, EOS_ID])]
    tcfg = CaptionTrainConfig(learning_rate=1e-1, batch_size=3, max_epochs=60,
                              clip_norm=5.0, patience=3, seed=2)
    model, history = train_captioner(samples, TINY, tcfg, val_samples=val)
    val_losses = history["val_loss"]
    assert val_losses, "validation losses must be recorded"
    best = int(np.argmin(val_losses))
    assert history["best_epoch"] == best
    assert model.batch_nll(val) == val_losses[best]
    assert len(val_losses) < tcfg.max_epochs, "expected an early stop"
    assert len(val_losses) == best + 1 + tcfg.patience


def test_training_rejects_an_empty_sample_list():
    tcfg = CaptionTrainConfig(max_epochs=1)
    with pytest.raises(ParameterError):
        train_captioner([], TINY, tcfg)


# ---------------------------------------------------------------------------
# Beam search
# ---------------------------------------------------------------------------


def greedy_rollout(model, feature, d, max_len):
    """Width-1 decode oracle: argmax with smaller-id tie-breaks, BOS barred."""
    feature_row = np.asarray(feature, dtype=np.float64).reshape(1, -1)
    d_row = np.asarray(d, dtype=np.float64).reshape(1, -1)
    z = feature_row @ model.params["Cv"].T
    h = np.zeros((1, model.config.hidden_dim))
    c = np.zeros_like(h)
    order = np.arange(model.config.vocab_size)
    tokens = [BOS_ID]
    log_prob = 0.0
    for t in range(1, max_len + 1):
        probs, h, c = model.step_probs([tokens[-1]], h, c, d_row,
                                       z=z if t == 1 else None)
        with np.errstate(divide="ignore"):
            logs = np.log(probs[0])
        ranked = np.lexsort((order, -logs))
        pick = int(ranked[0]) if ranked[0] != BOS_ID else int(ranked[1])
        tokens.append(pick)
        log_prob += float(logs[pick])
        if pick == EOS_ID:
            return tuple(tokens), log_prob
    probs, _, _ = model.step_probs([tokens[-1]], h, c, d_row)
    with np.errstate(divide="ignore"):
        log_prob += float(np.log(probs[0, EOS_ID]))
    return tuple(tokens) + (EOS_ID,), log_prob


def test_width_one_beam_matches_a_greedy_rollout():
    for seed in range(10):
        model = tiny_model(seed=seed, scale=3.0 if seed % 2 else None)
        feature, d = tiny_inputs(200 + seed)
        expected_tokens, expected_lp = greedy_rollout(model, feature, d, 4)
        seq = beam_search(model, feature, d, beam_width=1, max_len=4)
        assert seq.tokens == expected_tokens
        assert seq.log_prob == pytest.approx(expected_lp, abs=1e-12)


def test_beam_returns_the_empty_caption_when_eos_dominates():
    model = zero_model()
    bout = np.zeros(TINY.vocab_size)
    bout[EOS_ID] = 25.0
    model.params["bout"] = bout
    feature, d = tiny_inputs()
    expected_lp = float(np.log(softmax(bout.reshape(1, -1))[0, EOS_ID]))
    for width in (1, 2, 4):
        seq = beam_search(model, feature, d, beam_width=width, max_len=6)
        assert seq.tokens == (BOS_ID, EOS_ID)
        assert seq.log_prob == pytest.approx(expected_lp, abs=1e-12)


def exhaustive_best(model, feature, d, max_len):
    """Score every in-budget caption by teacher forcing; break ties like
    the decoder (higher score first, then lexicographically smaller ids)."""
    best_key, best = None, None
    for length in range(0, max_len):
        for body in itertools.product(range(2, model.config.vocab_size),
                                      repeat=length):
            ids = (BOS_ID, *body, EOS_ID)
            lp = model.sequence_log_likelihood(list(ids), feature, d)
            key = (-lp, ids)
            if best_key is None or key < best_key:
                best_key, best = key, (ids, lp)
    return best


def test_full_width_beam_matches_exhaustive_enumeration():
    for seed in range(50):
        vocab = 3 + seed % 3
        max_len = 2 + seed % 3
        cfg = ScnLstmConfig(vocab_size=vocab, n_words=2, feature_dim=3,
                            embed_dim=3, hidden_dim=4, factor_dim=4,
                            dropout=0.0)
        model = ScnLstm(cfg, seed=seed)
        if seed % 2:
            model.params = {k: v * 5.0 for k, v in model.params.items()}
        rng = Rng(1000 + seed)
        feature = rng.normal((3,))
        d = np.abs(rng.normal((2,)))
        expected_tokens, expected_lp = exhaustive_best(model, feature, d,
                                                       max_len)
        seq = beam_search(model, feature, d, beam_width=vocab,
                          max_len=max_len)
        assert seq.tokens == expected_tokens
        assert seq.log_prob == pytest.approx(expected_lp, abs=1e-9)


def test_beam_score_is_non_decreasing_in_width():
    # Models that can stop: a small EOS bias keeps every decode within the
    # length budget, the regime where widening the beam can only help.
    for seed in range(50):
        model = tiny_model(seed=300 + seed)
        model.params["bout"] = model.params["bout"].copy()
        model.params["bout"][EOS_ID] += 1.0
        feature, d = tiny_inputs(400 + seed)
        scores = []
        for width in (1, 2, 3, TINY.vocab_size):
            seq = beam_search(model, feature, d, beam_width=width, max_len=10)
            replay = model.sequence_log_likelihood(list(seq.tokens),
                                                   feature, d)
            assert seq.log_prob == pytest.approx(replay, abs=1e-9)
            assert seq.length <= 10, "decode must finish within the budget"
            scores.append(seq.log_prob)
        assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))


def test_forced_termination_reports_the_true_sequence_score():
    model = tiny_model(seed=23, scale=2.0)
    model.params["bout"] = model.params["bout"].copy()
    model.params["bout"][EOS_ID] -= 30.0
    feature, d = tiny_inputs(24)
    seq = beam_search(model, feature, d, beam_width=2, max_len=3)
    assert seq.tokens[0] == BOS_ID and seq.tokens[-1] == EOS_ID
    assert seq.length == 4  # three in-budget steps plus the forced EOS
    replay = model.sequence_log_likelihood(list(seq.tokens), feature, d)
    assert seq.log_prob == pytest.approx(replay, abs=1e-9)


def test_beam_rejects_bad_arguments():
    model = tiny_model()
    feature, d = tiny_inputs()
    with pytest.raises(ParameterError):
        beam_search(model, feature, d, beam_width=0)
    with pytest.raises(ParameterError):
        beam_search(model, feature, d, max_len=0)
    with pytest.raises(ParameterError):
        ensemble_beam_search([], feature, d)


def test_ensemble_of_identical_members_decodes_like_the_single_model():
    model = tiny_model(seed=25, scale=2.0)
    feature, d = tiny_inputs(26)
    single = beam_search(model, feature, d, beam_width=3, max_len=5)
    for k in (1, 3):
        ens = ensemble_beam_search([model] * k, feature, d, beam_width=3,
                                   max_len=5)
        assert ens.tokens == single.tokens
        assert ens.log_prob == single.log_prob


def test_ensemble_averages_the_member_distributions():
    # Two members that disagree symmetrically: alone, member B picks token
    # 3; the averaged distribution ties tokens 2 and 3 exactly, so the
    # ensemble must fall back to the smaller id, in either member order.
    def biased(logit_index):
        model = zero_model()
        bout = np.full(TINY.vocab_size, 0.0)
        bout[EOS_ID] = -10.0
        bout[logit_index] = 8.0
        model.params["bout"] = bout
        return model

    a, b = biased(2), biased(3)
    feature, d = tiny_inputs(27)
    alone = beam_search(b, feature, d, beam_width=1, max_len=1)
    assert alone.tokens == (BOS_ID, 3, EOS_ID)
    forward = ensemble_beam_search([a, b], feature, d, beam_width=1, max_len=1)
    backward = ensemble_beam_search([b, a], feature, d, beam_width=1, max_len=1)
    assert forward.tokens == backward.tokens == (BOS_ID, 2, EOS_ID)
    assert forward.log_prob == backward.log_prob


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def small_vocab():
    return CaptionVocab(words=["<bos>", "<eos>", "<unk>", "red", "cat"])


def test_captioner_checkpoint_roundtrip(tmp_path):
    model = tiny_model(seed=28)
    vocab = small_vocab()
    path = tmp_path / "captioner.daec"
    save_captioner(path, model, vocab, extra_meta={"note": "test"})
    loaded, loaded_vocab = load_captioner(path)
    assert loaded.config == model.config
    for name in model.params:
        assert np.array_equal(loaded.params[name], model.params[name])
    assert loaded_vocab.words == vocab.words
    feature, d = tiny_inputs(29)
    before = beam_search(model, feature, d, beam_width=3, max_len=4)
    after = beam_search(loaded, feature, d, beam_width=3, max_len=4)
    assert before.tokens == after.tokens
    assert before.log_prob == after.log_prob


def test_captioner_ensemble_checkpoint_roundtrip(tmp_path):
    models = [tiny_model(seed=s) for s in (30, 31)]
    vocab = small_vocab()
    path = tmp_path / "ensemble.daec"
    save_captioner_ensemble(path, models, vocab)
    loaded, loaded_vocab = load_captioner_ensemble(path)
    assert len(loaded) == 2
    assert loaded_vocab.words == vocab.words
    for original, copy in zip(models, loaded):
        for name in original.params:
            assert np.array_equal(copy.params[name], original.params[name])


def test_ensemble_loader_accepts_a_single_model_checkpoint(tmp_path):
    model = tiny_model(seed=32)
    path = tmp_path / "single.daec"
    save_captioner(path, model, small_vocab())
    loaded, _ = load_captioner_ensemble(path)
    assert len(loaded) == 1
    for name in model.params:
        assert np.array_equal(loaded[0].params[name], model.params[name])


def test_loaders_reject_foreign_checkpoints(tmp_path):
    from attrcap.storage import FormatError, save_checkpoint

    foreign = tmp_path / "foreign.daec"
    save_checkpoint(foreign, {"w": np.ones((2, 2))}, {"kind": "other"})
    with pytest.raises(FormatError):
        load_captioner(foreign)
    with pytest.raises(FormatError):
        load_captioner_ensemble(foreign)

    models = [tiny_model(seed=33)]
    bundle = tmp_path / "bundle.daec"
    save_captioner_ensemble(bundle, models, small_vocab())
    with pytest.raises(FormatError):
        load_captioner(bundle)
