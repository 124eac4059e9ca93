import math

import numpy as np
import pytest

from questionator.autograd import Tensor, add, grad_check, scale
from questionator.corpus import RawTriple, Vocabulary, encode_example
from questionator.errors import ContractError
from questionator.lm import lm_forward
from questionator.model import (
    DecoderState,
    EncoderOutput,
    ModelSpec,
    attention,
    decode_step,
    encode,
    forward,
    init_params,
    initial_state,
    mix,
    output_distributions,
    sequence_nll,
    source_embeddings,
)
from questionator.params import ModelParams


def test_encoder_input_width():
    baseline = ModelSpec(vocab_size=20000, n_pos=40, n_ner=10, use_lm=False)
    full = ModelSpec(vocab_size=20000, n_pos=40, n_ner=10)
    assert baseline.encoder_input_width == 428
    assert full.encoder_input_width == 556
    no_features = ModelSpec(vocab_size=20000, n_pos=40, n_ner=10, use_features=False)
    assert no_features.encoder_input_width == 300 + 32 + 128
    detached = ModelSpec(vocab_size=20000, n_pos=40, n_ner=10, lm_detached=True)
    assert detached.encoder_input_width == 428


def test_shapes(spec):
    shapes = spec.shapes()
    assert shapes["qg.embed.word"] == (12, 4)
    assert shapes["qg.embed.answer"] == (3, 2)
    assert shapes["qg.enc.0.fwd.W_x"] == (spec.encoder_input_width, 16)
    assert shapes["qg.enc.1.fwd.W_x"] == (8, 16)
    assert "qg.enc.2.fwd.W_x" not in shapes
    assert shapes["lm.W_f"] == (12, 3)
    assert shapes["qg.out.2.W"] == (4, 12)
    assert shapes["qg.gen.w"] == (3 * 4 + 4,)


def test_shared_tensors_start_identical(make_spec):
    full = init_params(make_spec(lm_detached=True), seed=3)
    baseline = init_params(make_spec(use_lm=False), seed=3)
    assert set(baseline.names()) < set(full.names())
    for name in baseline.names():
        assert baseline[name].values.tobytes() == full[name].values.tobytes()


def test_initial_values(spec):
    params = init_params(spec, seed=4)
    W = params["qg.enc.0.fwd.W_x"].values
    limit = math.sqrt(6.0 / sum(W.shape))
    assert np.abs(W).max() <= limit
    assert np.abs(W).max() > limit / 2

    # forget gates start open, the other gates at zero
    b = params["qg.dec.b"].values
    assert b[4:8].tolist() == [1.0] * 4
    assert not b[:4].any() and not b[8:].any()
    assert not params["qg.attn.b"].values.any()
    assert params["lm.fwd.b"].values[3:6].tolist() == [1.0] * 3


def test_word_table(spec):
    table = np.ones((12, 4))
    params = init_params(spec, seed=1, word_table=table)
    assert params["qg.embed.word"].values.tolist() == table.tolist()
    with pytest.raises(ContractError):
        init_params(spec, seed=1, word_table=np.ones((3, 4)))


def test_encode_single_token(make_spec, vocab):
    spec = make_spec(use_lm=False)
    params = init_params(spec, seed=2)
    t = RawTriple(("city",), ("NN",), ("O",), 0, 1, ("what", "?"))
    enc = encode(encode_example(t, vocab), None, params, spec)
    assert enc.states.shape == (1, 8)
    assert enc.final_h.shape == (8,)


def test_encode_length_mismatch(example, params, spec):
    h_lm = lm_forward(source_embeddings(example, params), params).h_lm
    encode(example, h_lm, params, spec)
    with pytest.raises(ContractError):
        encode(example, Tensor(h_lm.values[:-1]), params, spec)
    with pytest.raises(ContractError):
        encode(example, None, params, spec)


def test_attention_single_position(params):
    row = np.array([0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7, 0.8])
    states = Tensor([row])
    enc = EncoderOutput(states=states, keys=Tensor(states.values @ params["qg.attn.W_h"].values), final_h=None, final_c=None)
    alpha, context = attention(Tensor(np.ones(4)), enc, params)
    assert alpha.values.tolist() == [1.0]
    assert context.values == pytest.approx(row, abs=1e-15)


def test_attention_identical_rows(params):
    row = np.linspace(-1, 1, 8)
    states = Tensor(np.tile(row, (5, 1)))
    enc = EncoderOutput(states=states, keys=Tensor(np.random.default_rng(0).normal(size=(5, 4))), final_h=None, final_c=None)
    alpha, context = attention(Tensor(np.ones(4)), enc, params)
    assert abs(alpha.values.sum() - 1.0) < 1e-12
    assert context.values == pytest.approx(row, abs=1e-12)


def test_decode_step_deterministic(example, params, spec):
    enc = encode(example, lm_forward(source_embeddings(example, params), params).h_lm, params, spec)
    state = initial_state(enc, params)
    assert state.context.values.tolist() == [0.0] * 8
    w = params["qg.embed.word"].values[Vocabulary.BOS]
    a = decode_step(state, Tensor(w), enc, params)
    b = decode_step(state, Tensor(w), enc, params)
    assert a.h.values.tobytes() == b.h.values.tobytes()
    assert a.context.values.tobytes() == b.context.values.tobytes()


def test_decode_step_zero_weights(example, params, spec):
    enc = encode(example, lm_forward(source_embeddings(example, params), params).h_lm, params, spec)
    zeroed = ModelParams.from_arrays(
        {name: (np.zeros(t.shape) if name.startswith("qg.dec.") else t.values) for name, t in params.items()}
    )
    state = DecoderState(h=Tensor(np.ones(4)), cell=Tensor(np.zeros(4)), context=Tensor(np.ones(8)))
    for word in (np.zeros(4), np.full(4, 3.0)):
        new = decode_step(state, Tensor(word), enc, zeroed)
        # i = f = o = 1/2, g = 0: c = 0, h = 0
        assert new.cell.values.tolist() == [0.0] * 4
        assert new.h.values.tolist() == [0.0] * 4


def test_mix_hand_example():
    p = mix(Tensor([0.5, 0.5, 0.0]), Tensor([0.0, 0.2, 0.8]), 0.3)
    assert p.values == pytest.approx([0.15, 0.29, 0.56], abs=1e-12)
    assert mix(Tensor([0.5, 0.5, 0.0]), Tensor([0.0, 0.2, 0.8]), 1.0).values.tolist() == [0.5, 0.5, 0.0]
    assert mix(Tensor([0.5, 0.5, 0.0]), Tensor([0.0, 0.2, 0.8]), 0.0).values.tolist() == [0.0, 0.2, 0.8]


def test_output_distributions(example, params, spec):
    enc = encode(example, lm_forward(source_embeddings(example, params), params).h_lm, params, spec)
    state = decode_step(initial_state(enc, params), params["qg.embed.word"].values[2], enc, params)
    p_vocab, p_copy, p_g = output_distributions(state, example, params)
    V = example.vocab_size
    assert p_vocab.shape == p_copy.shape == (example.extended_size,)
    assert p_vocab.values[V:].tolist() == [0.0]
    assert 0.0 < p_g.item() < 1.0
    for p in (p_vocab, p_copy, mix(p_vocab, p_copy, p_g)):
        assert np.all(p.values >= 0)
        assert abs(p.values.sum() - 1.0) < 1e-9
    for t, ext in enumerate(example.src_ext_ids):
        assert p_copy.values[ext] == pytest.approx(state.alpha.values[t])


def test_copy_scatter_adds_repeated_tokens(vocab, params):
    t = RawTriple(("city", "is", "city", "the"), ("NN",) * 4, ("O",) * 4, 0, 1, ("what", "?"))
    example = encode_example(t, vocab)
    state = DecoderState(
        h=Tensor(np.zeros(4)),
        cell=Tensor(np.zeros(4)),
        context=Tensor(np.zeros(8)),
        alpha=Tensor([0.3, 0.1, 0.2, 0.4]),
        last_word=Tensor(np.zeros(4)),
    )
    _, p_copy, _ = output_distributions(state, example, params)
    assert p_copy.values[vocab.id("city")] == pytest.approx(0.5, abs=1e-15)
    assert p_copy.values[vocab.id("the")] == pytest.approx(0.4, abs=1e-15)


def random_example(rng, vocab):
    words = vocab.words[4:] + ["Zorblat", "Quux", "Mip"]
    n = int(rng.integers(1, 6))
    sentence = tuple(str(w) for w in rng.choice(words, size=n))
    start = int(rng.integers(0, n))
    question = tuple(str(w) for w in rng.choice(words, size=int(rng.integers(1, 4))))
    return encode_example(RawTriple(sentence, ("NN",) * n, ("O",) * n, start, start + 1, question), vocab)


def test_copy_support_with_generation_off(make_spec, vocab):
    spec = make_spec(use_lm=False)
    params = init_params(spec, seed=4)
    rng = np.random.default_rng(9)
    for _ in range(100):
        example = random_example(rng, vocab)
        enc = encode(example, None, params, spec)
        state = decode_step(initial_state(enc, params), params["qg.embed.word"].values[2], enc, params)
        p = mix(*output_distributions(state, example, params, p_gen=0.0))
        assert set(np.flatnonzero(p.values).tolist()) == set(example.src_ext_ids)


def test_distributions_normalised_over_random_states(make_spec, vocab):
    spec = make_spec(use_lm=False)
    rng = np.random.default_rng(13)
    example = random_example(rng, vocab)
    for seed in range(334):
        params = init_params(spec, seed=seed)
        enc = encode(example, None, params, spec)
        state = initial_state(enc, params)
        for token in (Vocabulary.BOS, 5, 7):
            state = decode_step(state, params["qg.embed.word"].values[token], enc, params)
            p_vocab, p_copy, p_g = output_distributions(state, example, params)
            for p in (state.alpha, p_vocab, p_copy, mix(p_vocab, p_copy, p_g)):
                assert np.all(p.values >= 0)
                assert abs(p.values.sum() - 1.0) < 1e-9


def test_sequence_nll_uniform(make_spec, vocab):
    spec = make_spec(vocab_size=len(vocab), use_lm=False)
    params = init_params(spec, seed=6)
    params["qg.out.2.W"] = np.zeros((4, len(vocab)))
    t = RawTriple(("what", "is", "city"), ("WP", "VBZ", "NN"), ("O", "O", "O"), 2, 3, ("what", "is", "the", "city"))
    # generation only, with zero output logits: every step is uniform over the vocabulary
    E = sequence_nll(encode_example(t, vocab), params, spec, p_gen=1.0).item()
    assert E == pytest.approx(math.log(len(vocab)), abs=1e-12)


def test_lm_disabled_is_bit_identical_to_baseline(make_spec, example):
    spec = make_spec(use_lm=False)
    params = init_params(spec, seed=5)
    detached_spec = make_spec(lm_detached=True)
    detached = init_params(detached_spec, seed=5)
    baseline_loss = forward(example, params, spec)
    detached_loss = forward(example, detached, detached_spec)
    assert baseline_loss.E_lm is None
    assert detached_loss.E_lm is not None
    assert baseline_loss.E.values.tobytes() == detached_loss.E.values.tobytes()
    fed = forward(example, init_params(make_spec(), seed=5), make_spec())
    assert fed.E.values.tobytes() != baseline_loss.E.values.tobytes()


def test_forward_contract(vocab, params, spec):
    t = RawTriple(("city",), ("NN",), ("O",), 0, 1, ())
    example = encode_example(t, vocab)
    # the LM needs two source tokens
    with pytest.raises(ContractError):
        forward(example, params, spec)


def test_joint_loss_gradients(make_spec, vocab):
    spec = make_spec(vocab_size=len(vocab))
    params = init_params(spec, seed=8)
    # weights of this size keep every gradient well above the round-off of a 1e-4 step
    rng = np.random.default_rng(21)
    params.assign({name: rng.uniform(-0.5, 0.5, size=t.shape) for name, t in params.items()})
    t = RawTriple(("Zorblat", "is", "city"), ("NNP", "VBZ", "NN"), ("LOCATION", "O", "O"), 0, 1, ("what", "Zorblat"))
    example = encode_example(t, vocab)

    def total(*tensors):
        losses = forward(example, params, spec)
        return add(losses.E, scale(losses.E_lm, 0.6))

    assert grad_check(total, params.tensors(), eps=1e-4) < 1e-3
    lm = [t for name, t in params.items() if name.startswith("lm.")] + [params["qg.embed.word"]]
    assert grad_check(lambda *ts: forward(example, params, spec).E_lm, lm, eps=1e-4) < 1e-3
    decoder = [t for name, t in params.items() if name.split(".")[1] in ("dec", "attn", "out", "gen", "bridge")]
    assert grad_check(lambda *ts: forward(example, params, spec).E, decoder, eps=1e-4) < 1e-3
