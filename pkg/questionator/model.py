"""Feature-enriched pointer-generator question generator.

The encoder reads [word; answer tag; POS; NER; case; LM state] per source
token through a stack of bidirectional LSTM layers. The decoder is an LSTM
over [previous word; previous context], followed by additive attention, a two
layer vocabulary network and a copy distribution mixed by the generation
probability p_g.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .autograd import (
    Tensor,
    add,
    concat,
    gather,
    matmul,
    mean,
    mul,
    nll,
    scatter_add,
    sigmoid,
    softmax,
    stack,
    sub,
    tanh,
)
from .corpus import AnswerTag, CaseTag
from .errors import ContractError
from .layers import bilstm, lstm_shapes, lstm_step, open_forget_gates
from .lm import lm_forward, lm_loss, lm_shapes
from .params import ModelParams


@dataclass(frozen=True)
class ModelSpec:
    vocab_size: int
    n_pos: int
    n_ner: int
    word_dim: int = 300
    feature_dim: int = 32
    hidden: int = 512
    lm_hidden: int = 64
    output_hidden: int = 512
    use_lm: bool = True
    use_features: bool = True
    encoder_layers: int = 2
    lm_detached: bool = False
    lm_normalizer: str = "per_direction"

    @classmethod
    def from_config(cls, model, vocab_size, n_pos, n_ner):
        return cls(vocab_size=vocab_size, n_pos=n_pos, n_ner=n_ner, **model)

    @property
    def feeds_lm(self):
        """True when LM hidden states are part of the encoder input."""
        return self.use_lm and not self.lm_detached

    @property
    def encoder_input_width(self):
        width = self.word_dim + self.feature_dim
        if self.use_features:
            width += 3 * self.feature_dim
        if self.feeds_lm:
            width += 2 * self.lm_hidden
        return width

    def shapes(self):
        d, f, V = self.hidden, self.feature_dim, self.vocab_size
        shapes = {
            "qg.embed.word": (V, self.word_dim),
            "qg.embed.answer": (len(AnswerTag), f),
        }
        if self.use_features:
            shapes["qg.embed.pos"] = (self.n_pos, f)
            shapes["qg.embed.ner"] = (self.n_ner, f)
            shapes["qg.embed.case"] = (len(CaseTag), f)
        if self.use_lm:
            shapes.update(lm_shapes(self.word_dim, self.lm_hidden, V))

        width = self.encoder_input_width
        for layer in range(self.encoder_layers):
            shapes.update(lstm_shapes(f"qg.enc.{layer}.fwd", width, d))
            shapes.update(lstm_shapes(f"qg.enc.{layer}.bwd", width, d))
            width = 2 * d

        shapes.update(
            {
                "qg.bridge.h.W": (2 * d, d),
                "qg.bridge.h.b": (d,),
                "qg.bridge.c.W": (2 * d, d),
                "qg.bridge.c.b": (d,),
                "qg.attn.W_h": (2 * d, d),
                "qg.attn.W_s": (d, d),
                "qg.attn.b": (d,),
                "qg.attn.v": (d,),
                "qg.out.1.W": (3 * d, self.output_hidden),
                "qg.out.1.b": (self.output_hidden,),
                "qg.out.2.W": (self.output_hidden, V),
                "qg.out.2.b": (V,),
                "qg.gen.w": (3 * d + self.word_dim,),
                "qg.gen.b": (1,),
            }
        )
        shapes.update(lstm_shapes("qg.dec", self.word_dim + 2 * d, d))
        return shapes

    def to_dict(self):
        return asdict(self)


def init_params(spec, seed, word_table=None):
    params = open_forget_gates(ModelParams.initialise(spec.shapes(), seed))
    if word_table is not None:
        table = np.asarray(word_table, dtype=np.float64)
        if table.shape != params["qg.embed.word"].shape:
            raise ContractError(f"word table has shape {table.shape}, expected {params['qg.embed.word'].shape}")
        params["qg.embed.word"] = table.copy()
    return params


@dataclass
class EncoderOutput:
    states: object  # h^L, [T, 2d]
    keys: object  # attention projection of the states, [T, d]
    final_h: object  # [2d]
    final_c: object  # [2d]


@dataclass
class DecoderState:
    h: object  # s_i
    cell: object
    context: object  # c_i, [2d]
    alpha: object = None
    last_word: object = None


def source_embeddings(example, params):
    return gather(params["qg.embed.word"], example.src_ids)


def encode(example, lm_hidden, params, spec, word_embeddings=None):
    """Stacked bidirectional encoder over the feature-rich input."""
    T = len(example.src_ids)
    if word_embeddings is None:
        word_embeddings = source_embeddings(example, params)
    columns = [word_embeddings, gather(params["qg.embed.answer"], example.answer_tags)]
    if spec.use_features:
        columns.append(gather(params["qg.embed.pos"], example.pos_ids))
        columns.append(gather(params["qg.embed.ner"], example.ner_ids))
        columns.append(gather(params["qg.embed.case"], example.case_ids))
    if spec.feeds_lm:
        if lm_hidden is None:
            raise ContractError("the configuration feeds LM states but none were given")
        if lm_hidden.shape[0] != T:
            raise ContractError(f"LM states have {lm_hidden.shape[0]} rows for a source of {T} tokens")
        columns.append(lm_hidden)
    inputs = concat(columns)

    for layer in range(spec.encoder_layers):
        inputs, fwd_final, bwd_final = bilstm(params, f"qg.enc.{layer}", inputs)

    # bridge from the last layer only
    return EncoderOutput(
        states=inputs,
        keys=matmul(inputs, params["qg.attn.W_h"]),
        final_h=concat([fwd_final[0], bwd_final[0]]),
        final_c=concat([fwd_final[1], bwd_final[1]]),
    )


def attention(h, enc, params):
    """Additive attention of decoder state `h` over the encoder states."""
    query = add(matmul(h, params["qg.attn.W_s"]), params["qg.attn.b"])
    energies = matmul(tanh(add(enc.keys, query)), params["qg.attn.v"])
    alpha = softmax(energies)
    return alpha, matmul(alpha, enc.states)


def initial_state(enc, params):
    h = add(matmul(enc.final_h, params["qg.bridge.h.W"]), params["qg.bridge.h.b"])
    cell = add(matmul(enc.final_c, params["qg.bridge.c.W"]), params["qg.bridge.c.b"])
    return DecoderState(h=h, cell=cell, context=Tensor(np.zeros(enc.states.shape[1])))


def decode_step(prev, w_prev_embedding, enc, params):
    """One decoder update s_i = LSTM([w_{i-1}; c_{i-1}], s_{i-1}), then attention with s_i."""
    h, cell = lstm_step(params, "qg.dec", concat([w_prev_embedding, prev.context]), (prev.h, prev.cell))
    alpha, context = attention(h, enc, params)
    return DecoderState(h=h, cell=cell, context=context, alpha=alpha, last_word=w_prev_embedding)


def output_distributions(state, example, params, p_gen=None):
    """(P_vocab, P_copy, p_g) over the extended vocabulary of `example`.

    `p_gen` forces the generation probability to a constant."""
    V = example.vocab_size
    width = example.extended_size
    hidden = tanh(add(matmul(concat([state.h, state.context]), params["qg.out.1.W"]), params["qg.out.1.b"]))
    p_vocab = softmax(add(matmul(hidden, params["qg.out.2.W"]), params["qg.out.2.b"]))
    if width > V:
        p_vocab = concat([p_vocab, Tensor(np.zeros(width - V))])
    p_copy = scatter_add(state.alpha, example.src_ext_ids, width)
    if p_gen is not None:
        p_g = Tensor(np.array([float(p_gen)]))
    else:
        features = concat([state.context, state.h, state.last_word])
        p_g = sigmoid(add(matmul(features, params["qg.gen.w"]), params["qg.gen.b"]))
    return p_vocab, p_copy, p_g


def mix(p_vocab, p_copy, p_g):
    """P(w) = p_g P_vocab(w) + (1 - p_g) P_copy(w)."""
    if not isinstance(p_g, Tensor):
        p_g = Tensor(np.array([float(p_g)]))
    return add(mul(p_g, p_vocab), mul(sub(1.0, p_g), p_copy))


@dataclass
class Losses:
    E: object
    E_lm: object  # None when the LM is disabled
    tokens: int


def forward(example, params, spec, p_gen=None, with_lm_loss=True):
    """Teacher-forced losses of one example: question NLL and, if enabled, LM loss.

    With `with_lm_loss` false the LM only runs when its states feed the
    encoder, and E_lm is None."""
    if not example.tgt_out:
        raise ContractError("the target question is empty")
    words = source_embeddings(example, params)
    lm_out = None
    E_lm = None
    if spec.feeds_lm or (spec.use_lm and with_lm_loss):
        lm_out = lm_forward(words, params)
    if spec.use_lm and with_lm_loss:
        E_lm = lm_loss(lm_out, example.src_ids, spec.lm_normalizer)

    enc = encode(example, lm_out.h_lm if spec.feeds_lm else None, params, spec, word_embeddings=words)
    targets = gather(params["qg.embed.word"], example.tgt_in)
    state = initial_state(enc, params)
    steps = []
    for i, gold in enumerate(example.tgt_out):
        state = decode_step(state, gather(targets, i), enc, params)
        steps.append(nll(mix(*output_distributions(state, example, params, p_gen)), gold))
    return Losses(E=mean(stack(steps)), E_lm=E_lm, tokens=len(example.tgt_out))


def sequence_nll(example, params, spec, p_gen=None):
    """Token-mean negative log-likelihood E of the reference question."""
    return forward(example, params, spec, p_gen, with_lm_loss=False).E
