"""Beam search and greedy decoding over the extended vocabulary.

Both searches drive a scorer, an object with `start()` returning an initial
decoder state and `step(state, token)` returning the log-probabilities of the
next token together with the new state. `ModelScorer` adapts the question
generator to that interface; tests use hand-written scorers.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor
from .corpus import Vocabulary, surfaces
from .errors import ContractError
from .lm import lm_forward
from .model import decode_step, encode, initial_state, mix, output_distributions, source_embeddings


@dataclass
class Hypothesis:
    tokens: tuple
    log_prob: float
    state: object = None
    finished: bool = False
    step_log_probs: tuple = field(default=(), repr=False)

    @property
    def score(self):
        """Length-normalised log-probability used to rank finished hypotheses."""
        return self.log_prob / max(len(self.tokens), 1)


class ModelScorer:
    """Question generator decoding one example without recording a tape."""

    def __init__(self, example, params, spec, suppress_unk=False):
        self.example = example
        self.params = params
        self.spec = spec
        self.suppress_unk = suppress_unk
        words = source_embeddings(example, params)
        lm_hidden = lm_forward(words, params).h_lm if spec.feeds_lm else None
        self.enc = encode(example, lm_hidden, params, spec, word_embeddings=words)

    def start(self):
        return initial_state(self.enc, self.params)

    def step(self, state, token):
        # extended ids have no embedding row
        if token >= self.example.vocab_size:
            token = Vocabulary.UNK
        embedding = self.params["qg.embed.word"].values[token]
        state = decode_step(state, Tensor(embedding), self.enc, self.params)
        probs = mix(*output_distributions(state, self.example, self.params)).values
        with np.errstate(divide="ignore"):
            log_probs = np.log(probs)
        if self.suppress_unk:
            log_probs[Vocabulary.UNK] = -np.inf
        return log_probs, state


def _ranked(log_probs):
    """Finite candidates by decreasing log-probability, ties by lower id."""
    ids = np.flatnonzero(np.isfinite(log_probs))
    order = np.lexsort((ids, -log_probs[ids]))
    return ids[order]


def search(scorer, beam_size, max_len, bos=Vocabulary.BOS, eos=Vocabulary.EOS):
    if beam_size < 1:
        raise ContractError(f"beam size must be at least 1, got {beam_size}")
    if max_len < 1:
        raise ContractError(f"maximum length must be at least 1, got {max_len}")

    alive = [Hypothesis(tokens=(), log_prob=0.0, state=scorer.start())]
    finished = []
    for length in range(1, max_len + 1):
        candidates = []
        for rank, hyp in enumerate(alive):
            previous = hyp.tokens[-1] if hyp.tokens else bos
            log_probs, state = scorer.step(hyp.state, previous)
            for token in _ranked(log_probs)[:beam_size]:
                lp = float(log_probs[token])
                candidates.append((hyp.log_prob + lp, rank, int(token), lp, state, hyp))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

        alive = []
        for total, _, token, lp, state, parent in candidates[:beam_size]:
            hyp = Hypothesis(
                tokens=parent.tokens + (token,),
                log_prob=total,
                state=state,
                step_log_probs=parent.step_log_probs + (lp,),
            )
            if token == eos or length == max_len:
                hyp.finished = True
                finished.append(hyp)
            else:
                alive.append(hyp)
        if not alive or len(finished) >= beam_size:
            break

    finished.sort(key=lambda h: -h.score)
    return finished[:beam_size]


def greedy(scorer, max_len, bos=Vocabulary.BOS, eos=Vocabulary.EOS):
    if max_len < 1:
        raise ContractError(f"maximum length must be at least 1, got {max_len}")
    state = scorer.start()
    tokens, steps = [], []
    previous = bos
    for _ in range(max_len):
        log_probs, state = scorer.step(state, previous)
        previous = int(np.argmax(log_probs))
        tokens.append(previous)
        steps.append(float(log_probs[previous]))
        if previous == eos:
            break
    return Hypothesis(
        tokens=tuple(tokens), log_prob=float(sum(steps)), state=state, finished=True, step_log_probs=tuple(steps)
    )


def beam_search(example, params, spec, beam_size=12, max_len=30, suppress_unk=False):
    return search(ModelScorer(example, params, spec, suppress_unk), beam_size, max_len)


def greedy_decode(example, params, spec, max_len=30, suppress_unk=False):
    return greedy(ModelScorer(example, params, spec, suppress_unk), max_len)


def resolve_copies(hyp, example, vocab):
    """Surface strings of a hypothesis with copied ids mapped back to source words."""
    tokens = list(hyp.tokens if isinstance(hyp, Hypothesis) else hyp)
    if tokens and tokens[-1] == Vocabulary.EOS:
        tokens.pop()
    return surfaces(tokens, vocab, example.oov_list)


def decode_dataset(examples, params, spec, vocab, beam_size=12, max_len=30, suppress_unk=False, greedy=False, threads=1):
    """Surface questions for `examples` in input order.

    `greedy` uses argmax decoding instead of the beam; with `threads` > 1 the
    examples are decoded by a pool of workers reading the same parameters."""

    def run(example):
        if greedy:
            hyp = greedy_decode(example, params, spec, max_len, suppress_unk)
        else:
            hyp = beam_search(example, params, spec, beam_size, max_len, suppress_unk)[0]
        return resolve_copies(hyp, example, vocab)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, examples))
    return [run(example) for example in examples]
