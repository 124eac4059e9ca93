"""Low-level bidirectional language model.

The forward cell reads the source left to right and predicts the next word,
the backward cell reads right to left and predicts the previous word. Its
concatenated hidden states are what the question generator stacks on.
"""

from dataclasses import dataclass

from .autograd import add, concat, matmul, nll, scale, softmax, stack, sum_
from .errors import ContractError
from .layers import lstm_shapes, run_lstm

NORMALIZERS = ("per_direction", "overall")


@dataclass
class LmOutput:
    h_lm: object  # [T, 2 * lm_hidden]
    p_fwd: list  # p_fwd[k] predicts word k+1 from words 0..k
    p_bwd: list  # p_bwd[k] predicts word k from words k+1..T-1


def lm_shapes(word_dim, lm_hidden, vocab_size):
    shapes = {}
    shapes.update(lstm_shapes("lm.fwd", word_dim, lm_hidden))
    shapes.update(lstm_shapes("lm.bwd", word_dim, lm_hidden))
    shapes["lm.W_f"] = (vocab_size, lm_hidden)
    shapes["lm.W_b"] = (vocab_size, lm_hidden)
    return shapes


def lm_forward(embeddings, params):
    """Run both directions over word embeddings [T, word_dim]."""
    T = embeddings.shape[0]
    if T < 2:
        raise ContractError(f"the language model needs at least 2 tokens, got {T}")
    forward, _ = run_lstm(params, "lm.fwd", embeddings)
    backward, _ = run_lstm(params, "lm.bwd", embeddings, reverse=True)
    W_f, W_b = params["lm.W_f"], params["lm.W_b"]
    return LmOutput(
        h_lm=stack([concat([f, b]) for f, b in zip(forward, backward)]),
        p_fwd=[softmax(matmul(W_f, forward[t])) for t in range(T - 1)],
        p_bwd=[softmax(matmul(W_b, backward[t])) for t in range(1, T)],
    )


def lm_loss(out, word_ids, normalizer="per_direction"):
    """Averaged next-word and previous-word negative log-likelihood.

    With `per_direction` each directional sum is divided by T-1; `overall`
    divides the total by 2(T-1)."""
    if normalizer not in NORMALIZERS:
        raise ContractError(f"unknown language model normalizer '{normalizer}'")
    T = len(word_ids)
    if T < 2 or len(out.p_fwd) != T - 1 or len(out.p_bwd) != T - 1:
        raise ContractError(f"language model output does not match {T} target words")
    width = out.p_fwd[0].shape[-1]
    if any(not 0 <= w < width for w in word_ids):
        raise ContractError("language model targets must be ids of the fixed vocabulary")

    next_words = sum_(stack([nll(p, word_ids[k + 1]) for k, p in enumerate(out.p_fwd)]))
    previous_words = sum_(stack([nll(p, word_ids[k]) for k, p in enumerate(out.p_bwd)]))
    if normalizer == "overall":
        return scale(add(next_words, previous_words), 1.0 / (2 * (T - 1)))
    return add(scale(next_words, 1.0 / (T - 1)), scale(previous_words, 1.0 / (T - 1)))
