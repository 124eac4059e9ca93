import json
import math
from collections import Counter
from dataclasses import asdict, dataclass

from .errors import ContractError, UndefinedMetricError
from .model import forward


def ngrams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) + 1 - n)]


def bleu_stats(hypothesis, reference, max_n=4):
    """(hyp length, ref length, [(clipped matches, hyp n-grams) for n = 1..max_n])."""
    counts = []
    for n in range(1, max_n + 1):
        hyp = Counter(ngrams(hypothesis, n))
        ref = Counter(ngrams(reference, n))
        counts.append((sum((hyp & ref).values()), max(len(hypothesis) + 1 - n, 0)))
    return len(hypothesis), len(reference), counts


def bleu(hypotheses, references, max_n=4):
    """Corpus BLEU-1..max_n (x100) with pooled clipped counts and a brevity penalty.

    A zero n-gram precision makes BLEU-n zero for that and every higher n."""
    if len(hypotheses) != len(references):
        raise ContractError(f"{len(hypotheses)} hypotheses for {len(references)} references")
    if not hypotheses:
        raise ContractError("BLEU of an empty corpus")

    hyp_len = ref_len = 0
    matches = [0] * max_n
    totals = [0] * max_n
    for h, r in zip(hypotheses, references):
        c, rl, counts = bleu_stats(list(h), list(r), max_n)
        hyp_len += c
        ref_len += rl
        for k, (m, t) in enumerate(counts):
            matches[k] += m
            totals[k] += t

    if hyp_len == 0:
        return [0.0] * max_n
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)

    scores = []
    log_sum = 0.0
    for k in range(max_n):
        if matches[k] == 0 or totals[k] == 0:
            scores.extend([0.0] * (max_n - k))
            break
        log_sum += math.log(matches[k] / totals[k])
        scores.append(100.0 * bp * math.exp(log_sum / (k + 1)))
    return scores


def distinct_n(hypotheses, n):
    """100 x unique n-grams / total n-grams, pooled over all hypotheses."""
    pool = [g for h in hypotheses for g in ngrams(list(h), n)]
    if not pool:
        raise UndefinedMetricError(f"distinct-{n} is undefined: no hypothesis has {n} tokens")
    return 100.0 * len(set(pool)) / len(pool)


def pooled_nll(params, spec, examples):
    """(summed token NLL, token count) of the references under teacher forcing."""
    if not examples:
        raise ContractError("perplexity of an empty dataset")
    total = 0.0
    tokens = 0
    for example in examples:
        losses = forward(example, params, spec, with_lm_loss=False)
        total += losses.E.item() * losses.tokens
        tokens += losses.tokens
    return total, tokens


def perplexity(params, spec, examples):
    total, tokens = pooled_nll(params, spec, examples)
    return math.exp(total / tokens)


@dataclass
class EvalReport:
    bleu: list
    distinct1: float
    distinct2: float
    perplexity: float
    hypotheses: int
    reference_tokens: int

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def report(hypotheses, references, perplexity_value=None):
    """EvalReport of token-list hypotheses against references.

    Undefined distinct scores (no n-grams at all) are reported as None."""
    scores = {}
    for n in (1, 2):
        try:
            scores[n] = distinct_n(hypotheses, n)
        except UndefinedMetricError:
            scores[n] = None
    return EvalReport(
        bleu=bleu(hypotheses, references),
        distinct1=scores[1],
        distinct2=scores[2],
        perplexity=perplexity_value,
        hypotheses=len(hypotheses),
        reference_tokens=sum(len(r) for r in references),
    )
