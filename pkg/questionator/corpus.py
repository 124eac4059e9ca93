import enum
import json
import pathlib
from collections import Counter
from dataclasses import dataclass

import jsonschema

from . import root_logger, schema
from .errors import ContractError, ParseError


class CaseTag(enum.IntEnum):
    ALL_LOWER = 0
    CAPITALIZED = 1
    ALL_UPPER = 2
    MIXED = 3
    NON_ALPHA = 4

    @classmethod
    def of(cls, word):
        letters = [c for c in word if c.isalpha()]
        if not letters:
            return cls.NON_ALPHA
        if all(c.islower() for c in letters):
            return cls.ALL_LOWER
        if all(c.isupper() for c in letters):
            return cls.CAPITALIZED if len(letters) == 1 else cls.ALL_UPPER
        if letters[0].isupper() and all(c.islower() for c in letters[1:]):
            return cls.CAPITALIZED
        return cls.MIXED


class AnswerTag(enum.IntEnum):
    O = 0  # noqa: E741
    B = 1
    I = 2  # noqa: E741


@dataclass(frozen=True)
class RawTriple:
    sentence: tuple
    pos: tuple
    ner: tuple
    answer_start: int
    answer_end: int
    question: tuple

    def check(self):
        n = len(self.sentence)
        if len(self.pos) != n or len(self.ner) != n:
            raise ContractError(
                f"sentence has {n} tokens but {len(self.pos)} POS tags and {len(self.ner)} NER tags"
            )
        if not (0 <= self.answer_start < self.answer_end <= n):
            raise ContractError(f"answer span ({self.answer_start}, {self.answer_end}) out of range for {n} tokens")
        return self


class Vocabulary:
    """Word <-> id maps with the special tokens at ids 0-3."""

    PAD, UNK, BOS, EOS = 0, 1, 2, 3
    SPECIALS = ("<pad>", "<unk>", "<s>", "</s>")

    def __init__(self, words):
        self._words = list(Vocabulary.SPECIALS)
        for w in words:
            if w not in Vocabulary.SPECIALS:
                self._words.append(w)
        self._ids = {w: i for i, w in enumerate(self._words)}
        if len(self._ids) != len(self._words):
            raise ContractError("vocabulary contains duplicate words")

    def __len__(self):
        return len(self._words)

    def __contains__(self, word):
        return word in self._ids

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._words == other._words

    def id(self, word):
        return self._ids.get(word, Vocabulary.UNK)

    def word(self, index):
        return self._words[index]

    @property
    def words(self):
        return list(self._words)

    def save(self, path):
        with pathlib.Path(path).open("w") as f:
            for w in self._words:
                f.write(f"{w}\n")

    @classmethod
    def load(cls, path):
        path = pathlib.Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"The vocabulary file '{path}' does not exist")
        words = path.read_text().split("\n")
        if words and words[-1] == "":
            words.pop()
        if tuple(words[:4]) != Vocabulary.SPECIALS:
            raise ParseError(path, 1, f"vocabulary must start with {' '.join(Vocabulary.SPECIALS)}")
        return cls(words[4:])


class TagSet:
    """Inventory of POS or NER tags; id 0 stands for tags never seen in training."""

    UNSEEN = "<unk>"

    def __init__(self, tags):
        self._tags = [TagSet.UNSEEN] + [t for t in tags if t != TagSet.UNSEEN]
        self._ids = {t: i for i, t in enumerate(self._tags)}

    def __len__(self):
        return len(self._tags)

    def id(self, tag):
        return self._ids.get(tag, 0)

    def save(self, path):
        pathlib.Path(path).write_text("".join(f"{t}\n" for t in self._tags))

    @classmethod
    def load(cls, path):
        path = pathlib.Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"The tag file '{path}' does not exist")
        return cls([t for t in path.read_text().split("\n") if t])

    @classmethod
    def build(cls, sequences):
        return cls(sorted({t for seq in sequences for t in seq}))


@dataclass(frozen=True)
class EncodedExample:
    src_tokens: tuple
    src_ids: tuple
    src_ext_ids: tuple
    oov_list: tuple
    answer_tags: tuple
    pos_ids: tuple
    ner_ids: tuple
    case_ids: tuple
    tgt_tokens: tuple
    tgt_in: tuple
    tgt_out: tuple
    vocab_size: int

    @property
    def extended_size(self):
        return self.vocab_size + len(self.oov_list)


def build_vocabulary(corpus, cap):
    if cap < 1:
        raise ContractError(f"vocabulary cap must be at least 1, got {cap}")
    if not corpus:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    counts = Counter()
    for t in corpus:
        counts.update(t.sentence)
        counts.update(t.question)
    for special in Vocabulary.SPECIALS:
        counts.pop(special, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    vocab = Vocabulary(w for w, _ in ranked[:cap])
    root_logger.debug(f"vocabulary: {len(vocab)} entries from {len(counts)} distinct tokens (cap {cap})")
    return vocab


def answer_tags(length, start, end):
    tags = [AnswerTag.O] * length
    tags[start] = AnswerTag.B
    for i in range(start + 1, end):
        tags[i] = AnswerTag.I
    return tuple(int(t) for t in tags)


def encode_example(t, vocab, pos_tags=None, ner_tags=None):
    """Map a triple to ids, assigning per-example extended ids to source OOVs."""
    t.check()
    V = len(vocab)
    src_ids = tuple(vocab.id(w) for w in t.sentence)

    oov_list = []
    src_ext_ids = []
    for w, i in zip(t.sentence, src_ids):
        if i == Vocabulary.UNK and w not in vocab:
            if w not in oov_list:
                oov_list.append(w)
            src_ext_ids.append(V + oov_list.index(w))
        else:
            src_ext_ids.append(i)

    tgt_in = [Vocabulary.BOS]
    tgt_out = []
    for w in t.question:
        i = vocab.id(w)
        tgt_in.append(i)
        if i == Vocabulary.UNK and w in oov_list:
            tgt_out.append(V + oov_list.index(w))
        else:
            tgt_out.append(i)
    tgt_out.append(Vocabulary.EOS)

    return EncodedExample(
        src_tokens=tuple(t.sentence),
        src_ids=src_ids,
        src_ext_ids=tuple(src_ext_ids),
        oov_list=tuple(oov_list),
        answer_tags=answer_tags(len(t.sentence), t.answer_start, t.answer_end),
        pos_ids=tuple(pos_tags.id(p) if pos_tags else 0 for p in t.pos),
        ner_ids=tuple(ner_tags.id(n) if ner_tags else 0 for n in t.ner),
        case_ids=tuple(int(CaseTag.of(w)) for w in t.sentence),
        tgt_tokens=tuple(t.question),
        tgt_in=tuple(tgt_in),
        tgt_out=tuple(tgt_out),
        vocab_size=V,
    )


def surfaces(ids, vocab, oov_list):
    """Map (extended) ids back to surface strings."""
    V = len(vocab)
    words = []
    for i in ids:
        if 0 <= i < V:
            words.append(vocab.word(i))
        elif V <= i < V + len(oov_list):
            words.append(oov_list[i - V])
        else:
            raise ContractError(f"id {i} outside the extended vocabulary of size {V + len(oov_list)}")
    return words


def load_dataset(path):
    """Read JSON-lines triples; each record is validated against schema/triple.json."""
    path = pathlib.Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"The dataset '{path}' does not exist")
    triples = []
    with path.open() as fid:
        for lineno, line in enumerate(fid, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                schema.triple_validator.validate(raw)
                triple = RawTriple(
                    sentence=tuple(raw["sentence"]),
                    pos=tuple(raw["pos"]),
                    ner=tuple(raw["ner"]),
                    answer_start=raw["answer_start"],
                    answer_end=raw["answer_end"],
                    question=tuple(raw["question"]),
                ).check()
            except json.JSONDecodeError as e:
                raise ParseError(path, lineno, f"invalid JSON: {e.msg}")
            except jsonschema.exceptions.ValidationError as e:
                field = ".".join(str(p) for p in e.absolute_path) or "<record>"
                raise ParseError(path, lineno, f"field '{field}': {e.message}")
            except ContractError as e:
                raise ParseError(path, lineno, e.message)
            triples.append(triple)
    root_logger.debug(f"loaded {len(triples)} triples from {path}")
    return triples


def load_pretrained_embeddings(path, vocab, dim, rng):
    """Word table initialised from a whitespace separated vector file.

    Words without a vector (and the special tokens) are drawn uniformly from
    [-0.1, 0.1] with `rng`. Returns the table and the number of covered words."""
    path = pathlib.Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"The embedding file '{path}' does not exist")
    table = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    covered = set()
    with path.open() as fid:
        for lineno, line in enumerate(fid, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != dim + 1:
                raise ParseError(path, lineno, f"expected a token and {dim} values, found {len(fields) - 1} values")
            word = fields[0]
            try:
                values = [float(x) for x in fields[1:]]
            except ValueError as e:
                raise ParseError(path, lineno, str(e))
            if word in vocab and word not in Vocabulary.SPECIALS and word not in covered:
                table[vocab.id(word)] = values
                covered.add(word)
    root_logger.info(f"embeddings: {len(covered)} of {len(vocab) - 4} words covered by {path}")
    return table, len(covered)
