import pathlib
from types import SimpleNamespace

import pytest

from questionator.config import TOY_CORPUS
from questionator.corpus import RawTriple, TagSet, Vocabulary, build_vocabulary, encode_example, load_dataset
from questionator.model import ModelSpec, init_params


@pytest.fixture
def test_path():
    return pathlib.Path(__file__).parent.resolve()


@pytest.fixture
def yaml_path(test_path):
    return test_path / "yaml"


@pytest.fixture
def data_path(test_path):
    return test_path / "data"


@pytest.fixture
def vocab():
    # 4 specials + 8 words
    return Vocabulary(["what", "is", "the", "capital", "of", "?", "city", "was"])


@pytest.fixture
def pos_tags():
    return TagSet(["NN", "NNP", "VBZ"])


@pytest.fixture
def ner_tags():
    return TagSet(["O", "LOCATION", "PERSON"])


@pytest.fixture
def triple():
    # "Zorblat" is outside the vocabulary and appears in the question
    return RawTriple(
        sentence=("Zorblat", "is", "the", "city"),
        pos=("NNP", "VBZ", "DT", "NN"),
        ner=("LOCATION", "O", "O", "O"),
        answer_start=0,
        answer_end=1,
        question=("what", "is", "Zorblat", "?"),
    )


@pytest.fixture
def example(triple, vocab, pos_tags, ner_tags):
    return encode_example(triple, vocab, pos_tags, ner_tags)


@pytest.fixture
def make_spec():
    def make(vocab_size=12, **model):
        settings = dict(word_dim=4, feature_dim=2, hidden=4, lm_hidden=3, output_hidden=4)
        settings.update(model)
        return ModelSpec(vocab_size=vocab_size, n_pos=4, n_ner=4, **settings)

    return make


@pytest.fixture
def spec(make_spec):
    return make_spec()


@pytest.fixture
def params(spec):
    return init_params(spec, seed=7)


@pytest.fixture(scope="session")
def toy():
    """The bundled template corpus, encoded, with a constructor for small specs over it."""
    train = load_dataset(TOY_CORPUS / "train.jsonl")
    dev = load_dataset(TOY_CORPUS / "dev.jsonl")
    vocab = build_vocabulary(train, 20)
    pos_tags = TagSet.build(t.pos for t in train)
    ner_tags = TagSet.build(t.ner for t in train)

    def spec(**model):
        settings = dict(word_dim=4, feature_dim=2, hidden=4, lm_hidden=3, output_hidden=4)
        settings.update(model)
        return ModelSpec(vocab_size=len(vocab), n_pos=len(pos_tags), n_ner=len(ner_tags), **settings)

    return SimpleNamespace(
        train=[encode_example(t, vocab, pos_tags, ner_tags) for t in train],
        dev=[encode_example(t, vocab, pos_tags, ner_tags) for t in dev],
        vocab=vocab,
        pos_tags=pos_tags,
        ner_tags=ner_tags,
        spec=spec,
    )
