import numpy as np
import pytest

from questionator import config
from questionator.errors import ContractError
from questionator.experiment import Experiment

TOY_CONFIG = config.TOY_CORPUS / "config.yaml"


@pytest.fixture(scope="module")
def experiment():
    return Experiment.from_config(TOY_CONFIG)


def test_from_config(experiment):
    assert len(experiment.vocab) == 24
    assert len(experiment.dataset("train")) == 32
    assert len(experiment.dataset("dev")) == 8
    assert experiment.dataset("test") == []

    spec = experiment.spec
    assert spec.vocab_size == 24
    assert spec.hidden == 32
    assert spec.n_pos == len(experiment.pos_tags)
    assert experiment.train_config.beta == 0.6
    assert experiment.train_config.max_len == 12


def test_save_and_reload(experiment, tmp_path):
    paths = experiment.save(tmp_path / "run")
    assert [p.name for p in paths] == ["config.yaml", "vocab.txt", "pos.txt", "ner.txt"]

    reloaded = Experiment.from_run(tmp_path / "run")
    assert reloaded.vocab == experiment.vocab
    assert reloaded.spec == experiment.spec
    assert reloaded.config == experiment.config
    assert reloaded.load_examples(config.TOY_CORPUS / "dev.jsonl") == experiment.dataset("dev")

    with pytest.raises(FileNotFoundError):
        Experiment.from_run(tmp_path)


def test_with_configuration(experiment):
    baseline = experiment.with_configuration("baseline", max_steps=10)
    assert not baseline.spec.use_lm
    assert baseline.train_config.max_steps == 10
    assert baseline.train_config.configuration == "baseline"
    assert baseline.dataset("train") is experiment.dataset("train")
    # the original is untouched
    assert experiment.spec.use_lm
    assert experiment.train_config.max_steps == 500

    with pytest.raises(ContractError):
        experiment.with_configuration("two_layer_decoder")


def test_word_table(experiment, tmp_path):
    assert experiment.word_table() is None

    vectors = tmp_path / "vectors.txt"
    vectors.write_text("Alice 1 2 3\nZorblat 4 5 6\n")
    overrides = [f"data.embeddings={vectors}", "model.word_dim=3"]
    with_vectors = Experiment.from_config(TOY_CONFIG, overrides)
    table = with_vectors.word_table()
    assert table.shape == (24, 3)
    assert table[with_vectors.vocab.id("Alice")].tolist() == [1.0, 2.0, 3.0]
    assert np.all(np.abs(np.delete(table, with_vectors.vocab.id("Alice"), axis=0)) <= 0.1)
    assert np.array_equal(table, with_vectors.word_table())
