import copy
import pathlib
import zlib

import numpy as np

from . import config, root_logger
from .corpus import TagSet, Vocabulary, build_vocabulary, encode_example, load_dataset, load_pretrained_embeddings
from .errors import ContractError
from .model import ModelSpec
from .trainer import TrainConfig


class Experiment:
    """A resolved configuration with its vocabularies and the datasets it names.

    Built either from a configuration file (vocabularies derived from the
    training set) or from an existing run directory (vocabularies reloaded)."""

    def __init__(self, raw, vocab, pos_tags, ner_tags, source="<config>"):
        self._logger = root_logger
        self.config = raw
        self.source = source
        self.vocab = vocab
        self.pos_tags = pos_tags
        self.ner_tags = ner_tags
        self._datasets = {}

    @classmethod
    def from_config(cls, path, overrides=()):
        raw = config.load(path, overrides)
        train = load_dataset(raw["data"]["train"])
        vocab = build_vocabulary(train, raw["data"]["vocab_cap"])
        experiment = cls(
            raw,
            vocab,
            TagSet.build(t.pos for t in train),
            TagSet.build(t.ner for t in train),
            source=path,
        )
        experiment._datasets["train"] = [experiment.encode(t) for t in train]
        return experiment

    @classmethod
    def from_run(cls, run_dir):
        run_dir = pathlib.Path(run_dir)
        config_path = run_dir / "config.yaml"
        if not config_path.is_file():
            raise FileNotFoundError(f"'{run_dir}' is not a run directory: config.yaml is missing")
        raw = config.load(config_path)
        return cls(
            raw,
            Vocabulary.load(run_dir / "vocab.txt"),
            TagSet.load(run_dir / "pos.txt"),
            TagSet.load(run_dir / "ner.txt"),
            source=config_path,
        )

    @property
    def spec(self):
        return ModelSpec.from_config(self.config["model"], len(self.vocab), len(self.pos_tags), len(self.ner_tags))

    @property
    def train_config(self):
        return TrainConfig.from_config(self.config)

    @property
    def threads(self):
        return config.thread_count(self.config)

    def encode(self, triple):
        return encode_example(triple, self.vocab, self.pos_tags, self.ner_tags)

    def dataset(self, name):
        """Encoded examples of data.<name>, or an empty list when it is not configured."""
        if name not in self._datasets:
            path = self.config["data"].get(name)
            self._datasets[name] = [self.encode(t) for t in load_dataset(path)] if path else []
        return self._datasets[name]

    def load_examples(self, path):
        return [self.encode(t) for t in load_dataset(path)]

    def word_table(self):
        path = self.config["data"].get("embeddings")
        if path is None:
            return None
        rng = np.random.default_rng([self.config["train"]["seed"], zlib.crc32(b"qg.embed.word")])
        table, _ = load_pretrained_embeddings(path, self.vocab, self.config["model"]["word_dim"], rng)
        return table

    def with_configuration(self, name, **train):
        """Copy of this experiment under another named configuration."""
        if name not in config.CONFIGURATIONS:
            raise ContractError(f"unknown configuration '{name}'")
        raw = copy.deepcopy(self.config)
        raw["train"]["configuration"] = name
        raw["train"].update(train)
        config.apply_configuration(raw)
        other = Experiment(raw, self.vocab, self.pos_tags, self.ner_tags, source=self.source)
        other._datasets = self._datasets
        return other

    def save(self, run_dir):
        """Write the resolved configuration and vocabularies; returns the written paths."""
        run_dir = pathlib.Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        paths = [run_dir / name for name in ("config.yaml", "vocab.txt", "pos.txt", "ner.txt")]
        config.dump(self.config, paths[0])
        self.vocab.save(paths[1])
        self.pos_tags.save(paths[2])
        self.ner_tags.save(paths[3])
        self._logger.debug(f"wrote configuration and vocabularies to {run_dir}")
        return paths
