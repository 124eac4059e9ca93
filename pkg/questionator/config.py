import copy
import os
import pathlib

import jsonschema
import yaml

from . import root_logger, schema
from .errors import ConfigError, ContractError, ParseError

THREADS_ENV = "QUESTIONATOR_THREADS"

# the model settings of the four compared configurations, with the row names
# used in the reports.
CONFIGURATIONS = {
    "baseline": {
        "title": "pointer generator with features (baseline)",
        "model": {"use_lm": False, "use_features": True, "encoder_layers": 2},
    },
    "full": {
        "title": "w/ features + language modeling",
        "model": {"use_lm": True, "use_features": True, "encoder_layers": 2},
    },
    "no_features_lm": {
        "title": "w/o features + language modeling",
        "model": {"use_lm": True, "use_features": False, "encoder_layers": 2},
    },
    "three_layer_encoder": {
        "title": "w/ features + 1-layer encoder",
        "model": {"use_lm": False, "use_features": True, "encoder_layers": 3},
    },
}

TOY_CORPUS = pathlib.Path(__file__).parent / "data" / "toy"

PATH_KEYS = ("train", "dev", "test", "embeddings")


def parse_flat(text, source="<text>"):
    """Parse `section.key=value` lines into a nested mapping."""
    raw = {}
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(source, lineno, f"expected 'key=value', found '{line}'")
        key, value = (s.strip() for s in line.split("=", 1))
        set_dotted(raw, key, parse_value(value), source=source, lineno=lineno)
    return raw


def parse_value(text):
    return yaml.safe_load(text) if text else None


def set_dotted(raw, key, value, source="<override>", lineno=0):
    parts = key.split(".")
    if not all(parts):
        raise ParseError(source, lineno, f"invalid key '{key}'")
    node = raw
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ParseError(source, lineno, f"key '{key}' descends into a value")
    node[parts[-1]] = value


def validate(raw, source):
    try:
        schema.config_validator.validate(raw)
    except jsonschema.exceptions.ValidationError as e:
        field = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(source, field, e.message)
    return raw


def apply_configuration(raw):
    """Impose the model flags of the named configuration and check its invariants."""
    name = raw["train"]["configuration"]
    if name in CONFIGURATIONS:
        for key, value in CONFIGURATIONS[name]["model"].items():
            if raw["model"][key] != value:
                root_logger.debug(f"configuration {name}: model.{key} = {value}")
            raw["model"][key] = value
    if name == "three_layer_encoder" and (raw["model"]["use_lm"] or raw["model"]["encoder_layers"] != 3):
        raise ContractError("three_layer_encoder requires model.use_lm=false and model.encoder_layers=3")
    return raw


def resolve_paths(raw, base):
    for key in PATH_KEYS:
        value = raw["data"].get(key)
        if value is not None:
            path = pathlib.Path(os.path.expandvars(value))
            if not path.is_absolute():
                path = base / path
            raw["data"][key] = str(path)
    return raw


def load(path, overrides=()):
    """Read, override, validate and resolve a run configuration.

    `path` is YAML (.yaml/.yml) or flat `key=value` text; `overrides` is a
    sequence of `key=value` strings applied before validation."""
    path = pathlib.Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"The configuration file '{path}' does not exist")
    root_logger.debug(f"opening {path}")
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        raw = yaml.load(text, Loader=yaml.SafeLoader) or {}
        if not isinstance(raw, dict):
            raise ConfigError(path, "<root>", "the configuration must be a mapping")
    else:
        raw = parse_flat(text, source=path)
    return from_mapping(raw, path, base=path.parent.resolve(), overrides=overrides)


def from_mapping(raw, source, base=None, overrides=()):
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ParseError("--set", 0, f"expected 'key=value', found '{item}'")
        key, value = item.split("=", 1)
        set_dotted(raw, key.strip(), parse_value(value.strip()))
    validate(raw, source)
    apply_configuration(raw)
    if base is not None:
        resolve_paths(raw, pathlib.Path(base))
    return raw


def dump(raw, path):
    with pathlib.Path(path).open("w") as f:
        f.write(yaml.dump(raw, default_flow_style=False, sort_keys=True))


def thread_count(raw=None):
    threads = (raw or {}).get("run", {}).get("threads")
    if threads is None:
        threads = os.getenv(THREADS_ENV)
    try:
        threads = int(threads) if threads is not None else 1
    except ValueError:
        raise ConfigError(THREADS_ENV, THREADS_ENV, f"'{threads}' is not an integer")
    return max(threads, 1)


def title(name):
    return CONFIGURATIONS[name]["title"] if name in CONFIGURATIONS else name
