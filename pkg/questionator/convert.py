"""Conversion of the parallel-file release of sentence-level question data.

A split `<prefix>` consists of line-aligned, space-tokenised files:

    <prefix>.source.txt   source sentences
    <prefix>.target.txt   reference questions
    <prefix>.bio          answer span as one B/I/O tag per source token
    <prefix>.pos          POS tag per source token
    <prefix>.ner          NER tag per source token

and is written as JSON-lines records with the fields of schema/triple.json.
"""

import json
import pathlib

from . import root_logger
from .errors import ParseError

SUFFIXES = {
    "sentence": ".source.txt",
    "question": ".target.txt",
    "bio": ".bio",
    "pos": ".pos",
    "ner": ".ner",
}


def answer_span(tags, path, lineno):
    """(start, end) of the first B-led run of I tags."""
    tags = [t.split("-", 1)[0].upper() for t in tags]
    if "B" not in tags:
        raise ParseError(path, lineno, "no answer span (no B tag)")
    start = tags.index("B")
    end = start + 1
    while end < len(tags) and tags[end] == "I":
        end += 1
    return start, end


def split_files(prefix):
    prefix = str(prefix)
    files = {key: pathlib.Path(prefix + suffix) for key, suffix in SUFFIXES.items()}
    for path in files.values():
        if not path.is_file():
            raise FileNotFoundError(f"The split file '{path}' does not exist")
    return files


def convert(prefix, output):
    """Write the split at `prefix` to the JSON-lines file `output`; returns the record count."""
    files = split_files(prefix)
    columns = {key: path.read_text().rstrip("\n").split("\n") for key, path in files.items()}
    lengths = {key: len(lines) for key, lines in columns.items()}
    if len(set(lengths.values())) != 1:
        raise ParseError(files["sentence"], 0, f"split files are not line aligned: {lengths}")

    count = 0
    output = pathlib.Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    with output.open("w") as out:
        for index in range(lengths["sentence"]):
            lineno = index + 1
            fields = {key: columns[key][index].split() for key in columns}
            sentence = fields["sentence"]
            for key in ("bio", "pos", "ner"):
                if len(fields[key]) != len(sentence):
                    raise ParseError(
                        files[key], lineno, f"{len(fields[key])} tags for a sentence of {len(sentence)} tokens"
                    )
            start, end = answer_span(fields["bio"], files["bio"], lineno)
            record = {
                "sentence": sentence,
                "pos": fields["pos"],
                "ner": fields["ner"],
                "answer_start": start,
                "answer_end": end,
                "question": fields["question"],
            }
            out.write(json.dumps(record) + "\n")
            count += 1
    root_logger.info(f"converted {count} records from {prefix} to {output}")
    return count
