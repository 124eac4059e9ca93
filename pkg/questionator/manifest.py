import hashlib
import json
import pathlib
import platform
import sys
import time
from datetime import datetime

from . import VERSION, root_logger
from .errors import ContractError


def blob_hash(path):
    """Git-style content hash of a file: sha1 of 'blob <size>\\0' followed by the bytes."""
    data = pathlib.Path(path).read_bytes()
    h = hashlib.sha1(f"blob {len(data)}\0".encode("utf-8"))
    h.update(data)
    return h.hexdigest()


class RunManifest:
    """Record of one command invocation: configuration, inputs, outputs and timings.

    Every output is registered exactly once."""

    def __init__(self, command, config=None, seed=None):
        self._logger = root_logger
        self.command = command
        self.config = config
        self.seed = seed
        self.inputs = {}
        self.outputs = []
        self.timings = {}
        self._started = time.perf_counter()
        self.meta = self._meta()

    @staticmethod
    def _meta():
        host = platform.uname()
        return {
            "time": datetime.now().strftime("%Y%m%d %H:%M:%S"),
            "host": {
                "machine": host.machine,
                "node": host.node,
                "system": host.system,
                "release": host.release,
            },
            "questionator": {
                "version": VERSION,
                "args": sys.argv,
                "python": sys.executable,
            },
        }

    def add_input(self, path):
        if path is None:
            return
        path = pathlib.Path(path)
        self.inputs[str(path)] = blob_hash(path)

    def add_output(self, path):
        path = str(path)
        if path in self.outputs:
            raise ContractError(f"output '{path}' is already recorded in the manifest")
        self.outputs.append(path)

    def timed(self, name):
        return _Timer(self.timings, name)

    def to_dict(self):
        return {
            "command": self.command,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "timings": {**self.timings, "total": time.perf_counter() - self._started},
            "meta": self.meta,
        }

    def write(self, path):
        path = pathlib.Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as f:
            f.write(json.dumps(self.to_dict(), sort_keys=True, indent=2, default=str))
        self._logger.info(f"manifest: {path}")
        return path


class _Timer:
    def __init__(self, timings, name):
        self.timings = timings
        self.name = name

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.timings[self.name] = self.timings.get(self.name, 0.0) + time.perf_counter() - self.start
        return False
