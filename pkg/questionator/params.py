import zlib

import numpy as np

from .autograd import Tensor
from .errors import ContractError


def tensor_rng(seed, name):
    """Generator dedicated to one named tensor of one run."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


class ModelParams:
    """Named map of the trainable tensors of a model.

    Iteration is always in lexicographic name order, which fixes the order of
    every reduction over parameters (gradient norms, averaging, checkpoints)."""

    def __init__(self, tensors=None):
        self._tensors = {}
        for name, t in (tensors or {}).items():
            self[name] = t

    def __getitem__(self, name):
        return self._tensors[name]

    def __setitem__(self, name, t):
        if not isinstance(t, Tensor):
            t = Tensor(t)
        t.requires_grad = True
        t.name = name
        self._tensors[name] = t

    def __contains__(self, name):
        return name in self._tensors

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return sorted(self._tensors)

    def items(self):
        return [(name, self._tensors[name]) for name in self.names()]

    def tensors(self):
        return [self._tensors[name] for name in self.names()]

    def zero_grad(self):
        for t in self._tensors.values():
            t.zero_grad()

    def snapshot(self):
        """Read-only copies of the current values, safe to share between threads."""
        arrays = {}
        for name, t in self.items():
            value = t.values.copy()
            value.flags.writeable = False
            arrays[name] = value
        return arrays

    def assign(self, arrays):
        """Overwrite the values of existing tensors from a name -> array map."""
        if set(arrays) != set(self._tensors):
            missing = sorted(set(self._tensors) - set(arrays))
            extra = sorted(set(arrays) - set(self._tensors))
            raise ContractError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for name, t in self.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != t.shape:
                raise ContractError(f"tensor '{name}' has shape {value.shape}, expected {t.shape}")
            t.values = value.copy()

    @classmethod
    def from_arrays(cls, arrays):
        return cls({name: Tensor(np.array(arrays[name], dtype=np.float64)) for name in sorted(arrays)})

    @classmethod
    def initialise(cls, shapes, seed):
        """Glorot-uniform weights and zero biases, one generator per tensor name.

        A weight of shape (fan_in, fan_out) is drawn from [-a, a] with
        a = sqrt(6 / (fan_in + fan_out)); vectors count as (n, 1)."""
        params = cls()
        for name in sorted(shapes):
            shape = tuple(shapes[name])
            if name.endswith(".b"):
                params[name] = np.zeros(shape)
            else:
                fan_in, fan_out = shape if len(shape) == 2 else (int(np.prod(shape)), 1)
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                params[name] = tensor_rng(seed, name).uniform(-limit, limit, size=shape)
        return params
