import hashlib
import pathlib
import struct

import numpy as np

from . import root_logger
from .errors import ContractError

# file layout:
#   b"QGCK" + u32 version
#   per tensor, names sorted: u64 name length, utf-8 name, u64 rank,
#   rank x u64 dims, values as little-endian float64
MAGIC = b"QGCK"
FORMAT_VERSION = 1

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def encode(arrays):
    chunks = [MAGIC, _U32.pack(FORMAT_VERSION)]
    for name in sorted(arrays):
        value = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw_name = name.encode("utf-8")
        chunks.append(_U64.pack(len(raw_name)))
        chunks.append(raw_name)
        chunks.append(_U64.pack(value.ndim))
        chunks.extend(_U64.pack(d) for d in value.shape)
        chunks.append(value.tobytes())
    return b"".join(chunks)


def decode(data, source="<bytes>"):
    if len(data) < 8 or data[:4] != MAGIC:
        raise ContractError(f"{source} is not a questionator checkpoint")
    (version,) = _U32.unpack_from(data, 4)
    if version != FORMAT_VERSION:
        raise ContractError(f"{source} has checkpoint format version {version}, expected {FORMAT_VERSION}")

    arrays = {}
    offset = 8
    try:
        while offset < len(data):
            (length,) = _U64.unpack_from(data, offset)
            offset += 8
            name = data[offset : offset + length].decode("utf-8")
            offset += length
            (rank,) = _U64.unpack_from(data, offset)
            offset += 8
            shape = tuple(_U64.unpack_from(data, offset + 8 * i)[0] for i in range(rank))
            offset += 8 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if offset + 8 * count > len(data):
                raise ContractError(f"{source} is truncated in tensor '{name}'")
            arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
            offset += 8 * count
    except (struct.error, UnicodeDecodeError) as e:
        raise ContractError(f"{source} is malformed at byte {offset}: {e}")
    return arrays


def save(path, arrays):
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(encode(arrays))
    root_logger.debug(f"wrote checkpoint {path} ({len(arrays)} tensors)")
    return path


def load(path):
    path = pathlib.Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"The checkpoint '{path}' does not exist")
    return decode(path.read_bytes(), source=str(path))


def digest(arrays):
    """Content hash of a set of tensors, used to order checkpoints without steps."""
    return hashlib.sha256(encode(arrays)).hexdigest()
