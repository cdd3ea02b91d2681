"""Binary checkpoint format.

Layout (little-endian)::

    b"BGDC" | u16 version | u32 n | n bytes of config-echo JSON
    u32 count | count x tensor record
    u32 n | n bytes of state JSON (step, epoch, RNG, ...)

A tensor record is ``u16 name length | name | u8 dtype (1 = f32, 2 = f64) | u8 rank |
rank x u32 extents | payload``.
"""
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np
import structlog

from bgdepth.exceptions import CheckpointError, UnknownCheckpointVersionError, UnwritablePathError

logger = structlog.get_logger(__name__)

MAGIC = b"BGDC"
VERSION = 1
DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    config: dict
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    state: dict = field(default_factory=dict)


def _json_block(payload: dict) -> bytes:
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return struct.pack("<I", len(blob)) + blob


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<H", VERSION), _json_block(ckpt.config), struct.pack("<I", len(ckpt.tensors))]
    for name, array in ckpt.tensors.items():
        array = np.asarray(array)
        dtype = array.dtype.newbyteorder("<")
        if dtype not in DTYPE_CODES:
            raise CheckpointError(f"Tensor {name} has unsupported dtype {array.dtype}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<BB", DTYPE_CODES[dtype], array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype=dtype).tobytes())
    parts.append(_json_block(ckpt.state))
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes, source):
        self.blob = blob
        self.offset = 0
        self.source = source

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.blob):
            raise CheckpointError(f"{self.source}: checkpoint is truncated")
        chunk = self.blob[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def json(self) -> dict:
        (size,) = self.unpack("<I")
        try:
            return json.loads(self.take(size).decode("utf-8"))
        except ValueError as e:
            raise CheckpointError(f"{self.source}: corrupt JSON block") from e


def decode_checkpoint(blob: bytes, source="<bytes>") -> Checkpoint:
    reader = _Reader(blob, source)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    (version,) = reader.unpack("<H")
    if version != VERSION:
        raise UnknownCheckpointVersionError(f"{source}: unsupported checkpoint version {version}")
    config = reader.json()
    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<H")
        name = reader.take(name_length).decode("utf-8")
        code, rank = reader.unpack("<BB")
        if code not in CODE_DTYPES:
            raise CheckpointError(f"{source}: tensor {name} has unknown dtype code {code}")
        shape = reader.unpack(f"<{rank}I")
        dtype = CODE_DTYPES[code]
        payload = reader.take(int(np.prod(shape, dtype=np.int64)) * dtype.itemsize)
        tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    state = reader.json()
    if reader.offset != len(blob):
        raise CheckpointError(f"{source}: trailing bytes after checkpoint")
    return Checkpoint(config=config, tensors=tensors, state=state)


def write_checkpoint(path, ckpt: Checkpoint):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_checkpoint(ckpt))
    except OSError as e:
        raise UnwritablePathError(f"Cannot write checkpoint {path}: {e}") from e
    logger.info("Wrote checkpoint", path=str(path), tensors=len(ckpt.tensors))


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    return decode_checkpoint(blob, source=path)
