"""Named, seedable and splittable random streams.

Every stream is a 64-bit counter-based Philox generator keyed by ``(seed, crc32(name))``,
so two components never share a stream and a stream can be saved and resumed exactly.
"""
import zlib

import numpy as np

from bgdepth.exceptions import CheckpointError


def make_rng(seed: int, name: str = "") -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(key,))))


def rng_state(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of ``rng``."""
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "counter": [int(v) for v in state["state"]["counter"]],
        "key": [int(v) for v in state["state"]["key"]],
        "buffer": [int(v) for v in state["buffer"]],
        "buffer_pos": int(state["buffer_pos"]),
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def restore_rng(snapshot: dict) -> np.random.Generator:
    if snapshot.get("bit_generator") != "Philox":
        raise CheckpointError(f"Unsupported random stream {snapshot.get('bit_generator')!r}")
    bit_generator = np.random.Philox()
    bit_generator.state = {
        "bit_generator": "Philox",
        "state": {
            "counter": np.array(snapshot["counter"], dtype=np.uint64),
            "key": np.array(snapshot["key"], dtype=np.uint64),
        },
        "buffer": np.array(snapshot["buffer"], dtype=np.uint64),
        "buffer_pos": snapshot["buffer_pos"],
        "has_uint32": snapshot["has_uint32"],
        "uinteger": snapshot["uinteger"],
    }
    return np.random.Generator(bit_generator)
