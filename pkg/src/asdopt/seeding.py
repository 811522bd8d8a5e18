"""Counter-based seed derivation.

Every random stream is addressed by a path of integers below the master
seed, e.g. ``(scenario, method, replication)`` for a run and then
``(stream, counter)`` inside the run. ``numpy.random.SeedSequence`` hashes
the path, so results do not depend on execution order or worker count.
"""

from __future__ import annotations

import hashlib
import struct
import zlib

import numpy as np

STREAMS = {
    "init": 0,
    "search": 1,
    "validation": 2,
    "calibration": 3,
    "surrogate": 4,
    "proposal": 5,
    "snap_validation": 6,
    "revalidation": 7,
}

DERIVATION = (
    "seed = SeedSequence(entropy=parent, spawn_key=path).generate_state(1, uint64)[0] >> 1; "
    "run path = (crc32(scenario name), method code, replication); "
    "evaluation path = (stream code, counter)"
)


def derive_seed(parent: int, *path: int) -> int:
    ss = np.random.SeedSequence(int(parent), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def stream_seed(run_seed: int, stream: str, counter: int) -> int:
    return derive_seed(run_seed, STREAMS[stream], counter)


def stream_rng(run_seed: int, stream: str, counter: int = 0) -> np.random.Generator:
    return np.random.default_rng(stream_seed(run_seed, stream, counter))


def name_code(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def float_key(*values) -> int:
    """Stable integer from the exact bits of the given numbers and strings."""
    h = hashlib.blake2b(digest_size=8)
    for v in values:
        if isinstance(v, str):
            h.update(v.encode("utf-8") + b"\0")
        elif v is None:
            h.update(b"\1none")
        else:
            h.update(struct.pack("<d", float(v)))
    return int.from_bytes(h.digest(), "little") >> 1
