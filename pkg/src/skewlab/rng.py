"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by
(seed, domain string, stream index). Streams are independent of execution
order and of how work is split across processes, which is what makes
fixed-seed runs byte-identical regardless of the worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Samples are partitioned into fixed-size chunks; chunk index = stream index.
# The chunk size is a protocol constant: changing it changes sampled values.
CHUNK = 4096


def _domain_tag(domain: str) -> int:
    digest = hashlib.sha256(domain.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, domain: str, index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, domain, index)."""
    if index < 0:
        raise ValueError("stream index must be nonnegative")
    key = np.array(
        [np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(_domain_tag(domain) ^ index)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def chunk_ranges(total: int, size: int = CHUNK) -> list[tuple[int, int, int]]:
    """Fixed partition of range(total): list of (chunk_index, start, stop)."""
    out = []
    idx = 0
    start = 0
    while start < total:
        stop = min(start + size, total)
        out.append((idx, start, stop))
        idx += 1
        start = stop
    return out
