"""Deterministic, partition-stable random streams.

Monte Carlo work is split into fixed-size chunks; each chunk gets its own
counter-based Philox stream derived from (seed, domain, key..., chunk
index).  Results are therefore byte-identical however the chunks are
scheduled, and tables built lazily in any order come out the same as
tables built up front.
"""

from __future__ import annotations

import numpy as np

# Domain codes keep streams for different artifact kinds disjoint.
DOMAIN_COUNT_TABLE = 0
DOMAIN_RATE_TABLE = 1
DOMAIN_ASYMPTOTE = 2
DOMAIN_SURFACE = 3
DOMAIN_STUDY = 4

TEST_CODES = {"ks": 0, "pcs": 1, "slss": 2, "oi": 3}


def stream(seed: int, domain: int, *key: int) -> np.random.Generator:
    """A Philox generator for one (seed, domain, key) cell."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(domain),) + tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def chunk_sizes(total: int, chunk: int) -> list[int]:
    """Partition ``total`` trials into fixed chunks (last one may be short)."""
    if total <= 0:
        return []
    full, rem = divmod(total, chunk)
    return [chunk] * full + ([rem] if rem else [])


def trials_chunk(m: int) -> int:
    """Trials per chunk, scaled down for large m to bound chunk memory."""
    return int(min(65536, max(512, (1 << 22) // max(int(m), 1))))
