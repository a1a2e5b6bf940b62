"""Seeded random streams.

Every run consumes one Philox-4x64 stream (a counter-based generator) keyed
by its 64-bit seed. Replication ``i`` of a study with master seed ``s`` uses
key ``s + i``; keys never collide within a study, and Philox streams with
distinct keys are independent. Within a run the stream is consumed in a
fixed order: period by period, customer index by customer index, exactly one
uniform per customer per period.
"""

from __future__ import annotations

import numpy as np

U64 = 2**64


def make_rng(seed: int) -> np.random.Generator:
    seed = int(seed)
    if not 0 <= seed < U64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.Philox(key=seed))


def instance_rng(seed: int) -> np.random.Generator:
    """Stream for drawing a replication's random instance.

    Same key as the replication's simulation stream, jumped 2^128 draws ahead,
    so instance parameters and purchase uniforms never overlap.
    """
    seed = int(seed)
    if not 0 <= seed < U64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.Philox(key=seed).jumped())


def replication_seed(master_seed: int, index: int) -> int:
    return (int(master_seed) + int(index)) % U64
