"""Seeded random streams.

A run is identified by a 64-bit seed.  Work is cut into fixed-size chunks and
chunk ``k`` draws from its own stream keyed by ``(seed, k)``, so the numbers a
chunk sees never depend on how chunks are scheduled across threads.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

SEED_ENV_VAR = "TWO_STAGE_AUCTION_SEED"
DEFAULT_SEED = 20240601


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def stream(seed: int, chunk: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(int(chunk),))
    return np.random.Generator(np.random.PCG64(ss))


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return DEFAULT_SEED
    try:
        return check_seed(int(raw))
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV_VAR}={raw!r} is not a valid seed") from exc


def resolve_threads(threads: int | None) -> int:
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return int(threads)
