"""Seed derivation.

Every random draw in the package flows through a generator created here. A
stream is addressed by an integer key tuple, typically
(base_seed, stage_tag, ...indices..., role), so results never depend on
scheduling or worker count: each episode and role owns its own PCG64 stream.
"""

from __future__ import annotations

import numpy as np

ROLE_DEFENDER = 0
ROLE_ATTACKER = 1
ROLE_ENGINE = 2

# Stage tags keep streams for different purposes disjoint even when the same
# base seed and loop indices appear in several places.
TAG_EPISODE = 11
TAG_TRAIN = 12
TAG_EVAL = 13
TAG_TOURNAMENT = 14
TAG_OPPONENT = 15
TAG_INIT = 16
TAG_FINAL_EVAL = 17
TAG_SHUFFLE = 18

_MASK = (1 << 63) - 1


def normalize_key(seed) -> tuple[int, ...]:
    """Coerce an int or a (possibly nested) iterable of ints into a flat
    non-negative key tuple, so composite seeds like (run_seed, iteration)
    can be passed wherever a seed is accepted."""
    if isinstance(seed, (int, np.integer)):
        return (int(seed) & _MASK,)
    parts: list[int] = []
    for part in seed:
        parts.extend(normalize_key(part))
    return tuple(parts)


def stream(key, role: int | None = None) -> np.random.Generator:
    """Generator for the given key, optionally extended with a role index."""
    parts = normalize_key(key)
    if role is not None:
        parts = parts + (int(role),)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(parts)))


def episode_generators(key):
    """(defender, attacker, engine) generators for one episode key."""
    return (
        stream(key, ROLE_DEFENDER),
        stream(key, ROLE_ATTACKER),
        stream(key, ROLE_ENGINE),
    )
