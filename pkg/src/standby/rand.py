"""Deterministic derivation of independent random streams.

Every stochastic entry point takes either an explicit numpy Generator or a
master seed. Substreams are derived from (master seed, path), so adding or
reordering one consumer never shifts the draws seen by another, and any
recorded (seed, path) pair replays exactly.

Reserved path roots used by this package:

    "train", <algorithm>, <budget>    training scenario coins
    "train-pool", <algorithm>, <budget>   pool dropout coins (extensions)
    "eval"                            evaluation scenario coins
    "perturb", <gamma idx>, <rep>     probability perturbations
    "synth"                           instance generation
    "fixture", ...                    test fixtures

Callers needing parallelism derive one substream per task from the master
seed with a distinct path; streams are statistically independent.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFF


def substream(seed: int, *path) -> np.random.Generator:
    """Generator for the substream identified by (seed, *path)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.default_rng(ss)
