"""Named, independently seeded random streams for one run."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STREAM_NAMES = ("init", "explore", "replay", "goal", "jitter", "thompson", "proposal", "faults")


@dataclass
class Streams:
    init: np.random.Generator
    explore: np.random.Generator
    replay: np.random.Generator
    goal: np.random.Generator
    jitter: np.random.Generator
    thompson: np.random.Generator
    proposal: np.random.Generator
    faults: np.random.Generator


PRETRAIN, POST_FAULT = 0, 1


def make_streams(seed: int, jitter_stream_id: int = 0, phase: int = PRETRAIN) -> Streams:
    """Each stream gets its own spawn key, so consuming one never shifts another.

    ``phase`` separates pre-training from post-fault training so the two
    never replay the same goal or noise sequence for a seed.
    """
    gens = {}
    for k, name in enumerate(STREAM_NAMES):
        key = (phase, k, jitter_stream_id) if name == "jitter" else (phase, k)
        gens[name] = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))
    return Streams(**gens)
