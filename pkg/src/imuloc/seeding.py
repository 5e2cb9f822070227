"""Deterministic RNG derivation.

Every random draw in the package comes from a Generator built here, keyed
by the run seed plus small integer purpose codes. Python's salted hash()
is never used, so streams are stable across processes.
"""
from __future__ import annotations

import numpy as np

# Purpose codes. Never reorder or reuse; append only.
SCENE = 1
SCRIPT = 2
TRAJECTORY = 3
IMU = 4
PATCH = 5
SEMANTIC_TABLE = 6
IMAGE_EMBED = 7
ENCODER_INIT = 8
STAGE1_TRAIN = 9
STAGE2_INIT = 10
STAGE2_TRAIN = 11
VELOCITY_INIT = 12
VELOCITY_TRAIN = 13
CHANCE_MC = 14
PARTICIPANT = 15


def rng(*keys: int) -> np.random.Generator:
    """PCG64 generator keyed by a tuple of non-negative integers."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(keys))))
