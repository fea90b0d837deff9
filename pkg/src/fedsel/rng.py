"""Seed-splitting helpers.

All randomness flows through numpy's PCG64 bit generator.  A master seed is
split into independent named streams by seeding ``SeedSequence`` with the
pair ``(master_seed, crc32(label))``; changing which policy runs therefore
cannot perturb the data or device streams.  The construction is documented
here so an independent reimplementation can reproduce every draw.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_seed(master_seed: int, label: str) -> np.random.SeedSequence:
    """Derive the seed sequence for the named stream of a master seed."""
    return np.random.SeedSequence([int(master_seed), zlib.crc32(label.encode("utf-8"))])


def stream_rng(master_seed: int, label: str) -> np.random.Generator:
    """Generator for the named stream (PCG64)."""
    return np.random.Generator(np.random.PCG64(stream_seed(master_seed, label)))


def keyed_rng(*key: int) -> np.random.Generator:
    """Generator keyed by an integer tuple, e.g. (run_seed, client_id, round)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in key])))


def stream_int(master_seed: int, label: str) -> int:
    """Single 32-bit seed for the named stream."""
    return int(stream_seed(master_seed, label).generate_state(1, np.uint32)[0])


def derive_int(*key: int) -> int:
    """Collapse an integer key tuple into a single reproducible 32-bit seed."""
    seq = np.random.SeedSequence([int(k) for k in key])
    return int(seq.generate_state(1, np.uint32)[0])
