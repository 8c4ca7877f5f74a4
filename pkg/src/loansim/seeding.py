"""Deterministic seed derivation.

All randomness in the framework flows from one root seed through named
substreams, so any stage (preprocessing, calibration, sweeps, simulation)
can be re-run independently and still reproduce byte-identical results.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _entropy_of(name: object) -> int:
    digest = hashlib.sha256(str(name).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(root: int, *names: object) -> int:
    """Derive a child seed from a root seed and a path of stream names.

    Stable across processes and platforms: names are hashed with SHA-256
    and folded into a ``numpy.random.SeedSequence``.
    """
    entropy = [int(root)] + [_entropy_of(n) for n in names]
    seq = np.random.SeedSequence(entropy)
    return int(seq.generate_state(1, np.uint64)[0])


def substream(root: int, *names: object) -> np.random.Generator:
    """A ``numpy.random.Generator`` for the named substream of ``root``."""
    return np.random.default_rng(derive_seed(root, *names))


def spawn_seeds(root: int, n: int) -> np.ndarray:
    """``n`` independent uint64 seeds derived from ``root``, one per index.

    Element ``i`` depends only on ``(root, i)``, so consumers indexed by
    position (e.g. trees of an ensemble) can be built in any order.
    """
    return np.random.SeedSequence(int(root)).generate_state(n, np.uint64)
