"""Seed-stream derivation.

Two kinds of randomness are used:

* ordinary numpy ``Generator`` streams, keyed by (master seed, replica, role),
  for flat sampling tasks;
* a counter-based hash for branching trees: every individual carries a 64-bit
  key and the randomness of its offspring is a pure function of that key and the
  child index. Any traversal order, horizon or batching of replicas therefore
  sees the very same tree.
"""
from __future__ import annotations

import numpy as np

ROLES = {"pairs": 0, "tree": 1, "overshoot": 2, "ladder": 3, "leftmost": 4}

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# salts separating the three per-child hashes
XI, ETA, CHILD = np.uint64(0x51ED27), np.uint64(0xA3C59AC3), np.uint64(0x2545F491)


def stream(master_seed: int, replica: int = 0, role: str = "pairs") -> np.random.Generator:
    """Independent generator for ``(master_seed, replica, role)``."""
    ss = np.random.SeedSequence(int(master_seed) % 2**64, spawn_key=(int(replica), ROLES[role]))
    return np.random.Generator(np.random.PCG64(ss))


def tree_key(master_seed: int, replica: int) -> int:
    """Root key of replica ``replica``'s tree."""
    ss = np.random.SeedSequence(int(master_seed) % 2**64, spawn_key=(int(replica), ROLES["tree"]))
    return int(ss.generate_state(1, np.uint64)[0])


def key_from(rng) -> int:
    """Accept a root key, a Generator, or None (fresh entropy) and return a root key."""
    if isinstance(rng, (int, np.integer)):
        return int(rng) % 2**64
    if rng is None:
        rng = np.random.default_rng()
    return int(rng.integers(0, 2**63, dtype=np.int64))


def splitmix(x: np.ndarray) -> np.ndarray:
    z = x + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def mix(keys: np.ndarray, idx: np.ndarray, salt: np.uint64) -> np.ndarray:
    """Hash of (key, index, salt); broadcasts ``keys[:, None]`` against ``idx[None, :]``."""
    with np.errstate(over="ignore"):
        return splitmix(splitmix(keys ^ salt) + idx.astype(np.uint64) * _M2)


def to_uniform(bits: np.ndarray) -> np.ndarray:
    """Map 64 random bits to a float in the open interval (0, 1)."""
    return ((bits >> _S11).astype(np.float64) + 0.5) * _INV53
