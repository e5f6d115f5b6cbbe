"""Deterministic seed derivation.

One root seed expands into independent sub-seeds (model init, shuffle,
augmentation, adapters, synthetic data) through a splitmix64-style mix, so
adding or removing one consumer never shifts another's stream.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive(root: int, label: str) -> int:
    """Sub-seed for a named consumer; folds each label byte into the state."""
    h = root & _MASK
    for b in label.encode("utf-8"):
        h = splitmix64(h ^ b)
    return h


def derive_epoch(seed: int, epoch: int) -> int:
    """Per-epoch stream seed (shuffle order, augmentation draws)."""
    return splitmix64((seed ^ (epoch + 1) * 0x9E3779B97F4A7C15) & _MASK)
