"""Deterministic seed derivation.

Every stochastic stage (data generation, SMOTE, splitting, weight init,
minibatch shuffling, bootstrap resampling) consumes its own seed, derived by
mixing the experiment master seed with small integer tags. Adding trials,
proportions, or ensemble members therefore never perturbs the randomness of
earlier cells, and results are independent of execution order.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1

# Domain tags, one per randomness consumer.
TAG_DATA = 1
TAG_SMOTE = 2
TAG_SPLIT = 3
TAG_INIT = 4
TAG_SHUFFLE = 5
TAG_BOOTSTRAP = 6


def mix64(*parts: int) -> int:
    """Fold integers into a single 64-bit seed.

    Applies the splitmix64 finalizer once per part, so any change to any part
    (including the number of parts) yields an unrelated output.
    """
    acc = 0x9E3779B97F4A7C15
    for part in parts:
        acc = (acc ^ (int(part) & _MASK64)) & _MASK64
        acc = (acc * 0xBF58476D1CE4E5B9) & _MASK64
        acc ^= acc >> 27
        acc = (acc * 0x94D049BB133111EB) & _MASK64
        acc ^= acc >> 31
    return acc
