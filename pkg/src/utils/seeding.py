"""
Deterministic seed derivation shared by training and synthesis
"""
import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, index: int) -> int:
    """splitmix64 finaliser applied to seed XOR index"""
    z = ((int(seed) ^ int(index)) + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derived_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, index))
