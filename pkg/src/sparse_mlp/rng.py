"""Deterministic, platform-independent random number generation.

The generator is splitmix64 (Steele et al., the standard finalizer constants),
which maps a 64-bit state to a 64-bit output and advances the state by a fixed
odd increment.  All derived streams are defined exactly:

- uniform in [0, 1):   (out >> 11) * 2^-53
- uniform in (0, 1]:   ((out >> 11) + 1) * 2^-53
- gaussian:            Box-Muller on one (0,1] and one [0,1) uniform,
                       z0 = sqrt(-2 ln u1) cos(2 pi u2),
                       z1 = sqrt(-2 ln u1) sin(2 pi u2);
                       each fill consumes whole pairs and discards the spare
                       z1 when an odd number of samples is requested.

Identical seeds therefore produce identical sample streams on every platform
and under both kernel backends (the compiled backend implements the same
integer and floating-point sequence).
"""

from array import array

from . import backend

MASK64 = (1 << 64) - 1


def splitmix64_next(state: int) -> tuple[int, int]:
    """One splitmix64 step; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


class Rng:
    """Seeded stream of uniforms, gaussians and bounded ints."""

    def __init__(self, seed: int):
        if not 0 <= seed <= MASK64:
            raise ValueError("seed must fit in 64 bits")
        self.state = seed

    def uniform(self, n: int) -> array:
        """n uniforms in [0, 1)."""
        out = array("d", bytes(8 * n))
        self.state = backend.active.fill_uniform(self.state, n, out)
        return out

    def gaussian(self, n: int) -> array:
        """n standard gaussians via Box-Muller."""
        out = array("d", bytes(8 * n))
        self.state = backend.active.fill_gaussian(self.state, n, out)
        return out

    def randbelow(self, bound: int) -> int:
        """Uniform int in [0, bound) by rejection on the top 64-bit range."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = MASK64 - (MASK64 + 1) % bound
        while True:
            self.state, z = splitmix64_next(self.state)
            if z <= limit:
                return z % bound

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates using randbelow."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def fork(self) -> "Rng":
        """Child generator seeded from this stream (advances this stream)."""
        self.state, z = splitmix64_next(self.state)
        return Rng(z)
