"""Self-contained 64-bit PRNG used where bit reproducibility is part of the
file contract (sampling masks).

The generator is xorshift64* with the standard constants:

    state ^= state >> 12
    state ^= state << 25
    state ^= state >> 27
    output = (state * 0x2545F4914F6CDD1D) mod 2^64

Seeds are diffused once through splitmix64 so that small consecutive seeds
yield unrelated streams, and a zero state is impossible.
"""

_MASK64 = (1 << 64) - 1
_XORSHIFT_MULT = 0x2545F4914F6CDD1D
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    x = (x + _SPLITMIX_GAMMA) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class Xorshift64Star:
    """Deterministic uniform generator; same seed gives the same stream on
    every platform (pure integer arithmetic, no libm)."""

    def __init__(self, seed: int):
        state = _splitmix64(seed & _MASK64)
        self._state = state if state != 0 else _SPLITMIX_GAMMA

    def next_u64(self) -> int:
        s = self._state
        s ^= s >> 12
        s = (s ^ (s << 25)) & _MASK64
        s ^= s >> 27
        self._state = s
        return (s * _XORSHIFT_MULT) & _MASK64

    def uniform(self) -> float:
        """One double in [0, 1) using the top 53 bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniforms(self, n: int) -> list:
        return [self.uniform() for _ in range(n)]
