"""Deterministic pseudo-random streams: SplitMix64 seeding, xoshiro256++ output.

These generators are fixed by contract so that initial velocity fields are
reproducible bit-for-bit from a recorded 64-bit seed, independently of the
numpy version in use.  Uniform doubles are built from the top 53 bits.
"""

_MASK = (1 << 64) - 1


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK


class SplitMix64:
    """Seed expander; also a usable generator on its own."""

    def __init__(self, seed):
        self.state = seed & _MASK

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)


class Xoshiro256pp:
    """xoshiro256++ with state derived from a SplitMix64 stream."""

    def __init__(self, seed):
        sm = SplitMix64(seed)
        self.s = [sm.next_u64() for _ in range(4)]

    def next_u64(self):
        s = self.s
        result = (_rotl((s[0] + s[3]) & _MASK, 23) + s[0]) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self):
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


def component_streams(seed, count):
    """Independent xoshiro256++ streams, one per field component plus extras.

    Stream ``i`` is seeded with the ``i``-th output of a SplitMix64 run on
    ``seed``, which is the documented convention for initial-condition
    generation.
    """
    sm = SplitMix64(seed)
    return [Xoshiro256pp(sm.next_u64()) for _ in range(count)]
