"""Counter-based pseudo-random streams.

Reproducibility contract: a :class:`RandomStream` is a value type identified
by (seed, stream_id). Drawing from it always restarts the underlying Philox
generator, so the same stream yields the same sequence no matter when, where,
or on which thread it is consumed. Distinct stream_ids select distinct Philox
keys and are statistically independent, which lets K sampling trajectories or
n dataset rows each own a derived stream and still reproduce bit-identically
under any execution order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15  # splitmix64 increment


def _mix64(z: int) -> int:
    """splitmix64 finalizer: a bijective avalanche over 64-bit ints."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class RandomStream:
    """Immutable handle for one reproducible random sequence."""

    seed: int
    stream_id: int = 0

    def derive(self, *indices: int) -> "RandomStream":
        """Child stream folding integer indices into the stream id.

        Derivation is deterministic and collision-resistant via splitmix64
        mixing, so derive(3, 7) and derive(37) map to unrelated streams.
        """
        sid = self.stream_id & _MASK64
        for ix in indices:
            sid = _mix64(sid ^ _mix64((int(ix) + _GAMMA) & _MASK64))
        return RandomStream(seed=self.seed, stream_id=sid)

    def generator(self) -> np.random.Generator:
        """Fresh Philox generator keyed by (seed, stream_id)."""
        key = np.array(
            [_mix64(self.seed), self.stream_id & _MASK64], dtype=np.uint64
        )
        return np.random.Generator(np.random.Philox(key=key))

    def normal(self, n: int) -> np.ndarray:
        return gaussian_draw(self, n)


def gaussian_draw(stream: RandomStream, n: int) -> np.ndarray:
    """n standard-normal draws; replaying the same stream replays the output."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return stream.generator().standard_normal(n)
