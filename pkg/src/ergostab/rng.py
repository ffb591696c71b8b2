"""Counter-based random streams.

Every stochastic component of an experiment owns an RngStream keyed by
(master_seed, stream_id).  Philox is counter-based, so the emitted sequence
is a pure function of the key and the draw counter; distinct stream ids give
statistically independent streams.  This is what makes ensembles and sweeps
reproducible regardless of worker count or scheduling order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at counter zero for this stream."""
        key = np.array([self.master_seed & _MASK64, self.stream_id & _MASK64],
                       dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, offset: int) -> "RngStream":
        """Derived stream; offsets must be unique within a caller's scope."""
        return RngStream(self.master_seed, (self.stream_id + offset) & _MASK64)


def substream_id(*indices: int, strides: tuple[int, ...] = ()) -> int:
    """Pack a small index tuple into a single stream id.

    Used by scans and pair protocols so each (cell, init) owns its own
    stream without collisions: id = i0 + i1*s0 + i2*s0*s1 + ...
    """
    if not strides:
        strides = (1 << 20,) * (len(indices) - 1)
    sid = 0
    mult = 1
    for k, idx in enumerate(indices):
        sid += idx * mult
        if k < len(strides):
            mult *= strides[k]
    return sid & _MASK64
