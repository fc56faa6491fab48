"""Deterministic random-number streams for reproducible Monte Carlo runs.

Every stochastic routine in this package draws from an :class:`RngStream`, a
frozen handle identified by ``(seed, stream_id)`` plus an optional child path.
The same handle always yields bit-identical draws, and child streams derived
with :meth:`RngStream.child` are statistically independent of their parent and
siblings. Parallel code partitions work into a fixed chunk layout, gives each
chunk its own child stream, and writes results by chunk index, so the output
is independent of the worker count.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Master seed used by the CLI and the synthetic studies when none is given.
DEFAULT_SEED = 1853


@dataclass(frozen=True)
class RngStream:
    """Handle for a reproducible random stream.

    Parameters
    ----------
    seed:
        Master seed for the run.
    stream_id:
        Integer sub-stream selector; distinct ids give independent streams
        under the same seed.
    path:
        Further branching keys appended by :meth:`child`. Rarely constructed
        directly.
    """

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = field(default=())

    def generator(self) -> np.random.Generator:
        """Fresh PCG64 generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self.path))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys: int) -> "RngStream":
        """Derive an independent child stream keyed by ``keys``."""
        return RngStream(self.seed, self.stream_id, self.path + tuple(int(k) for k in keys))
