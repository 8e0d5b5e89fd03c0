"""Counter-based uniform random streams with cheap deterministic extension.

Streams are addressed by integer key tuples. Each logical draw index
consumes exactly ``dim`` 64-bit outputs of a Philox counter, so the block
of draws ``[start, start + count)`` can be produced in O(count) work
without generating or storing anything before ``start``. Extending a
sample set therefore never reshuffles earlier draws, and results do not
depend on how work is split across processes.
"""

from __future__ import annotations

import numpy as np

__all__ = ["substream", "uniform_block"]


def substream(key: tuple[int, ...], *parts: int) -> tuple[int, ...]:
    """Derive a child stream key by appending integer identifiers."""
    out = tuple(int(p) for p in key) + tuple(int(p) for p in parts)
    if any(p < 0 for p in out):
        raise ValueError("stream key parts must be nonnegative integers")
    return out


def uniform_block(
    key: tuple[int, ...], start: int, count: int, dim: int = 1
) -> np.ndarray:
    """Return draws ``[start, start + count)`` of the stream for ``key``.

    Shape ``(count, dim)``, entries uniform on [0, 1). Draw index i
    consumes 64-bit outputs ``[i*dim, (i+1)*dim)`` of one fixed sequence,
    so ``uniform_block(k, 0, a + b, d)`` equals the concatenation of the
    blocks ``(0, a)`` and ``(a, b)``.
    """
    if start < 0 or count < 0:
        raise ValueError("start and count must be nonnegative")
    if dim < 1:
        raise ValueError("dim must be at least 1")
    seq = np.random.SeedSequence([int(p) for p in key])
    bits = np.random.Philox(key=seq.generate_state(2, np.uint64))
    # advance() steps whole counter blocks of 4 outputs; burn the remainder.
    offset = start * dim
    bits.advance(offset // 4)
    gen = np.random.Generator(bits)
    if offset % 4:
        gen.random(offset % 4)
    return gen.random((count, dim))
