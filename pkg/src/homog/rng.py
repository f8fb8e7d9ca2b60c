"""Counter-based random streams for reproducible parallel Monte Carlo.

Every random quantity in the package is drawn from a Philox generator keyed
by (seed, stream index, purpose).  Philox is counter-based, so streams are
independent by key and the values a sample receives never depend on how
samples are scheduled across workers: results are bit-identical for a fixed
seed regardless of worker count.

Two access patterns:

* ``stream(seed, index, purpose)`` -- one generator per sample index, for
  samples that consume a variable or per-path amount of randomness
  (Gaussian increments, rejection sampling).
* ``initial_uniforms(seed, count, purpose)`` -- a block of one-value-per-
  sample draws (initial conditions).  The block is generated before any
  parallel phase from a single keyed stream; slot i belongs to sample i.
"""

from __future__ import annotations

import numpy as np

# Purpose tags are baked into the Philox key so that distinct uses of the
# same (seed, sample) pair never overlap.
_PURPOSES = {
    "init": 1,        # initial conditions on the fast space
    "em": 2,          # Euler-Maruyama Gaussian increments
    "fiber": 3,       # suspension-flow initial states (x, u)
    "bootstrap": 4,   # bootstrap resampling
    "selftest": 5,    # synthetic known-good samplers
    "scratch": 6,
}

_MAX_INDEX = 1 << 48


def purpose_id(purpose: str) -> int:
    try:
        return _PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"unknown RNG purpose {purpose!r}; known: {sorted(_PURPOSES)}")


def _key(seed: int, index: int, purpose: str) -> np.ndarray:
    if not 0 <= index < _MAX_INDEX:
        raise ValueError(f"stream index {index} outside [0, 2**48)")
    pid = purpose_id(purpose)
    word = (np.uint64(pid) << np.uint64(48)) | np.uint64(index)
    return np.array([np.uint64(seed) & np.uint64(0xFFFFFFFFFFFFFFFF), word], dtype=np.uint64)


def stream(seed: int, index: int, purpose: str) -> np.random.Generator:
    """Independent generator for one sample index and purpose."""
    return np.random.Generator(np.random.Philox(key=_key(seed, index, purpose)))


def block_stream(seed: int, purpose: str) -> np.random.Generator:
    """Generator for block draws made before the parallel phase."""
    return stream(seed, _MAX_INDEX - 1, purpose)


def initial_uniforms(
    seed: int, count: int, purpose: str = "init", lo: float = 0.0, hi: float = 1.0
) -> np.ndarray:
    """Block of per-sample uniform draws on [lo, hi); slot i is sample i's."""
    g = block_stream(seed, purpose)
    return lo + (hi - lo) * g.random(count)
