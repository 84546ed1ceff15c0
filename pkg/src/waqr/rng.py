"""Counter-based random streams.

Every stream is a Philox generator keyed by a tuple of non-negative integers
(for instance ``(seed, rep, stream)``), so the numbers a consumer receives do
not depend on the order in which streams are created or consumed.
"""

import numpy as np

# Stream labels used across the package. Keep them stable: changing a value
# changes every simulated dataset.
STREAM_DATA = 0
STREAM_FOREST = 1
STREAM_TREE_SEED = 2
STREAM_BOOTSTRAP = 3


def stream(*key):
    """Return an independent ``np.random.Generator`` for ``key``."""
    if any(int(k) < 0 for k in key):
        raise ValueError("stream keys must be non-negative integers")
    ss = np.random.SeedSequence([int(k) for k in key])
    return np.random.Generator(np.random.Philox(ss))


def stream_seed(*key):
    """A 31-bit integer seed derived from ``key``, for libraries that take ints."""
    ss = np.random.SeedSequence([int(k) for k in key])
    return int(ss.generate_state(1, dtype=np.uint32)[0] >> 1)
