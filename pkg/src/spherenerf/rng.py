"""Counter-based random streams.

Every random draw in the package is addressed by (seed, stream, *counters)
rather than by consuming a shared generator, so parallel or reordered
schedules reproduce the serial results bit for bit.
"""

import numpy as np

# Stream ids. Keep values stable: they are part of the reproducibility
# contract (changing one changes every seeded run).
STREAM_INIT = 0
STREAM_SPHERE_DRAW = 1
STREAM_PIXEL_BATCH = 2
STREAM_JITTER = 3
STREAM_CAMERA_RIG = 4


def stream(seed: int, stream_id: int, *counters: int) -> np.random.Generator:
    """Return a fresh generator keyed by (seed, stream_id, counters)."""
    return np.random.default_rng(np.random.SeedSequence((seed, stream_id) + counters))
