"""Counter-based seed derivation.

Every source of randomness in the package is keyed by a root seed plus an
integer path, so adding realizations, corpus images, or augmentations never
reshuffles the draws of earlier ones.  Stream tags keep independent uses of
the same root seed from colliding.
"""

from __future__ import annotations

import numpy as np

REALIZATION = 0
CORPUS_IMAGE = 1
AUGMENTATION = 2
MODEL_RANDOMIZATION = 3
SYNTH_IMAGE = 4


def derive_seed(root: int, *path: int) -> int:
    """Derive a 64-bit child seed from ``root`` and an integer path."""
    seq = np.random.SeedSequence(root, spawn_key=tuple(path))
    return int(seq.generate_state(1, np.uint64)[0])
