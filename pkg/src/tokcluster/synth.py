"""Seeded synthetic token features for desk-scale benchmarking.

Stands in for backbone activations: multi-octave value noise gives spatially
smooth fields whose roughness is controlled by the octave count, which is what
the clustering fidelity properties care about. ``octaves=0`` degenerates to
per-token white noise. Every channel is normalized to zero mean / unit
variance over tokens, and generation is bit-deterministic per seed.
"""

from __future__ import annotations

import numpy as np

from .grid import ParameterError, TokenGrid, resize_array_bilinear


def generate_synthetic_tokens(
    seed: int, height_t: int, width_t: int, channels: int, octaves: int = 4
) -> TokenGrid:
    """Value noise summed over ``octaves`` spatial frequencies, channel-normalized.

    Octave ``o`` draws a random lattice of side ``2**(o+1) + 1`` per channel and
    bilinearly upsamples it to the token grid; octaves contribute with equal
    weight, so a higher octave count means proportionally more fine-scale
    structure.
    """
    if height_t < 1 or width_t < 1 or channels < 1:
        raise ParameterError("grid dims and channels must be >= 1")
    if octaves < 0:
        raise ParameterError(f"octaves must be >= 0, got {octaves}")
    rng = np.random.default_rng(seed)

    if octaves == 0:
        field = rng.standard_normal((height_t, width_t, channels))
    else:
        field = np.zeros((height_t, width_t, channels), dtype=np.float64)
        for o in range(octaves):
            side = 2 ** (o + 1) + 1
            lattice = rng.standard_normal((side, side, channels))
            up = resize_array_bilinear(
                lattice.astype(np.float32), height_t, width_t, align_corners=True
            )
            field += up.astype(np.float64)

    mean = field.reshape(-1, channels).mean(axis=0)
    std = field.reshape(-1, channels).std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    normed = (field - mean) / std
    return TokenGrid(normed.astype(np.float32))
