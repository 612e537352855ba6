"""Linear memory bytes -> fixed-size grayscale image.

Two deterministic stages:

1. raster: bytes laid out row-major at a fixed width of 256 bytes, the last
   partial row zero-padded (empty memory rasters to a single zero row), and
2. resample: nearest-neighbor down/up-sampling of the raster to ``side`` x
   ``side``, with ``src = floor(dst * src_dim / dst_dim)``.

Intensity is byte/255.  The fixed row width keeps a program's structures
column-aligned across snapshots; nearest-neighbor sampling never blends
neighboring bytes, so corruption artifacts survive resampling unsmeared.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROW_WIDTH = 256
DEFAULT_SIDE = 128


@dataclass(frozen=True)
class MemoryImage:
    side: int
    pixels: np.ndarray  # (side, side) float32 in [0, 1]


def raster_bytes(memory: bytes) -> np.ndarray:
    """Stage 1: (H, 256) uint8 raster with H = max(1, ceil(len/256))."""
    height = max(1, -(-len(memory) // ROW_WIDTH))
    raster = np.zeros(height * ROW_WIDTH, dtype=np.uint8)
    if memory:
        raster[: len(memory)] = np.frombuffer(memory, dtype=np.uint8)
    return raster.reshape(height, ROW_WIDTH)


def sample_raster(raster: np.ndarray, side: int) -> np.ndarray:
    """Stage 2: nearest-neighbor resample to (side, side) uint8."""
    height, width = raster.shape
    rows = (np.arange(side) * height) // side
    cols = (np.arange(side) * width) // side
    return raster[np.ix_(rows, cols)]


def to_image(memory: bytes, side: int = DEFAULT_SIDE) -> MemoryImage:
    if side < 1:
        raise ValueError("image side must be >= 1")
    sampled = sample_raster(raster_bytes(memory), side)
    return MemoryImage(side=side, pixels=sampled.astype(np.float32) / np.float32(255.0))


def pgm_bytes(sampled: np.ndarray) -> bytes:
    """Binary PGM (P5, maxval 255) for a uint8 image."""
    height, width = sampled.shape
    return b"P5\n%d %d\n255\n" % (width, height) + sampled.tobytes()


def render_pgm(memory: bytes, side: int = DEFAULT_SIDE) -> bytes:
    """Render memory to PGM via the exact two-stage transform.

    Sampling happens on raw bytes, so pixel values are the sampled source
    bytes themselves (intensity * 255 round-trips exactly).
    """
    return pgm_bytes(sample_raster(raster_bytes(memory), side))
