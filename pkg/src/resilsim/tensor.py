"""Quantized tensors and the exact tiled integer GEMM engine.

All accelerator math in the simulator is INT8 x INT8 -> INT32. The tiled
GEMM here is the golden computational path: with the reduction dimension
capped at 4096 the 32-bit accumulator cannot wrap, so any tiling produces
a bit-identical result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INT8_MIN = -128
INT8_MAX = 127

# Worst-case |a*b| per MAC is 128*128 = 2^14; K <= 4096 = 2^12 keeps the
# accumulator magnitude below 2^26, far from INT32 wraparound.
MAX_GEMM_K = 4096


@dataclass(frozen=True)
class QuantTensor:
    """An INT8 matrix plus the real-valued dequantization scale."""

    data: np.ndarray
    scale: float

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"QuantTensor data must be 2-D, got shape {self.data.shape}")
        if self.data.dtype != np.int8:
            raise ValueError(f"QuantTensor data must be int8, got {self.data.dtype}")
        if not (self.scale > 0):
            raise ValueError(f"QuantTensor scale must be positive, got {self.scale}")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def dequantize(self) -> np.ndarray:
        return self.data.astype(np.float64) * self.scale


@dataclass(frozen=True)
class TileSpec:
    """Tile edge lengths used to partition a matrix; edge tiles may be smaller."""

    tile_rows: int
    tile_cols: int

    def __post_init__(self):
        if self.tile_rows < 1 or self.tile_cols < 1:
            raise ValueError(f"tile dimensions must be positive, got {self}")


def quantize(matrix, scale: float) -> QuantTensor:
    """Quantize a real matrix to INT8 with round-half-away-from-zero.

    Values outside [-128, 127] after scaling saturate at the bounds.
    """
    if not (scale > 0):
        raise ValueError(f"scale must be positive, got {scale}")
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        bad = np.argwhere(~np.isfinite(m))[0]
        raise ValueError(f"non-finite input element at index {tuple(bad)}")
    scaled = m / scale
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    clamped = np.clip(rounded, INT8_MIN, INT8_MAX)
    return QuantTensor(data=clamped.astype(np.int8), scale=float(scale))


def tile_partition(rows: int, cols: int, tiles: TileSpec) -> list[tuple[int, int, int, int]]:
    """Partition an rows x cols index space into (r0, r1, c0, c1) ranges.

    Tiles are emitted in row-major tile order and cover the matrix exactly
    once; edge tiles are clipped.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"matrix dimensions must be positive, got {rows}x{cols}")
    out = []
    for r0 in range(0, rows, tiles.tile_rows):
        r1 = min(r0 + tiles.tile_rows, rows)
        for c0 in range(0, cols, tiles.tile_cols):
            c1 = min(c0 + tiles.tile_cols, cols)
            out.append((r0, r1, c0, c1))
    return out


def gemm_exact(a: QuantTensor, b: QuantTensor, tiles: TileSpec | None = None) -> np.ndarray:
    """Exact tiled INT8 GEMM with 32-bit signed accumulation.

    Returns an int32 array. The result is independent of the tiling because
    no partial sum can overflow for K <= MAX_GEMM_K.
    """
    if a.cols != b.rows:
        raise ValueError(f"inner dimensions mismatch: {a.rows}x{a.cols} @ {b.rows}x{b.cols}")
    k = a.cols
    if k > MAX_GEMM_K:
        raise ValueError(f"reduction dimension {k} exceeds supported maximum {MAX_GEMM_K}")
    if tiles is None:
        tiles = TileSpec(32, 32)
    a32 = a.data.astype(np.int32)
    b32 = b.data.astype(np.int32)
    out = np.zeros((a.rows, b.cols), dtype=np.int32)
    k_step = max(tiles.tile_rows, tiles.tile_cols)
    for r0, r1, c0, c1 in tile_partition(a.rows, b.cols, tiles):
        psum = out[r0:r1, c0:c1]
        for k0 in range(0, k, k_step):
            k1 = min(k0 + k_step, k)
            psum += a32[r0:r1, k0:k1] @ b32[k0:k1, c0:c1]
    return out


def gemm_reference(a: QuantTensor, b: QuantTensor) -> np.ndarray:
    """Naive triple-loop GEMM, kept deliberately independent of gemm_exact."""
    if a.cols != b.rows:
        raise ValueError("inner dimensions mismatch")
    m, k, n = a.rows, a.cols, b.cols
    out = np.zeros((m, n), dtype=np.int32)
    ad = a.data
    bd = b.data
    for i in range(m):
        for j in range(n):
            acc = 0
            for kk in range(k):
                acc += int(ad[i, kk]) * int(bd[kk, j])
            out[i, j] = acc
    return out
