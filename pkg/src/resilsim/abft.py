"""Checksum-based large-error detection and localization for integer GEMM.

Row and column reference checksums are derived from the (error-free)
operands in 64-bit arithmetic, so they equal the true row/column sums of
the exact product for any K up to the GEMM engine's cap. An output whose
row or column sum deviates from the reference by at least the threshold is
flagged; the Cartesian product of flagged rows and columns forms the
correction mask handed to the recovery path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import QuantTensor

WORD_BITS = 32


@dataclass(frozen=True)
class ChecksumSet:
    """Expected row and column sums of the exact product, in int64."""

    row_ref: np.ndarray
    col_ref: np.ndarray


@dataclass(frozen=True)
class DetectionResult:
    flagged_rows: tuple[int, ...]
    flagged_cols: tuple[int, ...]
    row_discrepancy: dict[int, int]
    col_discrepancy: dict[int, int]

    @property
    def clean(self) -> bool:
        return not self.flagged_rows and not self.flagged_cols


@dataclass(frozen=True)
class CorrectionMask:
    """Cartesian product of flagged rows and columns."""

    positions: frozenset[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.positions)


def compute_checksums(a: QuantTensor, b: QuantTensor) -> ChecksumSet:
    """Reference checksums from the operands: a @ rowsum(b) and colsum(a) @ b."""
    if a.cols != b.rows:
        raise ValueError(f"inner dimensions mismatch: {a.rows}x{a.cols} @ {b.rows}x{b.cols}")
    a64 = a.data.astype(np.int64)
    b64 = b.data.astype(np.int64)
    row_ref = a64 @ b64.sum(axis=1)
    col_ref = a64.sum(axis=0) @ b64
    return ChecksumSet(row_ref=row_ref, col_ref=col_ref)


def detect(observed: np.ndarray, checks: ChecksumSet, theta: int) -> DetectionResult:
    """Flag rows/columns whose observed sum deviates from the reference by >= theta.

    The comparison is inclusive so a flip of exactly the threshold bit is
    caught. Sums run in 64-bit arithmetic.
    """
    if theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}")
    if observed.shape != (len(checks.row_ref), len(checks.col_ref)):
        raise ValueError(
            f"observed shape {observed.shape} does not match checksum lengths "
            f"({len(checks.row_ref)}, {len(checks.col_ref)})")
    obs64 = observed.astype(np.int64)
    row_diff = obs64.sum(axis=1) - checks.row_ref
    col_diff = obs64.sum(axis=0) - checks.col_ref
    rows = np.nonzero(np.abs(row_diff) >= theta)[0]
    cols = np.nonzero(np.abs(col_diff) >= theta)[0]
    return DetectionResult(
        flagged_rows=tuple(int(i) for i in rows),
        flagged_cols=tuple(int(j) for j in cols),
        row_discrepancy={int(i): int(row_diff[i]) for i in rows},
        col_discrepancy={int(j): int(col_diff[j]) for j in cols},
    )


def build_mask(det: DetectionResult) -> CorrectionMask:
    positions = frozenset(
        (r, c) for r in det.flagged_rows for c in det.flagged_cols)
    return CorrectionMask(positions=positions)


def detectable_bit_fraction(theta: int) -> float:
    """Fraction of the 32 bit positions whose lone flip moves a sum by >= theta."""
    detectable = sum(1 for b in range(WORD_BITS) if (1 << b) >= theta)
    return detectable / WORD_BITS


def estimate_ber(flag_history, theta: int, window: int) -> float:
    """Estimate the per-bit flip rate from recent detection results.

    `flag_history` is a sequence of (DetectionResult, rows, cols) entries; the
    last `window` entries are used. Flagged-row counts proxy detected flip
    events: events / (monitored bits x detectable-bit fraction). Because a
    row is flagged whether it holds one detectable flip or several, the raw
    count saturates at high rates; the per-row occupancy is inverted through
    the Poisson hit model (-M ln(1 - k/M)) before dividing, which reduces to
    the plain ratio when flips are sparse.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    recent = list(flag_history)[-window:]
    frac = detectable_bit_fraction(theta)
    if frac == 0.0:
        return 0.0
    flagged = 0
    total_rows = 0
    monitored_bits = 0
    for det, rows, cols in recent:
        monitored_bits += rows * cols * WORD_BITS
        total_rows += rows
        flagged += len(det.flagged_rows)
    if monitored_bits == 0 or flagged == 0:
        return 0.0
    p = min(flagged / total_rows, 1.0 - 1.0 / (2.0 * total_rows))
    events = -total_rows * math.log1p(-p)
    return events / (monitored_bits * frac)
