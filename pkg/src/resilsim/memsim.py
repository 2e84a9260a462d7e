"""DRAM row-activation model, data layouts, and energy/latency accounting.

Two layouts are modeled: conventional row-major, and tile-packed, where each
GEMM tile is stored as one 1-D contiguous run so a tile read touches the
minimum number of DRAM rows. Throughput is analytic (MACs over peak MAC
rate), not cycle-accurate; memory transfers overlap with compute and only
their excess over the compute time lands on the critical path.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields

import numpy as np

from .tensor import TileSpec

PJ = 1e-12


def _is_pow2(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


@dataclass(frozen=True)
class LayoutDescriptor:
    """How a rows x cols matrix maps to DRAM byte addresses."""

    kind: str  # "row_major" | "tile_packed"
    rows: int
    cols: int
    element_bytes: int = 4
    dram_row_bytes: int = 2048
    cache_line_bytes: int = 64
    tile: TileSpec | None = None

    def __post_init__(self):
        if self.kind not in ("row_major", "tile_packed"):
            raise ValueError(f"unknown layout kind {self.kind!r}")
        if self.kind == "tile_packed" and self.tile is None:
            raise ValueError("tile_packed layout requires a TileSpec")
        if self.element_bytes not in (1, 4):
            raise ValueError(f"element_bytes must be 1 or 4, got {self.element_bytes}")
        if not _is_pow2(self.dram_row_bytes) or not _is_pow2(self.cache_line_bytes):
            raise ValueError("dram_row_bytes and cache_line_bytes must be powers of two")
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"matrix dimensions must be positive, got {self.rows}x{self.cols}")


@dataclass(frozen=True)
class MemConfig:
    """Off-chip memory cost model (HBM-class defaults, all overridable)."""

    dram_row_bytes: int = 2048
    cache_line_bytes: int = 64
    energy_row_activate_pj: float = 2000.0
    energy_per_byte_pj: float = 31.0
    bandwidth_bytes_per_s: float = 256e9
    row_activate_latency_ns: float = 30.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"MemConfig.{f.name} must be positive")


def element_addresses(layout: LayoutDescriptor, rows_idx, cols_idx) -> np.ndarray:
    """Byte offsets of the given elements under the layout (vectorized)."""
    r = np.asarray(rows_idx, dtype=np.int64)
    c = np.asarray(cols_idx, dtype=np.int64)
    if r.size and (r.min() < 0 or r.max() >= layout.rows or c.min() < 0 or c.max() >= layout.cols):
        raise ValueError("element index out of bounds for layout")
    if layout.kind == "row_major":
        linear = r * layout.cols + c
    else:
        tr, tc = layout.tile.tile_rows, layout.tile.tile_cols
        ti = r // tr
        tj = c // tc
        band_height = np.minimum(tr, layout.rows - ti * tr)
        tile_width = np.minimum(tc, layout.cols - tj * tc)
        # Full bands above, then full-width tiles to the left in this band,
        # then row-major within the tile.
        linear = (ti * tr * layout.cols
                  + band_height * (tj * tc)
                  + (r - ti * tr) * tile_width
                  + (c - tj * tc))
    return linear * layout.element_bytes


def address_of(layout: LayoutDescriptor, row: int, col: int) -> int:
    """Byte offset of one element; bijective onto [0, rows*cols*element_bytes)."""
    return int(element_addresses(layout, [row], [col])[0])


def count_row_activations(layout: LayoutDescriptor, accesses) -> int:
    """Distinct DRAM rows touched when reading the given element index set."""
    accesses = list(accesses)
    if not accesses:
        return 0
    r = [a[0] for a in accesses]
    c = [a[1] for a in accesses]
    addrs = element_addresses(layout, r, c)
    return int(np.unique(addrs // layout.dram_row_bytes).size)


def coalesced_read_bytes(layout: LayoutDescriptor, accesses) -> int:
    """Bytes transferred after coalescing the accessed elements into cache lines."""
    accesses = list(accesses)
    if not accesses:
        return 0
    r = [a[0] for a in accesses]
    c = [a[1] for a in accesses]
    addrs = element_addresses(layout, r, c)
    lines = np.unique(addrs // layout.cache_line_bytes)
    return int(lines.size) * layout.cache_line_bytes


@dataclass(frozen=True)
class GemmRecord:
    """Per-GEMM accounting record consumed by account()."""

    step: int
    block: str
    macs: int
    frequency_ghz: float
    energy_per_mac_pj: float
    extra_macs: int = 0
    checkpoint_bytes: int = 0
    recovery_rows: int = 0
    recovery_bytes: int = 0
    faults_injected: int = 0
    flagged_rows: int = 0
    flagged_cols: int = 0
    masked_elements: int = 0
    dropped_elements: int = 0


@dataclass
class SimReport:
    """Aggregated energy, latency, traffic, and error statistics for one run."""

    energy_compute_j: float = 0.0
    energy_abft_j: float = 0.0
    energy_checkpoint_j: float = 0.0
    energy_recovery_j: float = 0.0
    energy_other_j: float = 0.0
    latency_s: float = 0.0
    macs: int = 0
    extra_macs: int = 0
    rows_activated: int = 0
    bytes_checkpoint: int = 0
    bytes_recovery: int = 0
    faults_injected: int = 0
    flagged_rows: int = 0
    flagged_cols: int = 0
    masked_elements: int = 0
    dropped_elements: int = 0
    recoveries: int = 0
    gemms: int = 0

    @property
    def total_energy_j(self) -> float:
        return (self.energy_compute_j + self.energy_abft_j + self.energy_checkpoint_j
                + self.energy_recovery_j + self.energy_other_j)

    def counters(self) -> list[tuple[str, object]]:
        items = [(f.name, getattr(self, f.name)) for f in fields(self)]
        items.append(("total_energy_j", self.total_energy_j))
        return items

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["counter", "value"])
            for name, value in self.counters():
                w.writerow([name, repr(value) if isinstance(value, float) else value])

    def pretty(self) -> str:
        width = max(len(name) for name, _ in self.counters())
        lines = ["simulation report", "-" * (width + 24)]
        for name, value in self.counters():
            if isinstance(value, float):
                lines.append(f"{name:<{width}}  {value:.6e}")
            else:
                lines.append(f"{name:<{width}}  {value}")
        return "\n".join(lines)


def account(records, mem: MemConfig, arrays: int = 64, array_size: int = 32,
            abft_overhead_fraction: float = 0.063) -> SimReport:
    """Fold per-GEMM records into a SimReport.

    Per GEMM: compute time = MACs / (arrays * array_size^2 * frequency);
    checkpoint writes are charged energy but fully overlapped in latency;
    recovery reads overlap with compute and add only their excess over the
    compute time to the critical path.
    """
    rep = SimReport()
    for rec in records:
        peak = arrays * array_size * array_size * rec.frequency_ghz * 1e9
        total_macs = rec.macs + rec.extra_macs
        compute_s = total_macs / peak
        mem_s = (rec.recovery_bytes / mem.bandwidth_bytes_per_s
                 + rec.recovery_rows * mem.row_activate_latency_ns * 1e-9)
        rep.latency_s += compute_s + max(0.0, mem_s - compute_s)

        compute_j = total_macs * rec.energy_per_mac_pj * PJ
        rep.energy_compute_j += compute_j
        rep.energy_abft_j += compute_j * abft_overhead_fraction
        rep.energy_checkpoint_j += rec.checkpoint_bytes * mem.energy_per_byte_pj * PJ
        rep.energy_recovery_j += (rec.recovery_rows * mem.energy_row_activate_pj
                                  + rec.recovery_bytes * mem.energy_per_byte_pj) * PJ

        rep.macs += rec.macs
        rep.extra_macs += rec.extra_macs
        rep.rows_activated += rec.recovery_rows
        rep.bytes_checkpoint += rec.checkpoint_bytes
        rep.bytes_recovery += rec.recovery_bytes
        rep.faults_injected += rec.faults_injected
        rep.flagged_rows += rec.flagged_rows
        rep.flagged_cols += rec.flagged_cols
        rep.masked_elements += rec.masked_elements
        rep.dropped_elements += rec.dropped_elements
        rep.recoveries += 1 if rec.masked_elements else 0
        rep.gemms += 1
    return rep
