"""Deterministic simulator of a systolic-array GEMM accelerator under
aggressive DVFS, with checksum-based large-error detection, checkpoint
rollback recovery, and DRAM-row-aware layout modeling."""

__version__ = "0.1.0"
