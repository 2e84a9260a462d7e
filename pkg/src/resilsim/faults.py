"""Bit-flip generation and injection for INT32 GEMM outputs.

Transient timing errors are modeled as independent uniform bit flips on the
post-accumulation output words. Memory is error-free; only the product path
is corruptible. All randomness is counter-style: each (seed, step, block)
triple opens its own substream, so traces are reproducible and independent
of trial execution order.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

WORD_BITS = 32

# Below this rate faults are drawn as a binomial count plus a uniform
# without-replacement position choice, which is distributionally identical
# to per-bit Bernoulli sampling but much cheaper at realistic BERs.
_SPARSE_BER_CUTOFF = 0.05


@dataclass(frozen=True, order=True)
class FaultRecord:
    """One injected bit flip, addressed by timestep, block, element, and bit."""

    step: int
    block: str
    row: int
    col: int
    bit: int

    def __post_init__(self):
        if not (0 <= self.bit < WORD_BITS):
            raise ValueError(f"bit position must be in [0, {WORD_BITS - 1}], got {self.bit}")


@dataclass(frozen=True)
class FaultPlan:
    """Either a random per-bit flip rate or an explicit list of targets."""

    mode: str  # "random" | "targeted"
    seed: int
    ber: float = 0.0
    records: tuple[FaultRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.mode not in ("random", "targeted"):
            raise ValueError(f"unknown fault plan mode {self.mode!r}")
        if not (0.0 <= self.ber <= 1.0):
            raise ValueError(f"ber must be in [0, 1], got {self.ber}")
        if self.mode == "random" and self.records:
            raise ValueError("random plans generate records; they cannot be supplied")

    @classmethod
    def random(cls, ber: float, seed: int) -> "FaultPlan":
        return cls(mode="random", seed=seed, ber=ber)

    @classmethod
    def targeted(cls, records, seed: int = 0) -> "FaultPlan":
        return cls(mode="targeted", seed=seed, records=tuple(records))


def _block_key(block: str) -> int:
    digest = hashlib.blake2b(block.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, *keys) -> np.random.Generator:
    """Deterministic RNG substream keyed by the seed plus arbitrary labels."""
    entropy = [seed & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        entropy.append(_block_key(k) if isinstance(k, str) else int(k) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def sample_faults(rows: int, cols: int, ber: float, step: int, block: str,
                  rng: np.random.Generator) -> list[FaultRecord]:
    """Flip each of the rows*cols*32 output bits independently with probability ber.

    Returns records sorted by (row, col, bit); advances rng.
    """
    if not (0.0 <= ber <= 1.0):
        raise ValueError(f"ber must be in [0, 1], got {ber}")
    n_bits = rows * cols * WORD_BITS
    if ber == 0.0 or n_bits == 0:
        return []
    if ber < _SPARSE_BER_CUTOFF:
        count = rng.binomial(n_bits, ber)
        idx = np.sort(rng.choice(n_bits, size=count, replace=False))
    else:
        idx = np.nonzero(rng.random(n_bits) < ber)[0]
    bits = idx % WORD_BITS
    elems = idx // WORD_BITS
    return [
        FaultRecord(step=step, block=block, row=int(e // cols), col=int(e % cols), bit=int(b))
        for e, b in zip(elems, bits)
    ]


def inject(tensor: np.ndarray, faults) -> np.ndarray:
    """XOR the listed bit positions into an INT32 tensor's two's-complement words."""
    if tensor.dtype != np.int32 or tensor.ndim != 2:
        raise ValueError("inject expects a 2-D int32 tensor")
    rows, cols = tensor.shape
    out = np.ascontiguousarray(tensor).copy()
    if not faults:
        return out
    for f in faults:
        if not (0 <= f.row < rows and 0 <= f.col < cols):
            raise ValueError(f"fault index out of bounds for {rows}x{cols} tensor: {f}")
    view = out.view(np.uint32)
    r = np.fromiter((f.row for f in faults), dtype=np.intp, count=len(faults))
    c = np.fromiter((f.col for f in faults), dtype=np.intp, count=len(faults))
    masks = np.fromiter((1 << f.bit for f in faults), dtype=np.uint32, count=len(faults))
    np.bitwise_xor.at(view, (r, c), masks)
    return out


def faults_for_op(plan: FaultPlan, step: int, block: str, shape: tuple[int, int],
                  ber: float | None = None) -> list[FaultRecord]:
    """Faults for one GEMM: sampled from a per-op substream, or filtered targets.

    In random mode `ber` overrides the plan's rate (the run driver passes the
    active operating point's BER); targeted mode returns records matching
    (step, block).
    """
    rows, cols = shape
    if plan.mode == "targeted":
        return [f for f in plan.records if f.step == step and f.block == block]
    rate = plan.ber if ber is None else ber
    rng = substream(plan.seed, step, block)
    return sample_faults(rows, cols, rate, step, block, rng)


def write_fault_trace(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "block", "row", "col", "bit"])
        for f in records:
            w.writerow([f.step, f.block, f.row, f.col, f.bit])
