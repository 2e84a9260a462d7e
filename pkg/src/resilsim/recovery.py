"""Interval checkpointing and mask-directed recovery policies.

Checkpoints hold post-recovery INT32 GEMM outputs, captured once every n
steps, so corrected values feed later layers exactly as a real overwrite
would and a corrupted step cannot poison future rollbacks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .abft import CorrectionMask
from .memsim import LayoutDescriptor, coalesced_read_bytes, count_row_activations
from .tensor import TileSpec


class RecoveryPolicy(enum.Enum):
    ROLLBACK = "rollback"
    ZERO_OUT = "zero_out"
    SKIP = "skip"
    RECOMPUTE = "recompute"
    NONE = "none"

    @classmethod
    def parse(cls, name: str) -> "RecoveryPolicy":
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(p.value for p in cls)
            raise ValueError(f"unknown recovery policy {name!r} (expected one of: {valid})")


@dataclass(frozen=True)
class RecoveryCost:
    extra_macs: int = 0
    extra_dram_bytes: int = 0


@dataclass(frozen=True)
class RecoveryResult:
    tensor: np.ndarray
    cost: RecoveryCost
    # Positions whose contribution downstream consumers must drop (skip policy).
    dropped: frozenset[tuple[int, int]]


class CheckpointStore:
    """Latest checkpoint per (block, tensor role), refreshed every n steps."""

    def __init__(self, interval: int):
        if interval < 1:
            raise ValueError(f"checkpoint interval must be >= 1, got {interval}")
        self.interval = interval
        self._store: dict[tuple[str, str], tuple[np.ndarray, int]] = {}

    def maybe_checkpoint(self, step: int, block: str, output: np.ndarray,
                         role: str = "out") -> int:
        """Capture a copy on interval boundaries; returns bytes offloaded."""
        if step % self.interval != 0:
            return 0
        self._store[(block, role)] = (output.copy(), step)
        return output.itemsize * output.size

    def get(self, block: str, role: str = "out") -> np.ndarray | None:
        entry = self._store.get((block, role))
        return entry[0] if entry is not None else None

    def checkpoint_step(self, block: str, role: str = "out") -> int | None:
        entry = self._store.get((block, role))
        return entry[1] if entry is not None else None


def _affected_tiles(positions, tiles: TileSpec) -> set[tuple[int, int]]:
    return {(r // tiles.tile_rows, c // tiles.tile_cols) for r, c in positions}


def recover(current: np.ndarray, mask: CorrectionMask, policy: RecoveryPolicy,
            checkpoint: np.ndarray | None = None,
            clean_oracle: np.ndarray | None = None,
            tiles: TileSpec = TileSpec(32, 32),
            k_dim: int | None = None) -> RecoveryResult:
    """Overwrite masked positions according to the policy.

    rollback: masked positions take checkpoint values (requires a matching
    checkpoint). zero_out: masked positions become 0. skip: the tensor is
    left as-is but the masked positions are reported for drop-at-consumption.
    recompute: masked positions take the fault-free oracle values and the
    cost charges a full recomputation of every affected tile. none: verbatim.
    Positions outside the mask are never modified.
    """
    rows, cols = current.shape
    for r, c in mask.positions:
        if not (0 <= r < rows and 0 <= c < cols):
            raise ValueError(f"mask position {(r, c)} out of bounds for {rows}x{cols} tensor")
    if not mask.positions or policy in (RecoveryPolicy.NONE, RecoveryPolicy.SKIP):
        dropped = frozenset(mask.positions) if policy is RecoveryPolicy.SKIP else frozenset()
        return RecoveryResult(tensor=current.copy(), cost=RecoveryCost(), dropped=dropped)

    idx = tuple(np.array(p, dtype=np.intp) for p in zip(*sorted(mask.positions)))
    out = current.copy()
    if policy is RecoveryPolicy.ROLLBACK:
        if checkpoint is None or checkpoint.shape != current.shape:
            raise ValueError("rollback requires a checkpoint of matching shape")
        out[idx] = checkpoint[idx]
        cost = RecoveryCost(extra_dram_bytes=len(mask.positions) * current.itemsize)
    elif policy is RecoveryPolicy.ZERO_OUT:
        out[idx] = 0
        cost = RecoveryCost()
    elif policy is RecoveryPolicy.RECOMPUTE:
        if clean_oracle is None or clean_oracle.shape != current.shape:
            raise ValueError("recompute requires a clean oracle of matching shape")
        if k_dim is None or k_dim < 1:
            raise ValueError("recompute requires the GEMM reduction dimension k_dim")
        out[idx] = clean_oracle[idx]
        n_tiles = len(_affected_tiles(mask.positions, tiles))
        cost = RecoveryCost(extra_macs=n_tiles * tiles.tile_rows * tiles.tile_cols * k_dim)
    else:  # pragma: no cover - enum is exhaustive
        raise ValueError(f"unhandled policy {policy}")
    return RecoveryResult(tensor=out, cost=cost, dropped=frozenset())


def recovery_traffic(mask: CorrectionMask, layout: LayoutDescriptor) -> tuple[int, int]:
    """(DRAM rows activated, bytes read) to fetch the masked elements.

    Rows are counted as distinct DRAM rows containing any masked element;
    bytes are coalesced to cache-line granularity.
    """
    if not mask.positions:
        return (0, 0)
    positions = sorted(mask.positions)
    rows = count_row_activations(layout, positions)
    bytes_read = coalesced_read_bytes(layout, positions)
    return (rows, bytes_read)
