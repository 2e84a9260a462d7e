"""Synthetic multi-step iterative-denoising workload and resilience drivers.

The toy model is a damped contraction: a state matrix is refreshed each
timestep through a chain of quantized GEMM blocks, with an embedding block
whose output fans into every body block, and a step-size schedule that
decays over time. It is the smallest construction exhibiting the three
properties the recovery machinery exploits: adjacent-step similarity,
higher sensitivity at early steps, and gradual self-correction of transient
perturbations. No fidelity to any real generative network is claimed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import abft as abft_mod
from .dvfs import DvfsSchedule, lookup_op_point
from .faults import FaultPlan, FaultRecord, faults_for_op, inject, substream
from .memsim import GemmRecord, LayoutDescriptor, MemConfig, SimReport, account
from .recovery import CheckpointStore, RecoveryPolicy, recover, recovery_traffic
from .tensor import QuantTensor, TileSpec, gemm_exact, quantize, tile_partition

EMBED_BLOCK = "embed"


@dataclass(frozen=True)
class BlockSpec:
    name: str
    weight: QuantTensor
    role: str  # "embedding" | "body"


@dataclass(frozen=True)
class ToyModel:
    blocks: tuple[BlockSpec, ...]
    dim: int
    batch: int
    steps: int
    sigma: np.ndarray  # per-step update gain, decaying
    state_scale: float
    cond: np.ndarray  # fixed conditioning input consumed by the embedding block
    init_state: np.ndarray
    seed: int

    @property
    def block_names(self) -> tuple[str, ...]:
        return tuple(b.name for b in self.blocks)

    @property
    def body_blocks(self) -> tuple[BlockSpec, ...]:
        return tuple(b for b in self.blocks if b.role == "body")

    @property
    def embedding(self) -> BlockSpec:
        return self.blocks[0]


@dataclass
class Trajectory:
    states: list[np.ndarray]
    fault_trace: list[FaultRecord] = field(default_factory=list)
    detection_trace: list[tuple] = field(default_factory=list)
    recovery_trace: list[tuple] = field(default_factory=list)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def relative_deviation(observed: np.ndarray, reference: np.ndarray) -> float:
    """Relative L2 deviation; 0 iff the states are identical."""
    denom = float(np.linalg.norm(reference))
    if denom == 0.0:
        return 0.0 if np.array_equal(observed, reference) else float("inf")
    return float(np.linalg.norm(observed - reference)) / denom


def _scaled_weight(rng: np.random.Generator, dim: int, gain: float) -> QuantTensor:
    w = rng.normal(size=(dim, dim))
    w *= gain / np.linalg.norm(w, 2)
    return quantize(w, float(np.abs(w).max()) / 127.0)


def build_toy_model(dim: int = 64, depth: int = 4, steps: int = 20, seed: int = 0,
                    batch: int = 32, sigma0: float = 0.3, sigma_decay: float = 0.8,
                    weight_gain: float = 0.45) -> ToyModel:
    """Deterministically construct a contractive toy model from a seed.

    The per-step map Lipschitz bound is verified numerically from the
    dequantized weight spectral norms; construction fails rather than
    returning a model that could drift.
    """
    if dim < 1 or depth < 1 or steps < 1 or batch < 1:
        raise ValueError("dim, depth, steps, and batch must all be >= 1")
    if not (0.0 < sigma0 < 1.0):
        raise ValueError(f"sigma0 must be in (0, 1), got {sigma0}")
    if not (0.0 < sigma_decay <= 1.0):
        raise ValueError(f"sigma_decay must be in (0, 1], got {sigma_decay}")
    rng = substream(seed, "toy-model")
    blocks = [BlockSpec(EMBED_BLOCK, _scaled_weight(rng, dim, weight_gain), "embedding")]
    for j in range(depth):
        blocks.append(BlockSpec(f"blk{j}", _scaled_weight(rng, dim, weight_gain), "body"))
    cond = rng.normal(size=(dim, batch))
    init_state = rng.normal(size=(dim, batch))
    sigma = sigma0 * sigma_decay ** np.arange(steps)

    # Body chain Lipschitz constant in x (the embedding output is constant in x).
    lip = 1.0
    for blk in blocks[1:]:
        lip *= np.linalg.norm(blk.weight.dequantize(), 2)
    step_factors = (1.0 - sigma) + sigma * lip
    if not (step_factors < 1.0).all():
        raise ValueError(f"constructed model is not contractive (Lipschitz bound {lip:.3f})")

    return ToyModel(blocks=tuple(blocks), dim=dim, batch=batch, steps=steps,
                    sigma=sigma, state_scale=4.0 / 127.0, cond=cond,
                    init_state=init_state, seed=seed)


def _iterate(model: ToyModel, gemm_hook) -> list[np.ndarray]:
    """Run the denoising loop; gemm_hook(step, block, a, b, exact) -> consumed int32.

    Both the clean oracle and every faulty variant flow through this one
    loop, so a no-op hook is bit-identical to the clean trajectory.
    """
    s_x = model.state_scale
    # Block outputs are requantized into the INT8 activation range downstream,
    # so dequantized values saturate at the representable bound; corrupted
    # outputs cannot exceed it either.
    bound = 127 * s_x
    q_cond = quantize(model.cond, s_x)
    x = model.init_state.copy()
    states = [x.copy()]
    embed = model.embedding
    for t in range(model.steps):
        exact_e = gemm_exact(embed.weight, q_cond)
        e_out = gemm_hook(t, embed.name, embed.weight, q_cond, exact_e)
        e = np.clip(e_out * (embed.weight.scale * s_x), -bound, bound)
        h = x
        for blk in model.body_blocks:
            qv = quantize(h + e, s_x)
            exact_h = gemm_exact(blk.weight, qv)
            h_out = gemm_hook(t, blk.name, blk.weight, qv, exact_h)
            h = np.clip(h_out * (blk.weight.scale * s_x), -bound, bound)
        x = x + model.sigma[t] * (h - x)
        states.append(x.copy())
    return states


def clean_trajectory(model: ToyModel) -> Trajectory:
    """Fault-free golden run."""
    return Trajectory(states=_iterate(model, lambda t, blk, a, b, exact: exact))


def _targeted_trajectory(model: ToyModel, records) -> Trajectory:
    """Lightweight injection run: targeted flips only, no detection/recovery."""
    by_op: dict[tuple[int, str], list[FaultRecord]] = {}
    for r in records:
        by_op.setdefault((r.step, r.block), []).append(r)

    def hook(t, blk, a, b, exact):
        flips = by_op.get((t, blk))
        return inject(exact, flips) if flips else exact

    return Trajectory(states=_iterate(model, hook))


def run_denoise(model: ToyModel, plan: FaultPlan, schedule: DvfsSchedule,
                policy: RecoveryPolicy, interval: int, theta: int,
                mem: MemConfig | None = None, arrays: int = 64, array_size: int = 32,
                layout_kind: str = "tile_packed",
                abft_overhead_fraction: float = 0.063,
                checkpoint_embedding: bool = True) -> tuple[Trajectory, SimReport]:
    """Full protected run: per GEMM, pick the operating point, inject faults at
    its BER, detect per tile against the threshold, apply the recovery
    policy, and checkpoint post-recovery outputs on interval boundaries.
    """
    mem = mem or MemConfig()
    tiles = TileSpec(array_size, array_size)
    store = CheckpointStore(interval)
    records: list[GemmRecord] = []
    traj = Trajectory(states=[])

    def hook(t, block_name, a, b, exact):
        op = lookup_op_point(schedule, t, block_name)
        flips = faults_for_op(plan, t, block_name, exact.shape, ber=op.ber)
        observed = inject(exact, flips) if flips else exact.copy()
        traj.fault_trace.extend(flips)

        positions = set()
        n_flag_rows = 0
        n_flag_cols = 0
        for r0, r1, c0, c1 in tile_partition(exact.shape[0], exact.shape[1], tiles):
            checks = abft_mod.compute_checksums(
                QuantTensor(a.data[r0:r1, :], a.scale),
                QuantTensor(b.data[:, c0:c1], b.scale))
            det = abft_mod.detect(observed[r0:r1, c0:c1], checks, theta)
            if det.clean:
                continue
            n_flag_rows += len(det.flagged_rows)
            n_flag_cols += len(det.flagged_cols)
            traj.detection_trace.append((
                t, block_name, r0 // tiles.tile_rows, c0 // tiles.tile_cols,
                ";".join(str(i) for i in det.flagged_rows),
                ";".join(str(j) for j in det.flagged_cols)))
            for pos in abft_mod.build_mask(det).positions:
                positions.add((pos[0] + r0, pos[1] + c0))
        mask = abft_mod.CorrectionMask(frozenset(positions))

        effective_policy = policy
        checkpoint = store.get(block_name)
        if policy is RecoveryPolicy.ROLLBACK and checkpoint is None:
            # No checkpoint captured yet for this block; degrade to zeroing.
            effective_policy = RecoveryPolicy.ZERO_OUT
        result = recover(observed, mask, effective_policy, checkpoint=checkpoint,
                         clean_oracle=exact, tiles=tiles, k_dim=a.cols)

        rows_act, bytes_read = 0, 0
        if effective_policy is RecoveryPolicy.ROLLBACK and mask.positions:
            layout = LayoutDescriptor(
                kind=layout_kind, rows=exact.shape[0], cols=exact.shape[1],
                element_bytes=4, dram_row_bytes=mem.dram_row_bytes,
                cache_line_bytes=mem.cache_line_bytes, tile=tiles)
            rows_act, bytes_read = recovery_traffic(mask, layout)
        if mask.positions:
            traj.recovery_trace.append((t, block_name, effective_policy.value,
                                        len(mask.positions), rows_act, bytes_read))

        consumed = result.tensor
        if result.dropped:
            idx = tuple(np.array(p, dtype=np.intp) for p in zip(*sorted(result.dropped)))
            consumed = consumed.copy()
            consumed[idx] = 0

        ckpt_bytes = 0
        if block_name != EMBED_BLOCK or checkpoint_embedding:
            ckpt_bytes = store.maybe_checkpoint(t, block_name, consumed)

        records.append(GemmRecord(
            step=t, block=block_name,
            macs=exact.shape[0] * exact.shape[1] * a.cols,
            frequency_ghz=op.frequency_ghz, energy_per_mac_pj=op.energy_per_mac_pj,
            extra_macs=result.cost.extra_macs, checkpoint_bytes=ckpt_bytes,
            recovery_rows=rows_act, recovery_bytes=bytes_read,
            faults_injected=len(flips), flagged_rows=n_flag_rows,
            flagged_cols=n_flag_cols, masked_elements=len(mask.positions),
            dropped_elements=len(result.dropped)))
        return consumed

    traj.states = _iterate(model, hook)
    report = account(records, mem, arrays=arrays, array_size=array_size,
                     abft_overhead_fraction=abft_overhead_fraction)
    return traj, report


def _random_position(model: ToyModel, rng: np.random.Generator,
                     block: str | None = None) -> tuple[str, int, int]:
    name = block if block is not None else model.block_names[rng.integers(len(model.blocks))]
    return name, int(rng.integers(model.dim)), int(rng.integers(model.batch))


def _mean_deviation(model: ToyModel, clean_final: np.ndarray, trial_records) -> tuple[float, float]:
    devs = [relative_deviation(_targeted_trajectory(model, recs).final_state, clean_final)
            for recs in trial_records]
    return float(np.mean(devs)), float(np.std(devs))


def characterize_bits(model: ToyModel, bits, trials: int,
                      inject_step: int | None = None, seed: int = 0) -> dict[int, tuple[float, float]]:
    """Mean final deviation per flipped bit position, single flip per trial."""
    bits = list(bits)
    if any(not (0 <= b < 32) for b in bits):
        raise ValueError("bit positions must be in [0, 31]")
    if not bits:
        return {}
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    step = model.steps // 2 if inject_step is None else inject_step
    clean_final = clean_trajectory(model).final_state
    out = {}
    for bit in bits:
        trial_records = []
        for trial in range(trials):
            rng = substream(seed, "char-bit", bit, trial)
            block, row, col = _random_position(model, rng)
            trial_records.append([FaultRecord(step, block, row, col, bit)])
        out[bit] = _mean_deviation(model, clean_final, trial_records)
    return out


def characterize_steps(model: ToyModel, steps, trials: int, bit: int = 24,
                       seed: int = 0) -> dict[int, tuple[float, float]]:
    """Mean final deviation per injection timestep, at a fixed high bit."""
    steps = list(steps)
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if not steps:
        return {}
    clean_final = clean_trajectory(model).final_state
    out = {}
    for step in steps:
        trial_records = []
        for trial in range(trials):
            rng = substream(seed, "char-step", step, trial)
            block, row, col = _random_position(model, rng)
            trial_records.append([FaultRecord(step, block, row, col, bit)])
        out[step] = _mean_deviation(model, clean_final, trial_records)
    return out


def characterize_blocks(model: ToyModel, blocks, trials: int, bit: int = 24,
                        inject_step: int | None = None,
                        seed: int = 0) -> dict[str, tuple[float, float]]:
    """Mean final deviation per injected block, at a fixed step and bit."""
    blocks = list(blocks)
    unknown = set(blocks) - set(model.block_names)
    if unknown:
        raise ValueError(f"unknown block names: {sorted(unknown)}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    step = model.steps // 2 if inject_step is None else inject_step
    clean_final = clean_trajectory(model).final_state
    out = {}
    for block in blocks:
        trial_records = []
        for trial in range(trials):
            rng = substream(seed, "char-block", block, trial)
            _, row, col = _random_position(model, rng, block=block)
            trial_records.append([FaultRecord(step, block, row, col, bit)])
        out[block] = _mean_deviation(model, clean_final, trial_records)
    return out


def self_correction_trace(model: ToyModel, inject_step: int, bit: int,
                          row: int = 0, col: int = 0,
                          block: str | None = None) -> np.ndarray:
    """Per-step |faulty - clean| of one tracked state element.

    The flip lands in the output of `block` (default: the last body block, so
    the perturbation reaches the tracked state element directly).
    """
    if not (0 <= inject_step < model.steps):
        raise ValueError(f"inject_step must be in [0, {model.steps - 1}], got {inject_step}")
    name = block if block is not None else model.body_blocks[-1].name
    if name not in model.block_names:
        raise ValueError(f"unknown block name {name!r}")
    clean = clean_trajectory(model)
    faulty = _targeted_trajectory(model, [FaultRecord(inject_step, name, row, col, bit)])
    return np.array([abs(f[row, col] - c[row, col])
                     for f, c in zip(faulty.states, clean.states)])


def compare_policies(model: ToyModel, policies, trials: int, ber: float,
                     schedule: DvfsSchedule, theta: int, interval: int,
                     seed: int = 0) -> dict[RecoveryPolicy, tuple[float, float]]:
    """Trial-mean (final deviation, extra MACs) per recovery policy.

    Fault streams are shared across policies: trial i uses the same plan
    seed for every policy, so the comparison is paired.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    clean_final = clean_trajectory(model).final_state
    out = {}
    for policy in policies:
        devs = []
        extra = []
        for trial in range(trials):
            plan = FaultPlan.random(ber, seed=int(substream(seed, "policy-trial", trial)
                                                  .integers(2 ** 63)))
            traj, report = run_denoise(model, plan, schedule, policy,
                                       interval=interval, theta=theta)
            devs.append(relative_deviation(traj.final_state, clean_final))
            extra.append(report.extra_macs)
        out[policy] = (float(np.mean(devs)), float(np.mean(extra)))
    return out
