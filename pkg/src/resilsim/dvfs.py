"""Operating points, the resilience-aware DVFS schedule, and the BER monitor.

Error-sensitive work (the earliest denoising steps and the embedding block
by default) runs at the nominal point; everything else runs at the
aggressive point. The monitor closes the loop between ABFT's runtime BER
estimate and a ladder of operating points, moving at most one rung per
update and only between timesteps.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import abft, faults, tensor


@dataclass(frozen=True)
class OperatingPoint:
    name: str
    voltage: float
    frequency_ghz: float
    ber: float
    energy_per_mac_pj: float

    def __post_init__(self):
        if self.voltage <= 0 or self.frequency_ghz <= 0:
            raise ValueError(f"voltage and frequency must be positive: {self}")
        if not (0.0 <= self.ber <= 1.0):
            raise ValueError(f"ber must be in [0, 1]: {self}")


def energy_per_mac(voltage: float, v_nominal: float, e_mac_nominal_pj: float) -> float:
    """Dynamic-power scaling: per-MAC energy grows with the voltage squared."""
    return e_mac_nominal_pj * (voltage / v_nominal) ** 2


def default_operating_points(e_mac_nominal_pj: float = 0.4,
                             v_nominal: float = 0.9) -> dict[str, OperatingPoint]:
    """Nominal, undervolted, and overclocked settings for a 32x32 array."""
    def point(name, v, f, ber):
        return OperatingPoint(name=name, voltage=v, frequency_ghz=f, ber=ber,
                              energy_per_mac_pj=energy_per_mac(v, v_nominal, e_mac_nominal_pj))
    return {
        "nominal": point("nominal", 0.9, 2.0, 0.0),
        "undervolt": point("undervolt", 0.68, 2.0, 3e-3),
        "overclock": point("overclock", 0.88, 3.5, 3e-3),
    }


@dataclass(frozen=True)
class DvfsSchedule:
    sensitive_steps: frozenset[int]
    sensitive_blocks: frozenset[str]
    nominal: OperatingPoint
    aggressive: OperatingPoint


def build_schedule(steps: int, blocks, nominal: OperatingPoint,
                   aggressive: OperatingPoint, sensitive_step_count: int = 2,
                   sensitive_blocks=("embed",),
                   extra_sensitive_steps=()) -> DvfsSchedule:
    """Default sensitivity: the first few steps on every block, plus the
    embedding block on every step."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    blocks = set(blocks)
    unknown = set(sensitive_blocks) - blocks
    if unknown:
        raise ValueError(f"unknown sensitive block names: {sorted(unknown)}")
    sens_steps = set(range(min(sensitive_step_count, steps))) | set(extra_sensitive_steps)
    bad_steps = {s for s in sens_steps if not (0 <= s < steps)}
    if bad_steps:
        raise ValueError(f"sensitive steps out of range: {sorted(bad_steps)}")
    return DvfsSchedule(
        sensitive_steps=frozenset(sens_steps),
        sensitive_blocks=frozenset(sensitive_blocks),
        nominal=nominal,
        aggressive=aggressive,
    )


def lookup_op_point(schedule: DvfsSchedule, step: int, block: str) -> OperatingPoint:
    if step in schedule.sensitive_steps or block in schedule.sensitive_blocks:
        return schedule.nominal
    return schedule.aggressive


@dataclass(frozen=True)
class MonitorState:
    """Feedback controller over a ladder ordered from safest to most aggressive."""

    target_ber: float
    band: float
    ladder: tuple[OperatingPoint, ...]
    index: int = 0
    window: int = 2  # consecutive low observations required before speeding up
    low_streak: int = 0

    def __post_init__(self):
        if not self.ladder:
            raise ValueError("ladder must be non-empty")
        if self.band <= 0:
            raise ValueError(f"band must be positive, got {self.band}")
        if not (0 <= self.index < len(self.ladder)):
            raise ValueError(f"rung index {self.index} outside ladder")

    @property
    def current(self) -> OperatingPoint:
        return self.ladder[self.index]


def monitor_step(state: MonitorState, observed_estimate: float) -> MonitorState:
    """One controller update; moves at most one rung and never leaves the ladder.

    Above target*band: step toward safest immediately. Below target/band for
    `window` consecutive updates: step toward most aggressive. In-band
    estimates reset the streak.
    """
    if observed_estimate > state.target_ber * state.band:
        return replace(state, index=max(0, state.index - 1), low_streak=0)
    if observed_estimate < state.target_ber / state.band:
        streak = state.low_streak + 1
        if streak >= state.window:
            return replace(state, index=min(len(state.ladder) - 1, state.index + 1),
                           low_streak=0)
        return replace(state, low_streak=streak)
    return replace(state, low_streak=0)


def simulate_monitor(state: MonitorState, windows: int, seed: int,
                     gemms_per_window: int = 5, theta: int = 1024,
                     gemm_size: int = 32) -> list[int]:
    """Closed-loop run: each window executes GEMMs at the current rung's BER,
    estimates the BER from the ABFT flags, and updates the controller.

    Returns the rung index after each window.
    """
    rng = faults.substream(seed, "monitor-operands")
    a = tensor.QuantTensor(
        rng.integers(-128, 128, size=(gemm_size, gemm_size), dtype=np.int8), 1.0)
    b = tensor.QuantTensor(
        rng.integers(-128, 128, size=(gemm_size, gemm_size), dtype=np.int8), 1.0)
    exact = tensor.gemm_exact(a, b)
    checks = abft.compute_checksums(a, b)
    trace = []
    for w in range(windows):
        history = []
        for g in range(gemms_per_window):
            sub = faults.substream(seed, w, g)
            flips = faults.sample_faults(gemm_size, gemm_size, state.current.ber,
                                         step=w, block="monitor", rng=sub)
            observed = faults.inject(exact, flips)
            det = abft.detect(observed, checks, theta)
            history.append((det, gemm_size, gemm_size))
        estimate = abft.estimate_ber(history, theta, window=gemms_per_window)
        state = monitor_step(state, estimate)
        trace.append(state.index)
    return trace
