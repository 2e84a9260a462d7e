"""Run configuration: parsing, validation with full error reporting, defaults.

The config is a YAML document of nested sections. Every field has a
default matching the reference hardware setup (32x32 arrays, threshold at
the 10th bit, checkpoint interval 10, nominal/undervolt/overclock table).
Unknown keys are rejected, and validation collects every error before
failing rather than stopping at the first.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import yaml

from .dvfs import DvfsSchedule, OperatingPoint, build_schedule, energy_per_mac
from .memsim import MemConfig
from .recovery import RecoveryPolicy
from .workload import ToyModel, build_toy_model


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in errors))


@dataclass(frozen=True)
class WorkloadConfig:
    dim: int = 64
    batch: int = 32
    depth: int = 4
    steps: int = 20
    sigma0: float = 0.3
    sigma_decay: float = 0.8
    weight_gain: float = 0.45
    seed: int = 1234


@dataclass(frozen=True)
class ArrayConfig:
    count: int = 64
    size: int = 32


@dataclass(frozen=True)
class AbftConfig:
    theta_bit: int = 10
    overhead_fraction: float = 0.063

    @property
    def theta(self) -> int:
        return 1 << self.theta_bit


@dataclass(frozen=True)
class CheckpointConfig:
    interval: int = 10
    include_embedding: bool = True


@dataclass(frozen=True)
class PointConfig:
    voltage: float
    frequency_ghz: float
    ber: float
    energy_per_mac_pj: float | None = None


@dataclass(frozen=True)
class DvfsConfig:
    v_nominal: float = 0.9
    e_mac_nominal_pj: float = 0.4
    sensitive_step_count: int = 2
    sensitive_blocks: tuple[str, ...] = ("embed",)
    extra_sensitive_steps: tuple[int, ...] = ()
    aggressive: str = "undervolt"
    points: dict[str, PointConfig] = field(default_factory=lambda: {
        "nominal": PointConfig(0.9, 2.0, 0.0),
        "undervolt": PointConfig(0.68, 2.0, 3e-3),
        "overclock": PointConfig(0.88, 3.5, 3e-3),
    })


@dataclass(frozen=True)
class MemoryConfig:
    dram_row_bytes: int = 2048
    cache_line_bytes: int = 64
    energy_row_activate_pj: float = 2000.0
    energy_per_byte_pj: float = 31.0
    bandwidth_bytes_per_s: float = 256e9
    row_activate_latency_ns: float = 30.0
    layout: str = "tile_packed"


@dataclass(frozen=True)
class RunConfig:
    workload: WorkloadConfig = WorkloadConfig()
    array: ArrayConfig = ArrayConfig()
    abft: AbftConfig = AbftConfig()
    checkpoint: CheckpointConfig = CheckpointConfig()
    policy: RecoveryPolicy = RecoveryPolicy.ROLLBACK
    dvfs: DvfsConfig = DvfsConfig()
    memory: MemoryConfig = MemoryConfig()
    fault_seed: int = 2024
    output_dir: str = "out"

    # -- factories wiring the config into the simulator modules --

    def make_model(self) -> ToyModel:
        w = self.workload
        return build_toy_model(dim=w.dim, depth=w.depth, steps=w.steps, seed=w.seed,
                               batch=w.batch, sigma0=w.sigma0, sigma_decay=w.sigma_decay,
                               weight_gain=w.weight_gain)

    def operating_points(self) -> dict[str, OperatingPoint]:
        out = {}
        for name, p in self.dvfs.points.items():
            e_mac = p.energy_per_mac_pj
            if e_mac is None:
                e_mac = energy_per_mac(p.voltage, self.dvfs.v_nominal,
                                       self.dvfs.e_mac_nominal_pj)
            out[name] = OperatingPoint(name=name, voltage=p.voltage,
                                       frequency_ghz=p.frequency_ghz, ber=p.ber,
                                       energy_per_mac_pj=e_mac)
        return out

    def make_schedule(self, block_names) -> DvfsSchedule:
        points = self.operating_points()
        return build_schedule(self.workload.steps, block_names,
                              nominal=points["nominal"],
                              aggressive=points[self.dvfs.aggressive],
                              sensitive_step_count=self.dvfs.sensitive_step_count,
                              sensitive_blocks=self.dvfs.sensitive_blocks,
                              extra_sensitive_steps=self.dvfs.extra_sensitive_steps)

    def make_mem(self) -> MemConfig:
        m = self.memory
        return MemConfig(dram_row_bytes=m.dram_row_bytes,
                         cache_line_bytes=m.cache_line_bytes,
                         energy_row_activate_pj=m.energy_row_activate_pj,
                         energy_per_byte_pj=m.energy_per_byte_pj,
                         bandwidth_bytes_per_s=m.bandwidth_bytes_per_s,
                         row_activate_latency_ns=m.row_activate_latency_ns)

    def to_dict(self) -> dict:
        d = {
            "workload": asdict(self.workload),
            "array": asdict(self.array),
            "abft": asdict(self.abft),
            "checkpoint": asdict(self.checkpoint),
            "recovery": {"policy": self.policy.value},
            "dvfs": {**asdict(self.dvfs),
                     "sensitive_blocks": list(self.dvfs.sensitive_blocks),
                     "extra_sensitive_steps": list(self.dvfs.extra_sensitive_steps),
                     "points": {k: {kk: vv for kk, vv in asdict(p).items() if vv is not None}
                                for k, p in self.dvfs.points.items()}},
            "memory": asdict(self.memory),
            "fault": {"seed": self.fault_seed},
            "output": {"directory": self.output_dir},
        }
        return d


def render(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


class _Section:
    """Typed field extraction over one config mapping, accumulating errors."""

    def __init__(self, name: str, data: dict, errors: list[str]):
        self.name = name
        self.data = data or {}
        self.errors = errors
        if not isinstance(self.data, dict):
            errors.append(f"{name}: expected a mapping, got {type(self.data).__name__}")
            self.data = {}

    def check_keys(self, known):
        for key in self.data:
            if key not in known:
                self.errors.append(f"{self.name}.{key}: unknown key")

    def get(self, key, default, kind, check=None, message=None):
        if key not in self.data:
            return default
        value = self.data[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind is int and isinstance(value, bool):
            self.errors.append(f"{self.name}.{key}: expected {kind.__name__}")
            return default
        if not isinstance(value, kind):
            self.errors.append(f"{self.name}.{key}: expected {kind.__name__}, "
                               f"got {type(value).__name__}")
            return default
        if check is not None and not check(value):
            self.errors.append(f"{self.name}.{key}: {message}")
            return default
        return value


def _positive(x):
    return x > 0


def parse_config(text: str) -> RunConfig:
    """Parse and validate a YAML config document; empty input means all defaults."""
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError([f"document is not valid YAML: {exc}"])
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping"])

    errors: list[str] = []
    known_sections = {"workload", "array", "abft", "checkpoint", "recovery",
                      "dvfs", "memory", "fault", "output"}
    for key in raw:
        if key not in known_sections:
            errors.append(f"{key}: unknown section")

    w = _Section("workload", raw.get("workload"), errors)
    w.check_keys({"dim", "batch", "depth", "steps", "sigma0", "sigma_decay",
                  "weight_gain", "seed"})
    workload = WorkloadConfig(
        dim=w.get("dim", 64, int, _positive, "must be >= 1"),
        batch=w.get("batch", 32, int, _positive, "must be >= 1"),
        depth=w.get("depth", 4, int, _positive, "must be >= 1"),
        steps=w.get("steps", 20, int, _positive, "must be >= 1"),
        sigma0=w.get("sigma0", 0.3, float, lambda v: 0 < v < 1, "must be in (0, 1)"),
        sigma_decay=w.get("sigma_decay", 0.8, float, lambda v: 0 < v <= 1,
                          "must be in (0, 1]"),
        weight_gain=w.get("weight_gain", 0.45, float, lambda v: 0 < v < 1,
                          "must be in (0, 1)"),
        seed=w.get("seed", 1234, int),
    )

    a = _Section("array", raw.get("array"), errors)
    a.check_keys({"count", "size"})
    array = ArrayConfig(
        count=a.get("count", 64, int, _positive, "must be >= 1"),
        size=a.get("size", 32, int, _positive, "must be >= 1"),
    )

    ab = _Section("abft", raw.get("abft"), errors)
    ab.check_keys({"theta_bit", "overhead_fraction"})
    abft = AbftConfig(
        theta_bit=ab.get("theta_bit", 10, int, lambda v: 0 <= v <= 31,
                         "must be a bit position in [0, 31]"),
        overhead_fraction=ab.get("overhead_fraction", 0.063, float,
                                 lambda v: v >= 0, "must be >= 0"),
    )

    ck = _Section("checkpoint", raw.get("checkpoint"), errors)
    ck.check_keys({"interval", "include_embedding"})
    checkpoint = CheckpointConfig(
        interval=ck.get("interval", 10, int, lambda v: v >= 1, "interval must be >= 1"),
        include_embedding=ck.get("include_embedding", True, bool),
    )

    rc = _Section("recovery", raw.get("recovery"), errors)
    rc.check_keys({"policy"})
    policy = RecoveryPolicy.ROLLBACK
    policy_name = rc.get("policy", "rollback", str)
    try:
        policy = RecoveryPolicy.parse(policy_name)
    except ValueError as exc:
        errors.append(f"recovery.policy: {exc}")

    dv = _Section("dvfs", raw.get("dvfs"), errors)
    dv.check_keys({"v_nominal", "e_mac_nominal_pj", "sensitive_step_count",
                   "sensitive_blocks", "extra_sensitive_steps", "aggressive", "points"})
    points_raw = dv.get("points", None, dict)
    points = dict(DvfsConfig().points)
    if points_raw is not None:
        points = {}
        for pname, pdata in points_raw.items():
            ps = _Section(f"dvfs.points.{pname}", pdata, errors)
            ps.check_keys({"voltage", "frequency_ghz", "ber", "energy_per_mac_pj"})
            points[pname] = PointConfig(
                voltage=ps.get("voltage", 0.9, float, _positive, "must be positive"),
                frequency_ghz=ps.get("frequency_ghz", 2.0, float, _positive,
                                     "must be positive"),
                ber=ps.get("ber", 0.0, float, lambda v: 0 <= v <= 1, "must be in [0, 1]"),
                energy_per_mac_pj=ps.get("energy_per_mac_pj", None, float, _positive,
                                         "must be positive"),
            )
    sens_blocks = dv.get("sensitive_blocks", ["embed"], list)
    extra_steps = dv.get("extra_sensitive_steps", [], list)
    aggressive = dv.get("aggressive", "undervolt", str)
    if aggressive not in points:
        errors.append(f"dvfs.aggressive: unknown operating point {aggressive!r}")
    if "nominal" not in points:
        errors.append("dvfs.points: a point named 'nominal' is required")
    dvfs = DvfsConfig(
        v_nominal=dv.get("v_nominal", 0.9, float, _positive, "must be positive"),
        e_mac_nominal_pj=dv.get("e_mac_nominal_pj", 0.4, float, _positive,
                                "must be positive"),
        sensitive_step_count=dv.get("sensitive_step_count", 2, int,
                                    lambda v: v >= 0, "must be >= 0"),
        sensitive_blocks=tuple(sens_blocks),
        extra_sensitive_steps=tuple(extra_steps),
        aggressive=aggressive if aggressive in points else "nominal",
        points=points,
    )

    me = _Section("memory", raw.get("memory"), errors)
    me.check_keys({"dram_row_bytes", "cache_line_bytes", "energy_row_activate_pj",
                   "energy_per_byte_pj", "bandwidth_bytes_per_s",
                   "row_activate_latency_ns", "layout"})
    pow2 = lambda v: v > 0 and (v & (v - 1)) == 0
    memory = MemoryConfig(
        dram_row_bytes=me.get("dram_row_bytes", 2048, int, pow2, "must be a power of two"),
        cache_line_bytes=me.get("cache_line_bytes", 64, int, pow2,
                                "must be a power of two"),
        energy_row_activate_pj=me.get("energy_row_activate_pj", 2000.0, float,
                                      _positive, "must be positive"),
        energy_per_byte_pj=me.get("energy_per_byte_pj", 31.0, float, _positive,
                                  "must be positive"),
        bandwidth_bytes_per_s=me.get("bandwidth_bytes_per_s", 256e9, float, _positive,
                                     "must be positive"),
        row_activate_latency_ns=me.get("row_activate_latency_ns", 30.0, float,
                                       _positive, "must be positive"),
        layout=me.get("layout", "tile_packed", str,
                      lambda v: v in ("row_major", "tile_packed"),
                      "must be 'row_major' or 'tile_packed'"),
    )

    fa = _Section("fault", raw.get("fault"), errors)
    fa.check_keys({"seed"})
    fault_seed = fa.get("seed", 2024, int)

    ou = _Section("output", raw.get("output"), errors)
    ou.check_keys({"directory"})
    output_dir = ou.get("directory", "out", str)

    # Cross-field check: sensitive blocks must exist in the generated workload.
    valid_blocks = {"embed"} | {f"blk{j}" for j in range(workload.depth)}
    for name in dvfs.sensitive_blocks:
        if name not in valid_blocks:
            errors.append(f"dvfs.sensitive_blocks: unknown block name {name!r}")
    for s in dvfs.extra_sensitive_steps:
        if not (isinstance(s, int) and 0 <= s < workload.steps):
            errors.append(f"dvfs.extra_sensitive_steps: step {s!r} outside "
                          f"[0, {workload.steps - 1}]")

    if errors:
        raise ConfigError(errors)

    return RunConfig(workload=workload, array=array, abft=abft, checkpoint=checkpoint,
                     policy=policy, dvfs=dvfs, memory=memory, fault_seed=fault_seed,
                     output_dir=output_dir)
