"""Tile-based GEMV engine and the roofline/decode performance models.

Each processing element owns a block of weight rows streamed from one HBM
channel. Within a PE the dot product runs through a cascade of MAC
instances: instance ``j`` multiplies column ``j`` and hands its partial sums
to instance ``j + 1``. The rows of one slot share the activation on the B
port (broadcast lanes), so a P-lane instance advances P rows at a time.
Accumulation is therefore column-ascending for every row, starting from
``+0``, and the reference reduction uses the same order.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis
from .formats import ConfigurationError, MacDatatype, parse_datatype
from .oracle import oracle_mac_batch
from .packing import plan
from .pipeline import (
    IssueSlot,
    MacConfig,
    MacPipeline,
    stage1_map,
    stage2_multiply_postcompute,
    stage3_accumulate,
    stage4_select,
)

SCHEMA_VERSION = 1
MEMORY, COMPUTE = "memory", "compute"


# -- configuration -----------------------------------------------------------------

@dataclass(frozen=True)
class GemvConfig:
    channels: int = 32
    channel_bits: int = 512
    active_channels: int = 30
    freq_hz: float = 300e6
    bw_bytes_per_s: float = 460e9
    bw_efficiency: float = 0.74
    datatype: str = "int4xbf16"
    lanes_per_mac: int | None = None
    instances: int | None = None
    power_w: float | None = None
    name: str = "custom"

    def __post_init__(self):
        dt = parse_datatype(self.datatype)
        object.__setattr__(self, "datatype", dt.name)
        if self.lanes_per_mac is None:
            object.__setattr__(self, "lanes_per_mac", plan(dt).lanes)
        if not 0 < self.active_channels <= self.channels:
            raise ConfigurationError("active_channels must be in [1, channels]")
        if not 0 < self.bw_efficiency <= 1:
            raise ConfigurationError("bw_efficiency must be in (0, 1]")
        if self.freq_hz <= 0 or self.bw_bytes_per_s <= 0:
            raise ConfigurationError("frequency and bandwidth must be positive")
        if self.instances is not None and self.instances < 1:
            raise ConfigurationError("instances must be positive")

    @property
    def mac_datatype(self) -> MacDatatype:
        return parse_datatype(self.datatype)

    @property
    def weight_bits(self) -> int:
        return self.mac_datatype.type_a.width

    @property
    def instance_count(self) -> int:
        """Deployed instances: explicit, else every active channel fully populated."""
        return self.instances if self.instances is not None else self.active_channels * macs_per_channel(self)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GemvConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


def macs_per_channel(cfg: GemvConfig) -> int:
    """Cascaded instances one channel feeds: channel bits // (weight bits x lanes)."""
    per_cycle = cfg.weight_bits * cfg.lanes_per_mac
    if per_cycle > cfg.channel_bits:
        raise ConfigurationError(
            f"{cfg.channel_bits}-bit channel cannot feed {cfg.weight_bits} bits x {cfg.lanes_per_mac} lanes")
    return cfg.channel_bits // per_cycle


def instance_ceiling(cfg: GemvConfig) -> int:
    return cfg.channels * macs_per_channel(cfg)


@dataclass
class PerfReport:
    cycles: int
    time_s: float
    bytes_moved: float
    macs: float
    bound: str
    memory_time_s: float = 0.0
    compute_time_s: float = 0.0
    energy_j: float | None = None
    label: str = ""

    @property
    def time_ms(self) -> float:
        return self.time_s * 1e3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        d["time_ms"] = self.time_ms
        return d


def _bound(memory: float, compute: float) -> str:
    return COMPUTE if compute > memory else MEMORY


def roofline_gemv(cfg: GemvConfig, m: int, k: int, batch: int = 1) -> PerfReport:
    """Roofline time of ``batch`` activation vectors against an ``m x k`` weight matrix."""
    if min(m, k, batch) < 0:
        raise ConfigurationError("dimensions must be non-negative")
    weight_bytes = m * k * cfg.weight_bits / 8
    macs = batch * m * k
    mem = weight_bytes / (cfg.bw_bytes_per_s * cfg.bw_efficiency)
    comp = macs / (cfg.instance_count * cfg.lanes_per_mac * cfg.freq_hz)
    t = max(mem, comp)
    energy = None if cfg.power_w is None else cfg.power_w * t
    return PerfReport(math.ceil(t * cfg.freq_hz), t, weight_bytes, macs, _bound(mem, comp), mem, comp,
                      energy, f"{batch}x{k}x{m}")


# -- functional simulation -----------------------------------------------------------

@dataclass
class GemvResult:
    output: np.ndarray
    report: PerfReport
    row_datatypes: list[str] = field(default_factory=list)


def _row_datatypes(m: int, tile_rows: int, tile_dtypes: Sequence) -> list[MacDatatype]:
    dts = [parse_datatype(d) for d in tile_dtypes]
    return [dts[(r // tile_rows) % len(dts)] for r in range(m)]


def _check_tiles(dts: Sequence[MacDatatype]) -> None:
    first = dts[0]
    for d in dts:
        if d.type_b != first.type_b or d.type_p != first.type_p:
            raise ConfigurationError("tiles must share the activation and accumulator formats")


def oracle_gemv(weights, activations, row_dts: Sequence[MacDatatype]) -> np.ndarray:
    """Column-ascending oracle reduction per row, starting from +0."""
    w = np.asarray(weights, dtype=np.int64)
    x = np.asarray(activations, dtype=np.int64)
    acc = np.zeros(w.shape[0], dtype=np.int64)
    groups: dict[MacDatatype, list[int]] = {}
    for r, d in enumerate(row_dts):
        groups.setdefault(d, []).append(r)
    for d, rows in groups.items():
        rows = np.asarray(rows)
        for j in range(w.shape[1]):
            acc[rows] = oracle_mac_batch(w[rows, j], x[j], acc[rows], d)
    return acc


def _row_groups(row_dts, cfg: MacConfig):
    """Rows bundled into slots: consecutive rows of one datatype, one per broadcast A lane."""
    out = []
    r = 0
    m = len(row_dts)
    while r < m:
        d = row_dts[r]
        k = cfg.index(d)
        n_a = cfg.plans[k].lanes_a
        rows = [r]
        while len(rows) < n_a and r + len(rows) < m and row_dts[r + len(rows)] == d:
            rows.append(r + len(rows))
        out.append((k, rows))
        r += len(rows)
    return out


def _lane_of_row(cfg: MacConfig, k: int) -> list[int]:
    """Output lane carrying A operand ``i`` against B operand 0."""
    p = cfg.plans[k]
    return [p.lane_map.index((i, 0)) for i in range(p.lanes_a)]


def _slot_words(cfg, k, w_rows, x_j):
    dt = cfg.datatypes[k]
    a = 0
    for i, v in enumerate(w_rows):
        a |= int(v) << (i * dt.type_a.width)
    return a, int(x_j)


def simulate_gemv(cfg: GemvConfig, m: int, k: int, weights, activations, *,
                  tile_dtypes: Sequence | None = None, tile_rows: int | None = None,
                  mode: str = "batch") -> GemvResult:
    """Functional GEMV through the MAC pipeline plus its streaming cycle count.

    ``weights`` is an ``m x k`` array of A-operand bit patterns, ``activations``
    ``k`` B-operand patterns. ``tile_dtypes`` assigns datatypes to consecutive
    blocks of ``tile_rows`` rows (default: one tile per active channel).
    ``mode="cycle"`` steps a cascade of pipeline instances cycle by cycle;
    ``"batch"`` evaluates the same stages over whole columns at once.
    """
    w = np.asarray(weights, dtype=np.int64)
    x = np.asarray(activations, dtype=np.int64)
    if w.size != m * k or x.size != k:
        raise ConfigurationError(f"expected weights {m}x{k} and {k} activations")
    w, x = w.reshape(m, k), x.reshape(k)
    tile_dtypes = list(tile_dtypes or [cfg.datatype])
    tile_rows = tile_rows or max(1, -(-m // cfg.active_channels))
    row_dts = _row_datatypes(m, tile_rows, tile_dtypes)
    if row_dts:
        _check_tiles(row_dts)
    mac_cfg = MacConfig(tuple(dict.fromkeys(parse_datatype(d) for d in tile_dtypes)))
    groups = _row_groups(row_dts, mac_cfg)
    if mode == "batch":
        out, cycles = _simulate_batch(mac_cfg, groups, w, x, m), None
    elif mode == "cycle":
        out, cycles = _simulate_cycle(mac_cfg, groups, w, x, m)
    else:
        raise ConfigurationError(f"unknown mode {mode!r}")
    report = _stream_report(cfg, row_dts, k, len(groups), mac_cfg.latency, cycles)
    return GemvResult(out, report, [d.name for d in row_dts])


def _simulate_batch(mac_cfg, groups, w, x, m):
    out = np.zeros(m, dtype=np.int64)
    by_dtype: dict[int, list[list[int]]] = {}
    for k_idx, rows in groups:
        by_dtype.setdefault(k_idx, []).append(rows)
    for k_idx, row_sets in by_dtype.items():
        dt = mac_cfg.datatypes[k_idx]
        n_a = mac_cfg.plans[k_idx].lanes_a
        lanes = _lane_of_row(mac_cfg, k_idx)
        idx = np.array([rs + [-1] * (n_a - len(rs)) for rs in row_sets])      # (slots, I)
        valid = idx >= 0
        acc = np.zeros((len(idx), mac_cfg.lanes), dtype=np.int64)
        for j in range(w.shape[1]):
            a_lanes = np.where(valid, w[np.maximum(idx, 0), j], 0)
            a_word = np.zeros(len(idx), dtype=np.int64)
            for i in range(n_a):
                a_word |= a_lanes[:, i] << (i * dt.type_a.width)
            b_word = np.full(len(idx), x[j], dtype=np.int64)
            c = np.zeros_like(acc)
            c[:, lanes] = acc[:, lanes]
            s2 = stage2_multiply_postcompute(stage1_map(k_idx, a_word, b_word, mac_cfg), mac_cfg)
            res = stage4_select(stage3_accumulate(s2, c, mac_cfg), mac_cfg)
            acc = np.zeros_like(acc)
            acc[:, : res.shape[1]] = res
        for s, rs in enumerate(row_sets):
            for i, r in enumerate(rs):
                out[r] = acc[s, lanes[i]]
    return out


def _simulate_cycle(mac_cfg, groups, w, x, m):
    """Systolic cascade: instance j sees slot g at cycle g + j * latency."""
    k = w.shape[1]
    out = np.zeros(m, dtype=np.int64)
    if k == 0 or not groups:
        return out, 0
    pipes = [MacPipeline(mac_cfg) for _ in range(k)]
    lat = mac_cfg.latency
    partial: list[dict] = [dict() for _ in range(k + 1)]   # partial[j][g] = c lanes entering instance j
    for g in range(len(groups)):
        partial[0][g] = (0,) * mac_cfg.lanes
    n_cycles = len(groups) + k * lat
    for t in range(n_cycles):
        for j, pipe in enumerate(pipes):
            g = t - j * lat
            slot = None
            if 0 <= g < len(groups):
                k_idx, rows = groups[g]
                a, b = _slot_words(mac_cfg, k_idx, [w[r, j] for r in rows], x[j])
                c = partial[j].pop(g)
                slot = IssueSlot(k_idx, a, b, c, True, g)
            done = pipe.step(slot)
            if done is not None:
                res = list(done.lanes) + [0] * (mac_cfg.lanes - len(done.lanes))
                lanes = _lane_of_row(mac_cfg, done.dtype_select)
                c_next = [0] * mac_cfg.lanes
                for lane in lanes:
                    c_next[lane] = res[lane]
                partial[j + 1][done.tag] = tuple(c_next)
    for g, (k_idx, rows) in enumerate(groups):
        lanes = _lane_of_row(mac_cfg, k_idx)
        res = partial[k].get(g)
        if res is None:
            raise RuntimeError("cascade lost a slot")
        for i, r in enumerate(rows):
            out[r] = res[lanes[i]]
    return out, n_cycles


def _stream_report(cfg: GemvConfig, row_dts, k: int, n_slots: int, latency: int, measured) -> PerfReport:
    """Cycles to stream the weight bits over the active channels, plus cascade fill."""
    bits = sum(d.type_a.width for d in row_dts) * k
    per_cycle = cfg.active_channels * cfg.channel_bits
    stream = math.ceil(bits / per_cycle) if bits else 0
    cycles = stream + (k * latency if bits else 0)
    if measured is not None:
        cycles = measured
    t = cycles / cfg.freq_hz
    mem = bits / 8 / (cfg.bw_bytes_per_s * cfg.bw_efficiency)
    comp = len(row_dts) * k / (cfg.instance_count * cfg.lanes_per_mac * cfg.freq_hz)
    energy = None if cfg.power_w is None else cfg.power_w * t
    return PerfReport(cycles, t, bits / 8, len(row_dts) * k, _bound(mem, comp), mem, comp, energy,
                      f"1x{k}x{len(row_dts)}")


# -- LLM decode model --------------------------------------------------------------

@dataclass(frozen=True)
class WeightSpec:
    datatype: str
    bits: float
    group_size: int = 0
    group_overhead_bits: float = 0.0
    count: int = 0
    top_k: int = 0

    @property
    def bits_per_weight(self) -> float:
        extra = self.group_overhead_bits / self.group_size if self.group_size else 0.0
        return self.bits + extra

    @classmethod
    def from_dict(cls, d: dict | None) -> "WeightSpec | None":
        if d is None:
            return None
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class LlmModelDesc:
    name: str
    layers: int
    hidden: int
    ffn: int
    heads: int
    kv_heads: int
    head_dim: int
    linear: WeightSpec
    mac_profile: str
    experts: WeightSpec | None = None
    kv_bits: int = 16
    attention_datatype: str = "bf16xbf16"

    def __post_init__(self):
        if min(self.layers, self.hidden, self.ffn, self.heads, self.kv_heads, self.head_dim) < 1:
            raise ConfigurationError(f"{self.name}: dimensions must be positive")
        if self.heads % self.kv_heads:
            raise ConfigurationError(f"{self.name}: heads must be a multiple of kv_heads")
        if self.mac_profile not in analysis.DENSITY_TABLE:
            raise ConfigurationError(f"{self.name}: unknown mac_profile {self.mac_profile!r}")
        if self.experts is not None and not 0 < self.experts.top_k <= self.experts.count:
            raise ConfigurationError(f"{self.name}: expert top_k must be in [1, count]")

    @property
    def attn_proj_params(self) -> int:
        q = self.heads * self.head_dim
        kv = self.kv_heads * self.head_dim
        return self.hidden * q + 2 * self.hidden * kv + q * self.hidden

    @property
    def expert_params(self) -> int:
        """Gate, up and down projections of one FFN block."""
        return 3 * self.hidden * self.ffn

    @property
    def router_params(self) -> int:
        return self.hidden * self.experts.count if self.experts else 0

    def active_experts(self, batch: int) -> float:
        """Expected distinct experts touched by ``batch`` tokens with uniform routing."""
        if self.experts is None:
            return 1.0
        e, k = self.experts.count, self.experts.top_k
        return e * (1.0 - (1.0 - k / e) ** batch)

    def layer_weight_bytes(self, batch: int = 1) -> float:
        lin = (self.attn_proj_params + self.router_params) * self.linear.bits_per_weight / 8
        if self.experts is None:
            return lin + self.expert_params * self.linear.bits_per_weight / 8
        return lin + self.active_experts(batch) * self.expert_params * self.experts.bits_per_weight / 8

    @property
    def total_weight_bytes(self) -> float:
        """Every transformer-layer weight, all experts included."""
        lin = (self.attn_proj_params + self.router_params) * self.linear.bits_per_weight / 8
        if self.experts is None:
            ffn = self.expert_params * self.linear.bits_per_weight / 8
        else:
            ffn = self.experts.count * self.expert_params * self.experts.bits_per_weight / 8
        return self.layers * (lin + ffn)

    def layer_macs(self, context: int) -> float:
        """MACs per token per layer: projections, active experts, attention over ``context``."""
        ffn = self.expert_params * (self.experts.top_k if self.experts else 1)
        attn = 2 * self.heads * self.head_dim * context
        return self.attn_proj_params + self.router_params + ffn + attn

    def kv_bytes(self, context: int) -> float:
        """K and V cache read per token per layer."""
        return 2 * self.kv_heads * self.head_dim * context * self.kv_bits / 8

    @classmethod
    def from_dict(cls, d: dict) -> "LlmModelDesc":
        att = d.get("attention", {})
        return cls(d["name"], d["layers"], d["hidden"], d["ffn"], d["heads"], d["kv_heads"], d["head_dim"],
                   WeightSpec.from_dict(d["linear"]), d["mac_profile"], WeightSpec.from_dict(d.get("experts")),
                   att.get("kv_bits", 16), att.get("datatype", "bf16xbf16"))


@dataclass(frozen=True)
class Platform:
    name: str
    luts: int
    dsps: int
    freq_hz: float
    bw_bytes_per_s: float
    bw_efficiency: float = 1.0
    ffs: int | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "Platform":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})

    @property
    def effective_bw(self) -> float:
        return self.bw_bytes_per_s * self.bw_efficiency


BASELINE, XTRAMAC = "baseline", "xtramac"


def mac_units(platform: Platform, profile: str, arch: str = XTRAMAC) -> float:
    """Concurrent MAC lanes that fit the platform.

    The baseline count is set by its scarcest resource. XtraMAC multiplies it
    by the mean of the LUT and DSP compute-density ratios, the two resources
    whose per-lane footprint shrinks.
    """
    base, xm, _ = analysis.DENSITY_TABLE[profile]
    budget = {"lut": platform.luts, "dsp": platform.dsps}
    if platform.ffs is not None:
        budget["ff"] = platform.ffs
    units = min(budget[r] / getattr(base, r) for r in budget)
    if arch == BASELINE:
        return units
    if arch != XTRAMAC:
        raise ConfigurationError(f"unknown architecture {arch!r}")
    dens = analysis.compute_density(base, xm)
    return units * (dens["lut"] + dens["dsp"]) / 2


@dataclass
class DecodeReport:
    model: str
    arch: str
    batch: int
    context: int
    layers: list[PerfReport]
    mac_units: float

    @property
    def time_s(self) -> float:
        return sum(r.time_s for r in self.layers)

    @property
    def time_ms(self) -> float:
        return 1e3 * self.time_s

    @property
    def bound(self) -> str:
        comp = sum(r.compute_time_s for r in self.layers)
        mem = sum(r.memory_time_s for r in self.layers)
        return _bound(mem, comp)

    def to_dict(self, per_layer: bool = False) -> dict:
        d = {"schema_version": SCHEMA_VERSION, "model": self.model, "arch": self.arch, "batch": self.batch,
             "context": self.context, "time_ms": self.time_ms, "bound": self.bound,
             "mac_units": self.mac_units, "layers": len(self.layers)}
        if per_layer:
            d["per_layer"] = [r.to_dict() for r in self.layers]
        return d


def decode_latency(model: LlmModelDesc, batch: int, context: int, platform: Platform,
                   arch: str = XTRAMAC) -> DecodeReport:
    """One decode step: per layer ``max(weights, compute) + KV stream``."""
    if batch < 1 or context < 0:
        raise ConfigurationError("batch must be >= 1 and context >= 0")
    units = mac_units(platform, model.mac_profile, arch)
    rate = units * platform.freq_hz
    layers = []
    for i in range(model.layers):
        wbytes = model.layer_weight_bytes(batch)
        kv = batch * model.kv_bytes(context)
        macs = batch * model.layer_macs(context)
        mem = wbytes / platform.effective_bw
        comp = macs / rate
        t = max(mem, comp) + kv / platform.effective_bw
        layers.append(PerfReport(math.ceil(t * platform.freq_hz), t, wbytes + kv, macs, _bound(mem, comp),
                                 mem, comp, None, f"layer{i}"))
    return DecodeReport(model.name, arch, batch, context, layers, units)


def decode_speedup(model: LlmModelDesc, batch: int, context: int, platform: Platform) -> float:
    base = decode_latency(model, batch, context, platform, BASELINE)
    new = decode_latency(model, batch, context, platform, XTRAMAC)
    return base.time_s / new.time_s


# -- bundled data ------------------------------------------------------------------

def _data_dir():
    return resources.files("xtramac") / "data"


def bundled_models() -> list[str]:
    return sorted(p.name[:-5] for p in (_data_dir() / "models").iterdir() if p.name.endswith(".json"))


def bundled_platforms() -> list[str]:
    return sorted(p.name[:-5] for p in (_data_dir() / "platforms").iterdir() if p.name.endswith(".json"))


def _load(kind: str, ref: str | Path) -> dict:
    path = Path(ref)
    if path.suffix == ".json" and path.exists():
        text = path.read_text()
    else:
        res = _data_dir() / kind / f"{ref}.json"
        if not res.is_file():
            raise ConfigurationError(f"no bundled {kind[:-1]} named {ref!r} and no such file")
        text = res.read_text()
    d = json.loads(text)
    if d.get("schema_version", 1) != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported schema_version {d.get('schema_version')}")
    return d


def load_model(ref: str | Path) -> LlmModelDesc:
    return LlmModelDesc.from_dict(_load("models", ref))


def load_platform(ref: str | Path) -> Platform:
    return Platform.from_dict(_load("platforms", ref))


def load_gemv_config(ref: str | Path, **overrides) -> GemvConfig:
    cfg = GemvConfig.from_dict(_load("platforms", ref))
    return replace(cfg, **overrides) if overrides else cfg


def model_uses(model: LlmModelDesc) -> list[str]:
    """Datatypes the model's MACs run in."""
    out = [model.linear.datatype]
    if model.experts:
        out.append(model.experts.datatype)
    out.append(model.attention_datatype)
    return list(dict.fromkeys(parse_datatype(d).name for d in out))

