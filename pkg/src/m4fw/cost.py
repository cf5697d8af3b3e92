"""Storage, peak memory, what-if NPU projection, operator census and slowdown summaries."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .model import ComponentSpec, GENERATORS, execute_path, load_component_table
from .nn.trace import OpTrace, check_operators, taxonomy, trace_summary

BYTES_PER_PARAM = {"FP32": 4.0, "FP16": 2.0, "INT8": 1.0, "INT4": 0.5}
ACTIVATION_BUFFER = 0.02  # fraction of resident weight bytes


class CostError(ValueError):
    pass


class CannotHost(CostError):
    pass


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("m4fw").joinpath("fixtures", name)))


def load_json(source) -> dict:
    """Load a JSON fixture by path, falling back to the shipped fixture of the same name."""
    p = Path(source)
    if not p.exists():
        shipped = fixture_path(p.name)
        if not shipped.exists():
            raise FileNotFoundError(f"no such fixture: {source}")
        p = shipped
    return json.loads(p.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class CostReport:
    storage_bytes: float = 0.0
    peak_memory_bytes: float = 0.0
    latency_s: float = 0.0
    energy_j: float = 0.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if v < 0:
                raise CostError(f"{k} must be non-negative")


# -- bytes ---------------------------------------------------------------------------

def bytes_of(spec: ComponentSpec | None, fmt: str | None = None, rows: int | None = None) -> int:
    """Parameter bytes at ``fmt`` (default: the spec's own format).

    INT4 rounds up per row when the row count is known, else over the whole tensor.
    """
    if spec is None:
        return 0
    fmt = (fmt or spec.format).upper()
    if fmt not in BYTES_PER_PARAM:
        raise CostError(f"unknown format: {fmt}")
    if fmt == "INT4":
        if rows:
            cols = math.ceil(spec.params / rows)
            return rows * math.ceil(cols / 2)
        return math.ceil(spec.params / 2)
    return int(spec.params * BYTES_PER_PARAM[fmt])


def fm_component_bytes(specs=None, backbone_format: str = "INT4", quantize_generators: bool = False) -> dict:
    """Per-component bytes of the shared model; the backbone (and optionally generators) at ``backbone_format``."""
    specs = specs or load_component_table()
    out = {}
    for name, spec in specs.items():
        fmt = None
        if name == "Backbone" or (quantize_generators and name in GENERATORS):
            fmt = backbone_format
        out[name] = bytes_of(spec, fmt)
    return out


def adapter_bytes(source=None) -> list[int]:
    data = load_json(source or fixture_path("adapter_sizes.json"))
    return [int(t["bytes"]) for t in data["tasks"]]


def ts_sizes(source=None, key: str = "storage_bytes") -> list[int]:
    data = load_json(source or fixture_path("ts_calibration.json"))
    return [int(m[key]) for m in data["models"]]


# -- storage ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CurvePoint:
    n: int
    ts_bytes: int
    fm_bytes: int


def storage_curve(n_max: int = 50, ts: list[int] | None = None, adapters: list[int] | None = None,
                  backbone_format: str = "INT4", quantize_generators: bool = False, specs=None) -> list[CurvePoint]:
    """TS(n) = sum of the first n TS models; FM(n) = shared components + first n adapters."""
    ts = ts_sizes() if ts is None else list(ts)
    adapters = adapter_bytes() if adapters is None else list(adapters)
    if n_max < 1:
        raise CostError("task count must be at least 1")
    if len(ts) < n_max or len(adapters) < n_max:
        raise CostError(f"missing calibration: need {n_max} TS and adapter sizes, "
                        f"have {len(ts)} and {len(adapters)}")
    base = sum(fm_component_bytes(specs, backbone_format, quantize_generators).values())
    ts_cum = np.cumsum(ts[:n_max])
    ad_cum = np.cumsum(adapters[:n_max])
    return [CurvePoint(n + 1, int(ts_cum[n]), int(base + ad_cum[n])) for n in range(n_max)]


def crossovers(curve: list[CurvePoint]) -> list[int]:
    """Every n at which TS overtakes FM (the sign of TS - FM turns positive)."""
    out, prev = [], None
    for p in curve:
        above = p.ts_bytes > p.fm_bytes
        if above and prev is False:
            out.append(p.n)
        if above and prev is None:
            out.append(p.n)
        prev = above
    return out


def crossover(curve: list[CurvePoint]) -> int | None:
    """Smallest n with TS(n) > FM(n)."""
    return next((p.n for p in curve if p.ts_bytes > p.fm_bytes), None)


# -- memory ------------------------------------------------------------------------------

@dataclass
class MemoryReport:
    approach: str
    budget_bytes: float
    weight_bytes: int
    buffer_bytes: float
    resident: list = field(default_factory=list)
    cold: list = field(default_factory=list)
    base_bytes: int = 0

    @property
    def peak_bytes(self) -> float:
        return self.weight_bytes + self.buffer_bytes

    @property
    def resident_count(self) -> int:
        return len(self.resident)

    def to_json(self) -> dict:
        return {"approach": self.approach, "budget_bytes": self.budget_bytes, "base_bytes": self.base_bytes,
                "weight_bytes": self.weight_bytes, "buffer_bytes": self.buffer_bytes,
                "peak_bytes": self.peak_bytes, "resident": self.resident_count,
                "total": self.resident_count + len(self.cold), "cold": self.cold}


def greedy_fit(items, budget: float, buffer: float = ACTIVATION_BUFFER, base: float = 0.0):
    """Pick residents by descending priority, then ascending size, ties by id.

    ``items`` are (id, bytes, priority).  Returns (resident ids, cold ids, used bytes).
    Residency requires (base + used) * (1 + buffer) <= budget.
    """
    order = sorted(items, key=lambda it: (-it[2], it[1], _id_key(it[0])))
    used = 0
    resident, cold = [], []
    for ident, size, _ in order:
        if (base + used + size) * (1 + buffer) <= budget:
            used += size
            resident.append(ident)
        else:
            cold.append(ident)
    return resident, cold, used


def _id_key(ident):
    s = str(ident)
    digits = "".join(ch for ch in s if ch.isdigit())
    return (s.rstrip("0123456789"), int(digits) if digits else -1, s)


def memory_footprint(approach: str, n_tasks: int = 50, budget: float = 12e9, backbone_format: str = "INT4",
                     quantize_generators: bool = False, ts: list[int] | None = None,
                     adapters: list[int] | None = None, task_ids=None, priorities=None,
                     buffer: float = ACTIVATION_BUFFER, specs=None) -> MemoryReport:
    if budget <= 0:
        raise CostError("budget must be positive")
    ids = list(task_ids) if task_ids is not None else [f"T{i + 1}" for i in range(n_tasks)]
    prio = list(priorities) if priorities is not None else [0] * n_tasks
    if approach == "FM":
        base = sum(fm_component_bytes(specs, backbone_format, quantize_generators).values())
        if base * (1 + buffer) > budget:
            raise CannotHost(f"foundation model needs {base * (1 + buffer):.0f} bytes, budget is {budget:.0f}")
        adapters = adapter_bytes() if adapters is None else list(adapters)
        items = list(zip(ids, adapters[:n_tasks], prio))
        resident, cold, used = greedy_fit(items, budget, buffer, base)
        weight = base + used
        return MemoryReport("FM", budget, weight, weight * buffer, resident, cold, base)
    if approach == "TS":
        ts = ts_sizes(key="runtime_bytes") if ts is None else list(ts)
        if len(ts) < n_tasks:
            raise CostError(f"missing calibration: need {n_tasks} TS sizes, have {len(ts)}")
        items = list(zip(ids, ts[:n_tasks], prio))
        resident, cold, used = greedy_fit(items, budget, buffer)
        return MemoryReport("TS", budget, used, used * buffer, resident, cold)
    raise CostError(f"unknown approach: {approach}")


# -- processors / what-if -----------------------------------------------------------------

@dataclass(frozen=True)
class ProcessorProfile:
    name: str
    supported: frozenset
    speedup: float
    energy_ratio: float

    def __post_init__(self):
        if self.speedup <= 0 or self.energy_ratio <= 0:
            raise CostError("speedup and energy ratio must be positive")
        check_operators(self.supported)


def load_profiles(source=None) -> dict[str, ProcessorProfile]:
    data = load_json(source or fixture_path("processors.json"))
    out = {}
    for p in data["profiles"]:
        sup = taxonomy() if p["supported"] == "all" else frozenset(p["supported"])
        out[p["name"]] = ProcessorProfile(p["name"], frozenset(sup), float(p["speedup"]), float(p["energy_ratio"]))
    return out


def whatif_project(latency_s: float, energy_j: float | None, profile: ProcessorProfile | float,
                   energy_ratio: float | None = None) -> tuple[float, float | None]:
    """Project CPU cost onto an accelerator: latency / speedup, energy / energy ratio."""
    if isinstance(profile, ProcessorProfile):
        speedup, ratio = profile.speedup, profile.energy_ratio
    else:
        speedup, ratio = float(profile), float(energy_ratio if energy_ratio is not None else 1.0)
    if speedup <= 0 or ratio <= 0:
        raise CostError("ratios must be positive")
    return latency_s / speedup, None if energy_j is None else energy_j / ratio


@dataclass(frozen=True)
class WhatIfRow:
    task: str
    path: int
    stage: str
    unit: str
    cpu_latency: float
    speedup: float
    npu_projected: float
    npu_reported: float | None

    @property
    def rel_error(self) -> float | None:
        if not self.npu_reported:
            return None
        return self.npu_projected / self.npu_reported - 1.0


def whatif_table(table=None, speedup: float | None = None, per_row: bool = True) -> list[WhatIfRow]:
    """Project every Table-5-style row; ``speedup`` overrides, else per-row values (or 20x)."""
    data = load_json(table or fixture_path("npu_latency.json"))
    out = []
    for r in data["rows"]:
        k = speedup if speedup is not None else (r.get("speedup", 20.0) if per_row else 20.0)
        lat, _ = whatif_project(r["cpu_latency"], None, k)
        out.append(WhatIfRow(r["task"], r["path"], r["stage"], r["unit"], r["cpu_latency"], k, lat,
                             r.get("npu_reported")))
    return out


# -- census ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class CensusReport:
    distinct: int
    supported: int
    coverage: float


def census(inventories, profile: ProcessorProfile | None = None) -> CensusReport:
    sets = [check_operators(inv) for inv in inventories]
    union = frozenset().union(*sets) if sets else frozenset()
    sup = len(union) if profile is None else len(union & profile.supported)
    return CensusReport(len(union), sup, sup / len(union) if union else 0.0)


def cumulative_union(inventories) -> list[int]:
    seen: set = set()
    out = []
    for inv in inventories:
        seen |= set(check_operators(inv))
        out.append(len(seen))
    return out


def load_inventories(source=None) -> dict:
    return load_json(source or fixture_path("inventories.json"))


# -- slowdown -------------------------------------------------------------------------------

def slowdown_summary(fm, ts) -> dict:
    """Arithmetic and geometric mean FM/TS ratios of latency and energy."""
    if len(fm) != len(ts):
        raise CostError(f"length mismatch: {len(fm)} FM costs vs {len(ts)} TS costs")
    if not fm:
        raise CostError("no costs given")
    out = {}
    for key in ("latency_s", "energy_j"):
        r = np.array([f[key] / t[key] for f, t in zip(fm, ts)])
        out[key] = {"arithmetic": float(r.mean()), "geometric": float(np.exp(np.log(r).mean()))}
    return out


def slowdown_from_fixture(source) -> dict:
    data = load_json(source)
    return {fmt: slowdown_summary(rows, data["ts"]) for fmt, rows in data["fm"].items()}


def graph_operators(model, runs) -> frozenset[str]:
    """Distinct operator kinds the desk model executes over ``runs`` of (task, payload, options)."""
    trace = OpTrace()
    for task, payload, options in runs:
        execute_path(model, task, payload, trace=trace, options=options)
    return check_operators(trace_summary(trace)[1])
