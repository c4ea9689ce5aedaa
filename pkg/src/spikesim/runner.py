"""Experiment orchestration: parse a workload, run it, compare design flavors.

A run is fully determined by its plan: inputs are synthesized from the plan
seed (Bernoulli spikes, uniform integer weights), the functional pipeline and
the timing/memory models consume only plan-derived values, and reports are
emitted with stable field ordering.  Two runs of the same plan produce
byte-identical reports.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import dataflow, memory
from .dataflow import ArrayGeometry, SparsityStats, merge_traces
from .errors import ConfigError, WorkloadValidationError
from .levels import ACT_GLB, ACT_LB, WEIGHT_GLB0, WEIGHT_GLB1
from .mha import MhaConfig, mha_forward
from .moe import MoeLayerConfig, RoutingWeights, moe_layer_forward
from .tensors import QuantWeightMatrix, SpikeTensor

SCHEMA_VERSION = "1"

CALIBRATION_SOURCES = ("builtin2d", "builtin3d", "file")

ROUTING_CSV_COLUMNS = ("token_id", "rank", "expert_id", "score")


@dataclass(frozen=True)
class MoeModel:
    n: int = 64
    t: int = 4
    d_in: int = 128
    d_out: int = 128
    experts: int = 4
    k: int = 1


@dataclass(frozen=True)
class MhaModel:
    n: int = 64
    t: int = 4
    heads: int = 8
    d_head: int = 16

    @property
    def d_model(self) -> int:
        return self.heads * self.d_head


@dataclass(frozen=True)
class HardwareParams:
    cores: int = 4
    expert_rows: int = 16
    expert_cols: int = 128
    routing_rows: int = 16
    routing_cols: int = 8
    attention_rows: int = 16
    attention_cols: int = 16
    extract_ports: int | None = None
    router_overhead_cycles: int | None = None


@dataclass(frozen=True)
class RunPlan:
    kind: str
    model: MoeModel | MhaModel
    hardware: HardwareParams = field(default_factory=HardwareParams)
    calibration_source: str = "builtin2d"
    calibration_path: str | None = None
    spike_prob: float = 0.2
    seed: int = 0

    def to_dict(self) -> dict:
        if self.kind == "moe":
            model = {
                "n": self.model.n,
                "t": self.model.t,
                "d_in": self.model.d_in,
                "d_out": self.model.d_out,
                "e": self.model.experts,
                "k": self.model.k,
            }
        else:
            model = {
                "n": self.model.n,
                "t": self.model.t,
                "h": self.model.heads,
                "d": self.model.d_head,
                "d_model": self.model.d_model,
            }
        return {
            "kind": self.kind,
            "model": model,
            "hardware": {
                "cores": self.hardware.cores,
                "expert_array": {"rows": self.hardware.expert_rows, "cols": self.hardware.expert_cols},
                "routing_array": {"rows": self.hardware.routing_rows, "cols": self.hardware.routing_cols},
                "attention_array": {"rows": self.hardware.attention_rows, "cols": self.hardware.attention_cols},
                "extract_ports": self.hardware.extract_ports,
                "router_overhead_cycles": self.hardware.router_overhead_cycles,
            },
            "calibration": {"source": self.calibration_source, "path": self.calibration_path},
            "input": {"spike_prob": self.spike_prob, "seed": self.seed},
        }


# Flat aliases accepted at the document top level, mapped to their nested home.
_FLAT_ALIASES = {
    "N": ("model", "n"),
    "T": ("model", "t"),
    "D_in": ("model", "d_in"),
    "D_out": ("model", "d_out"),
    "E": ("model", "e"),
    "K": ("model", "k"),
    "H": ("model", "h"),
    "d": ("model", "d"),
    "D": ("model", "d_model"),
    "seed": ("input", "seed"),
    "spike_prob": ("input", "spike_prob"),
}

_MODEL_KEYS_MOE = {"n", "t", "d_in", "d_out", "e", "experts", "k"}
_MODEL_KEYS_MHA = {"n", "t", "h", "heads", "d", "d_head", "d_model"}


def _as_int(value, name: str, minimum: int, violations: list[str]) -> int | None:
    if isinstance(value, bool) or not isinstance(value, int):
        violations.append(f"{name} must be an integer, got {value!r}")
        return None
    if value < minimum:
        violations.append(f"{name} must be >= {minimum}, got {value}")
        return None
    return value


def parse_workload(doc: dict) -> RunPlan:
    """Validate a configuration document and normalize it into a RunPlan.

    Every violation is collected; the raised error lists all of them at once
    rather than stopping at the first.
    """
    if not isinstance(doc, dict):
        raise WorkloadValidationError(["configuration document must be a mapping"])
    violations: list[str] = []
    doc = {k: v for k, v in doc.items()}

    model_doc = dict(doc.pop("model", {}) or {})
    hw_doc = dict(doc.pop("hardware", {}) or {})
    cal_doc = dict(doc.pop("calibration", {}) or {})
    input_doc = dict(doc.pop("input", {}) or {})
    for flat, (section, key) in _FLAT_ALIASES.items():
        if flat in doc:
            target = model_doc if section == "model" else input_doc
            target.setdefault(key, doc.pop(flat))

    kind = doc.pop("kind", None)
    if kind not in ("moe", "mha"):
        violations.append(f"kind must be 'moe' or 'mha', got {kind!r}")
        kind = None
    for key in sorted(doc):
        violations.append(f"unknown top-level key {key!r}")

    model = _parse_model(kind, model_doc, violations)
    hardware = _parse_hardware(hw_doc, violations)

    source = cal_doc.pop("source", "builtin2d")
    path = cal_doc.pop("path", None)
    if source not in CALIBRATION_SOURCES:
        violations.append(f"calibration.source must be one of {CALIBRATION_SOURCES}, got {source!r}")
    elif source == "file" and not path:
        violations.append("calibration.source 'file' requires calibration.path")
    for key in sorted(cal_doc):
        violations.append(f"unknown calibration key {key!r}")

    spike_prob = input_doc.pop("spike_prob", 0.2)
    if not isinstance(spike_prob, (int, float)) or isinstance(spike_prob, bool) or not 0.0 <= spike_prob <= 1.0:
        violations.append(f"input.spike_prob must lie in [0, 1], got {spike_prob!r}")
        spike_prob = 0.2
    seed = input_doc.pop("seed", 0)
    checked_seed = _as_int(seed, "input.seed", 0, violations)
    seed = checked_seed if checked_seed is not None else 0
    for key in sorted(input_doc):
        violations.append(f"unknown input key {key!r}")

    if violations:
        raise WorkloadValidationError(violations)
    return RunPlan(
        kind=kind,
        model=model,
        hardware=hardware,
        calibration_source=source,
        calibration_path=path,
        spike_prob=float(spike_prob),
        seed=seed,
    )


def _parse_model(kind, model_doc: dict, violations: list[str]):
    if kind == "moe":
        known = _MODEL_KEYS_MOE
    elif kind == "mha":
        known = _MODEL_KEYS_MHA
    else:
        return None
    for key in sorted(set(model_doc) - known):
        violations.append(f"unknown model key {key!r} for kind {kind!r}")

    n = _as_int(model_doc.get("n", 64), "model.n", 1, violations)
    t = _as_int(model_doc.get("t", 4), "model.t", 1, violations)
    if kind == "moe":
        d_in = _as_int(model_doc.get("d_in", 128), "model.d_in", 1, violations)
        d_out = _as_int(model_doc.get("d_out", 128), "model.d_out", 1, violations)
        e = _as_int(model_doc.get("e", model_doc.get("experts", 4)), "model.e", 1, violations)
        k = _as_int(model_doc.get("k", 1), "model.k", 1, violations)
        if None in (n, t, d_in, d_out, e, k):
            return None
        if k > e:
            violations.append(f"model.k ({k}) cannot exceed model.e ({e})")
        elif k != 1:
            violations.append(
                f"top-k routing with k={k} is not supported: merging multiple expert outputs "
                "per token has no defined combination rule"
            )
        return MoeModel(n=n, t=t, d_in=d_in, d_out=d_out, experts=e, k=k)

    heads = _as_int(model_doc.get("h", model_doc.get("heads", 8)), "model.h", 1, violations)
    d_head = model_doc.get("d", model_doc.get("d_head"))
    d_model = model_doc.get("d_model")
    if d_head is not None:
        d_head = _as_int(d_head, "model.d", 1, violations)
    if d_model is not None:
        d_model = _as_int(d_model, "model.d_model", 1, violations)
    if None in (n, t, heads):
        return None
    if d_head is None and d_model is None:
        d_model = 128
    if d_head is None:
        if d_model % heads != 0:
            violations.append(f"model.d_model ({d_model}) is not divisible by model.h ({heads})")
            return None
        d_head = d_model // heads
    elif d_model is not None and heads * d_head != d_model:
        violations.append(
            f"model.h * model.d = {heads}*{d_head} = {heads * d_head} contradicts model.d_model = {d_model}"
        )
    return MhaModel(n=n, t=t, heads=heads, d_head=d_head)


def _parse_hardware(hw_doc: dict, violations: list[str]) -> HardwareParams:
    def array_pair(name: str, default_rows: int, default_cols: int) -> tuple[int, int]:
        sub = hw_doc.pop(name, {}) or {}
        if not isinstance(sub, dict):
            violations.append(f"hardware.{name} must be a mapping with rows/cols")
            return default_rows, default_cols
        sub = dict(sub)
        rows = _as_int(sub.pop("rows", default_rows), f"hardware.{name}.rows", 1, violations)
        cols = _as_int(sub.pop("cols", default_cols), f"hardware.{name}.cols", 1, violations)
        for key in sorted(sub):
            violations.append(f"unknown hardware.{name} key {key!r}")
        return (rows if rows is not None else default_rows, cols if cols is not None else default_cols)

    cores = _as_int(hw_doc.pop("cores", 4), "hardware.cores", 1, violations)
    expert_rows, expert_cols = array_pair("expert_array", 16, 128)
    routing_rows, routing_cols = array_pair("routing_array", 16, 8)
    attention_rows, attention_cols = array_pair("attention_array", 16, 16)
    extract_ports = hw_doc.pop("extract_ports", None)
    if extract_ports is not None:
        extract_ports = _as_int(extract_ports, "hardware.extract_ports", 1, violations)
    router_overhead = hw_doc.pop("router_overhead_cycles", None)
    if router_overhead is not None:
        router_overhead = _as_int(router_overhead, "hardware.router_overhead_cycles", 0, violations)
    for key in sorted(hw_doc):
        violations.append(f"unknown hardware key {key!r}")
    return HardwareParams(
        cores=cores if cores is not None else 4,
        expert_rows=expert_rows,
        expert_cols=expert_cols,
        routing_rows=routing_rows,
        routing_cols=routing_cols,
        attention_rows=attention_rows,
        attention_cols=attention_cols,
        extract_ports=extract_ports,
        router_overhead_cycles=router_overhead,
    )


@dataclass
class RunResult:
    """Serializable outcome of one run plus in-memory artifacts for dumps."""

    kind: str
    config: dict
    output_digest: str
    system_cycles: dataflow.CycleStats
    unit_cycles: dict
    core_assignment: list
    mem: memory.MemReport
    s_out: SpikeTensor = None
    trace: list = field(default_factory=list)
    routing_table: object = None

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "config": self.config,
            "output_digest": self.output_digest,
            "cycles": {
                "system": self.system_cycles.to_dict(),
                "units": {unit: stats.to_dict() for unit, stats in sorted(self.unit_cycles.items())},
                "core_assignment": self.core_assignment,
            },
            "memory": self.mem.to_dict(),
        }


def resolve_calibration(plan: RunPlan) -> memory.MemCalibration:
    if plan.calibration_source == "builtin2d":
        return memory.builtin_calibration(plan.kind, "2d")
    if plan.calibration_source == "builtin3d":
        return memory.builtin_calibration(plan.kind, "3d")
    cal = memory.load_calibration(plan.calibration_path)
    if cal.kind != plan.kind:
        raise ConfigError(
            f"calibration file is for kind {cal.kind!r} but the plan is kind {plan.kind!r}"
        )
    return cal


def _digest(s_out: SpikeTensor) -> str:
    return "sha256:" + hashlib.sha256(s_out.to_bytes()).hexdigest()


def _synth_spikes(rng: np.random.Generator, n: int, t: int, d: int, p: float) -> SpikeTensor:
    return SpikeTensor(rng.random((n, t, d)) < p)


def _synth_weights(rng: np.random.Generator, rows: int, cols: int) -> QuantWeightMatrix:
    return QuantWeightMatrix(rng.integers(-127, 128, size=(rows, cols), dtype=np.int8), 1.0)


def _run_moe(plan: RunPlan, cal: memory.MemCalibration) -> RunResult:
    m = plan.model
    hw = plan.hardware
    rng = np.random.default_rng(plan.seed)
    # Synthesis order is part of the plan contract: input spikes, routing
    # weights, then expert weights in expert order.
    s_in = _synth_spikes(rng, m.n, m.t, m.d_in, plan.spike_prob)
    w_r = RoutingWeights(_synth_weights(rng, m.d_in, m.experts))
    weights = tuple(_synth_weights(rng, m.d_in, m.d_out) for _ in range(m.experts))
    cfg = MoeLayerConfig(experts=m.experts, k=m.k, d_in=m.d_in, d_out=m.d_out, expert_weights=weights)
    s_out, table = moe_layer_forward(s_in, cfg, w_r)

    routing_geom = ArrayGeometry(hw.routing_rows, hw.routing_cols, "routing")
    expert_geom = ArrayGeometry(hw.expert_rows, hw.expert_cols, "expert")
    routing_stats, routing_events = dataflow.simulate_routing_array(
        m.n, m.t, m.d_in, m.experts, routing_geom, extract_ports=hw.extract_ports
    )
    unit_cycles = {"router": routing_stats}
    expert_stats = []
    traces = [routing_events]
    for e in range(m.experts):
        tokens = table.expert_tokens[e]
        s_e = s_in.select_tokens(tokens)
        ts = dataflow.plan_expert_tiles(len(tokens), m.t, m.d_in, m.d_out, expert_geom)
        sparsity = SparsityStats(ones=s_e.popcount(), total=s_e.data.size)
        glb = WEIGHT_GLB0 if e % 2 == 0 else WEIGHT_GLB1
        stats, events = dataflow.simulate_expert_array(
            ts, expert_geom, sparsity, extract_ports=hw.extract_ports, unit=f"expert{e}", weight_glb=glb
        )
        unit_cycles[f"expert{e}"] = stats
        expert_stats.append(stats)
        traces.append(events)

    overhead = hw.router_overhead_cycles
    if overhead is None:
        overhead = m.t * m.d_in + 16 + m.experts
    system, assignment = dataflow.expert_parallel_schedule(expert_stats, hw.cores, overhead)

    egress = []
    end = system.total_cycles
    for e in range(m.experts):
        n_e = len(table.expert_tokens[e])
        if n_e:
            egress.append(dataflow.access_event(end, "merge", ACT_LB, "read", n_e * m.t * m.d_out, "spike"))
    egress.append(dataflow.access_event(end, "merge", ACT_GLB, "write", m.n * m.t * m.d_out, "spike"))
    trace = merge_traces(*traces, egress)

    shape = memory.WorkloadShape(
        kind="moe", n=m.n, t=m.t, d_in=m.d_in, d_out=m.d_out, experts=m.experts,
        tile_rows=hw.expert_rows, tile_cols=hw.expert_cols,
    )
    counts = memory.count_accesses(trace)
    fit = memory.capacity_check(shape, cal)
    mem = memory.mem_report(counts, cal, fit)
    return RunResult(
        kind="moe",
        config=plan.to_dict(),
        output_digest=_digest(s_out),
        system_cycles=system,
        unit_cycles=unit_cycles,
        core_assignment=assignment,
        mem=mem,
        s_out=s_out,
        trace=trace,
        routing_table=table,
    )


def _run_mha(plan: RunPlan, cal: memory.MemCalibration) -> RunResult:
    m = plan.model
    hw = plan.hardware
    rng = np.random.default_rng(plan.seed)
    # Synthesis order: queries, keys, values.
    q = _synth_spikes(rng, m.n, m.t, m.d_model, plan.spike_prob)
    k = _synth_spikes(rng, m.n, m.t, m.d_model, plan.spike_prob)
    v = _synth_spikes(rng, m.n, m.t, m.d_model, plan.spike_prob)
    cfg = MhaConfig(heads=m.heads, d_head=m.d_head)
    s_out = mha_forward(q, k, v, cfg)

    attn_geom = ArrayGeometry(hw.attention_rows, hw.attention_cols, "attention")
    unit_cycles = {}
    head_stats = []
    traces = []
    for h in range(m.heads):
        ts = dataflow.plan_attention_tiles(m.n, m.d_head, m.t, 1, attn_geom)
        stats, events = dataflow.simulate_attention_array(ts, attn_geom, unit=f"attn{h}")
        unit_cycles[f"attn{h}"] = stats
        head_stats.append(stats)
        traces.append(events)

    overhead = hw.router_overhead_cycles if hw.router_overhead_cycles is not None else 0
    system, assignment = dataflow.expert_parallel_schedule(head_stats, hw.cores, overhead)

    egress = []
    end = system.total_cycles
    for h in range(m.heads):
        egress.append(dataflow.access_event(end, "merge", ACT_LB, "read", m.n * m.t * m.d_head, "spike"))
    egress.append(dataflow.access_event(end, "merge", ACT_GLB, "write", m.n * m.t * m.d_model, "spike"))
    trace = merge_traces(*traces, egress)

    shape = memory.WorkloadShape(
        kind="mha", n=m.n, t=m.t, heads=m.heads, d_head=m.d_head,
        tile_rows=hw.attention_rows, tile_cols=hw.attention_cols,
    )
    counts = memory.count_accesses(trace)
    fit = memory.capacity_check(shape, cal)
    mem = memory.mem_report(counts, cal, fit)
    return RunResult(
        kind="mha",
        config=plan.to_dict(),
        output_digest=_digest(s_out),
        system_cycles=system,
        unit_cycles=unit_cycles,
        core_assignment=assignment,
        mem=mem,
        s_out=s_out,
        trace=trace,
        routing_table=None,
    )


def run_experiment(plan: RunPlan) -> RunResult:
    """Synthesize inputs from the plan seed, run the pipeline, build the report."""
    cal = resolve_calibration(plan)
    if plan.kind == "moe":
        return _run_moe(plan, cal)
    if plan.kind == "mha":
        return _run_mha(plan, cal)
    raise ConfigError(f"kind must be 'moe' or 'mha', got {plan.kind!r}")


@dataclass
class ComparisonReport:
    """Paired 2D/3D runs of one plan with per-metric reduction percentages."""

    kind: str
    run_2d: RunResult
    run_3d: RunResult
    functional_equal: bool
    reductions_pct: dict

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "functional_equal": self.functional_equal,
            "reductions_pct": dict(sorted(self.reductions_pct.items())),
            "run_2d": self.run_2d.to_dict(),
            "run_3d": self.run_3d.to_dict(),
        }


def compare_designs(plan: RunPlan) -> ComparisonReport:
    """Run one plan under the built-in 2D and 3D calibrations and diff them.

    Reductions are (value_2d - value_3d) / value_2d * 100 per aggregate
    metric; a negative reduction is an increase (effective frequency goes up
    with stacking).  The design flavor is a pure memory-model swap, so the
    functional digests and cycle counts must match exactly.
    """
    if plan.calibration_source == "file":
        raise ConfigError("compare needs the built-in calibration pair; the plan pins a calibration file")
    run_2d = run_experiment(_with_calibration(plan, "builtin2d"))
    run_3d = run_experiment(_with_calibration(plan, "builtin3d"))
    functional_equal = (
        run_2d.output_digest == run_3d.output_digest
        and run_2d.system_cycles.total_cycles == run_3d.system_cycles.total_cycles
    )
    if not functional_equal:
        raise RuntimeError("design flavors disagree on functional output; this is a simulator bug")
    agg2 = run_2d.mem.aggregate.to_dict()
    agg3 = run_3d.mem.aggregate.to_dict()
    reductions = {}
    for key, v2 in agg2.items():
        v3 = agg3[key]
        if v2:
            reductions[key] = (v2 - v3) / v2 * 100.0
    return ComparisonReport(
        kind=plan.kind,
        run_2d=run_2d,
        run_3d=run_3d,
        functional_equal=functional_equal,
        reductions_pct=reductions,
    )


def _with_calibration(plan: RunPlan, source: str) -> RunPlan:
    return RunPlan(
        kind=plan.kind,
        model=plan.model,
        hardware=plan.hardware,
        calibration_source=source,
        calibration_path=None,
        spike_prob=plan.spike_prob,
        seed=plan.seed,
    )


def report_json_bytes(doc: dict) -> bytes:
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()


def _flatten(doc, prefix: str, rows: list):
    if isinstance(doc, dict):
        if not doc:
            rows.append((prefix, doc))
            return
        for key in doc:
            sub = f"{prefix}.{key}" if prefix else str(key)
            _flatten(doc[key], sub, rows)
    elif isinstance(doc, list):
        if not doc:
            rows.append((prefix, doc))
            return
        for i, item in enumerate(doc):
            _flatten(item, f"{prefix}.{i}" if prefix else str(i), rows)
    else:
        rows.append((prefix, doc))


def report_csv_bytes(doc: dict) -> bytes:
    """Flatten a report into field,value rows; values are JSON-encoded.

    Nested structure flattens to dotted paths (lists by index), so per-level
    metrics come out one row per (level, metric) and the encoding is exactly
    invertible.
    """
    rows: list[tuple[str, object]] = []
    _flatten(doc, "", rows)
    rows.sort(key=lambda r: r[0])
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["field", "value"])
    for path, value in rows:
        writer.writerow([path, json.dumps(value)])
    return buf.getvalue().encode()


def load_report_csv(blob: bytes) -> dict:
    """Rebuild the nested report from its CSV flattening."""
    text = blob.decode()
    reader = csv.reader(text.splitlines())
    header = next(reader)
    if header != ["field", "value"]:
        raise ValueError(f"unexpected report CSV header {header!r}")
    tree: dict = {}
    entries = [(path, json.loads(raw)) for path, raw in reader]
    for path, value in entries:
        parts = path.split(".")
        node = tree
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return _listify(tree)


def _listify(node):
    if isinstance(node, dict) and node:
        if all(key.isdigit() for key in node):
            return [_listify(node[key]) for key in sorted(node, key=int)]
        return {key: _listify(value) for key, value in node.items()}
    return node


def emit_report(doc: dict, fmt: str) -> bytes:
    """Render a report dict as canonical JSON or as the flat CSV form."""
    if fmt == "json":
        return report_json_bytes(doc)
    if fmt == "csv":
        return report_csv_bytes(doc)
    raise ConfigError(f"format must be 'json' or 'csv', got {fmt!r}")


def write_routing_csv(table, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUTING_CSV_COLUMNS)
        for row in table.routing_rows():
            writer.writerow(row)
