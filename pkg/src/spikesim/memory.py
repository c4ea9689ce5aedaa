"""Memory hierarchy model: calibration tables, access counting, capacity checks.

Latency, power, area, and frequency numbers are calibrated constants taken
from signed-off physical implementations of the two designs (a conventional
2D floorplan and a face-to-face stacked 3D floorplan); the simulator never
derives them.  What the simulator does derive are access counts and the
energy proxy count * access_power * access_latency, reported in femtojoules
(1 mW * 1 ps = 1 fJ).  Derived and calibrated quantities are kept in separate
report sections so they cannot be confused.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .dataflow import AccessEvent
from .errors import ConfigError, TraceError
from .levels import (
    ACT_BUFFER,
    ACT_GLB,
    ACT_LB,
    LEVEL_GEOMETRY,
    MHA_LEVELS,
    MOE_LEVELS,
    WEIGHT_BUFFER,
    WEIGHT_GLB0,
    WEIGHT_GLB1,
    WEIGHT_LB,
)

KINDS = ("moe", "mha")
DESIGNS = ("2d", "3d")


@dataclass(frozen=True)
class MemLevelSpec:
    """One SRAM level: geometry plus calibrated access latency and power."""

    id: str
    words: int
    width_bits: int
    latency_ps: float
    power_mw: float

    def __post_init__(self):
        if self.words < 1 or self.width_bits < 1:
            raise ConfigError(f"level {self.id}: geometry must be positive")
        if not self.latency_ps > 0:
            raise ConfigError(f"level {self.id}: access latency must be positive")
        if self.power_mw < 0:
            raise ConfigError(f"level {self.id}: access power cannot be negative")

    @property
    def capacity_bits(self) -> int:
        return self.words * self.width_bits


@dataclass(frozen=True)
class CalibrationAggregate:
    """Whole-design calibrated figures.

    Effective frequency, cell count, and the logic power split (internal /
    switching / leakage) are echoed as metadata; the memory access figures
    and area feed the design-comparison report.
    """

    effective_frequency_ghz: float
    area_mm2: float
    num_cells: int
    internal_power_mw: float
    switching_power_mw: float
    leakage_power_mw: float
    total_power_mw: float
    memory_access_latency_ps: float
    memory_access_power_mw: float

    def to_dict(self) -> dict:
        return {
            "effective_frequency_ghz": self.effective_frequency_ghz,
            "area_mm2": self.area_mm2,
            "num_cells": self.num_cells,
            "internal_power_mw": self.internal_power_mw,
            "switching_power_mw": self.switching_power_mw,
            "leakage_power_mw": self.leakage_power_mw,
            "total_power_mw": self.total_power_mw,
            "memory_access_latency_ps": self.memory_access_latency_ps,
            "memory_access_power_mw": self.memory_access_power_mw,
        }


@dataclass(frozen=True)
class MemCalibration:
    """Per-level specs plus aggregate figures for one (kind, design) flavor."""

    kind: str
    design: str
    levels: dict = field(default_factory=dict)
    aggregate: CalibrationAggregate = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        expected = set(MOE_LEVELS if self.kind == "moe" else MHA_LEVELS)
        got = set(self.levels)
        if got != expected:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ConfigError(
                f"calibration level set mismatch for kind {self.kind!r}: "
                f"missing {missing}, unexpected {extra}"
            )
        if self.aggregate is None:
            raise ConfigError("calibration needs aggregate figures")


# (latency_ps, power_mw) per level, per (kind, design).  The attention design
# has no weight globals; weights never enter its datapath.
_LEVEL_TABLE = {
    ("mha", "2d"): {
        ACT_GLB: (220.0, 10.9),
        ACT_LB: (24.0, 1.13),
        WEIGHT_LB: (82.0, 0.46),
        ACT_BUFFER: (40.0, 1.92),
        WEIGHT_BUFFER: (28.0, 1.01),
    },
    ("mha", "3d"): {
        ACT_GLB: (209.0, 7.56),
        ACT_LB: (16.0, 0.76),
        WEIGHT_LB: (26.0, 0.1),
        ACT_BUFFER: (16.0, 0.52),
        WEIGHT_BUFFER: (26.0, 0.17),
    },
    ("moe", "2d"): {
        ACT_GLB: (148.0, 2.36),
        WEIGHT_GLB0: (241.0, 3.87),
        WEIGHT_GLB1: (147.0, 4.05),
        ACT_LB: (68.0, 1.1),
        WEIGHT_LB: (77.0, 0.47),
        ACT_BUFFER: (40.0, 1.66),
        WEIGHT_BUFFER: (77.0, 1.5),
    },
    ("moe", "3d"): {
        ACT_GLB: (117.0, 1.84),
        WEIGHT_GLB0: (94.0, 2.03),
        WEIGHT_GLB1: (71.0, 2.01),
        ACT_LB: (19.0, 0.77),
        WEIGHT_LB: (18.0, 0.09),
        ACT_BUFFER: (19.0, 0.27),
        WEIGHT_BUFFER: (18.0, 0.39),
    },
}

_AGGREGATE_TABLE = {
    ("mha", "2d"): CalibrationAggregate(2.13, 5.53, 169046, 863.0, 30.0, 19.0, 912.0, 160.0, 6.23),
    ("mha", "3d"): CalibrationAggregate(2.24, 3.36, 167983, 859.0, 18.0, 18.0, 896.0, 112.0, 4.41),
    ("moe", "2d"): CalibrationAggregate(1.69, 2.97, 339846, 6777.0, 67.0, 144.0, 6989.0, 202.0, 7.11),
    ("moe", "3d"): CalibrationAggregate(1.74, 1.75, 339693, 5716.0, 116.0, 111.0, 5983.0, 172.0, 5.2),
}

# Total routed wirelength in meters per (kind, expert-core count, design).
# Reference metadata from the physical implementations; nothing is modeled
# from these values.
REFERENCE_WIRELENGTH_M = {
    ("mha", 1, "2d"): 0.621,
    ("mha", 1, "3d"): 0.616,
    ("mha", 4, "2d"): 3.654,
    ("mha", 4, "3d"): 3.290,
    ("moe", 1, "2d"): 2.178,
    ("moe", 1, "3d"): 1.959,
    ("moe", 4, "2d"): 11.352,
    ("moe", 4, "3d"): 9.816,
}


def builtin_calibration(kind: str, design: str) -> MemCalibration:
    """The built-in calibration preset for one accelerator kind and design flavor."""
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    if design not in DESIGNS:
        raise ConfigError(f"design must be one of {DESIGNS}, got {design!r}")
    levels = {}
    for level, (latency, power) in _LEVEL_TABLE[(kind, design)].items():
        words, width = LEVEL_GEOMETRY[level]
        levels[level] = MemLevelSpec(level, words, width, latency, power)
    return MemCalibration(kind=kind, design=design, levels=levels, aggregate=_AGGREGATE_TABLE[(kind, design)])


@dataclass
class LevelCounts:
    reads: int = 0
    writes: int = 0
    words_read: int = 0
    words_written: int = 0

    @property
    def words(self) -> int:
        return self.words_read + self.words_written

    def to_dict(self) -> dict:
        return {
            "reads": self.reads,
            "writes": self.writes,
            "words_read": self.words_read,
            "words_written": self.words_written,
        }


@dataclass
class AccessCounts:
    """Per-level event and word totals extracted from a trace."""

    per_level: dict

    @property
    def total_words(self) -> int:
        return sum(c.words for c in self.per_level.values())

    @property
    def total_events(self) -> int:
        return sum(c.reads + c.writes for c in self.per_level.values())

    def to_dict(self) -> dict:
        return {level: counts.to_dict() for level, counts in sorted(self.per_level.items())}


def count_accesses(trace: list[AccessEvent]) -> AccessCounts:
    """Fold a trace into per-level read/write event and word totals."""
    per_level: dict[str, LevelCounts] = {}
    for ev in trace:
        if ev.level not in LEVEL_GEOMETRY:
            raise TraceError(f"trace references unknown level {ev.level!r} (event at cycle {ev.cycle}, unit {ev.unit!r})")
        counts = per_level.setdefault(ev.level, LevelCounts())
        if ev.direction == "read":
            counts.reads += 1
            counts.words_read += ev.words
        else:
            counts.writes += 1
            counts.words_written += ev.words
    return AccessCounts(per_level)


@dataclass(frozen=True)
class WorkloadShape:
    """The dimensions of one run, as needed for residency arithmetic."""

    kind: str
    n: int
    t: int
    d_in: int = 0
    d_out: int = 0
    experts: int = 0
    heads: int = 0
    d_head: int = 0
    tile_rows: int = 16
    tile_cols: int = 128


@dataclass(frozen=True)
class CapacityVerdict:
    level: str
    required_bits: int
    capacity_bits: int

    @property
    def fits(self) -> bool:
        return self.required_bits <= self.capacity_bits

    def to_dict(self) -> dict:
        return {
            "required_bits": self.required_bits,
            "capacity_bits": self.capacity_bits,
            "fits": self.fits,
        }


@dataclass(frozen=True)
class CapacityReport:
    verdicts: dict

    @property
    def fits(self) -> bool:
        return all(v.fits for v in self.verdicts.values())

    @property
    def overflowing(self) -> list[str]:
        return sorted(level for level, v in self.verdicts.items() if not v.fits)

    def to_dict(self) -> dict:
        return {
            "fits": self.fits,
            "overflowing": self.overflowing,
            "levels": {level: v.to_dict() for level, v in sorted(self.verdicts.items())},
        }


def _required_bits_moe(shape: WorkloadShape) -> dict[str, int]:
    n, t, d_in, d_out, e = shape.n, shape.t, shape.d_in, shape.d_out, shape.experts
    weight_block = d_in * d_out * 8
    # act LB worst case: every token routed to one expert, plus its spike output.
    # Tile working sets (one spike slab, one weight row block) are subsets of
    # those residencies, so the max() keeps the dominating term explicit.
    return {
        ACT_GLB: n * t * (d_in + d_out),
        WEIGHT_GLB0: math.ceil(e / 2) * weight_block,
        WEIGHT_GLB1: (e // 2) * weight_block,
        ACT_LB: max(n * t * (d_in + d_out), shape.tile_cols * d_in),
        WEIGHT_LB: max(weight_block, min(shape.tile_rows, d_out) * d_in * 8),
        # The small bottom-tier macros are streaming staging: they only ever
        # hold one injection column or one extraction row at a time.
        ACT_BUFFER: max(shape.tile_cols, shape.tile_rows * 16),
        WEIGHT_BUFFER: shape.tile_rows * 8,
    }


def _required_bits_mha(shape: WorkloadShape) -> dict[str, int]:
    n, t, d = shape.n, shape.t, shape.d_head
    return {
        ACT_GLB: n * t * 4 * shape.heads * d,  # Q, K, V plus the output slab
        ACT_LB: n * t * 4 * d,  # one head resident per core
        WEIGHT_LB: 0,  # no weights in the attention datapath
        ACT_BUFFER: max(3 * n * d, shape.tile_rows * d * 16),
        WEIGHT_BUFFER: 0,
    }


def capacity_check(shape: WorkloadShape, cal: MemCalibration) -> CapacityReport:
    """Compare per-level residency requirements against SRAM capacities.

    Overflow is a verdict, never an exception: the report names every level
    whose requirement exceeds its capacity.
    """
    if shape.kind != cal.kind:
        raise ConfigError(f"workload kind {shape.kind!r} does not match calibration kind {cal.kind!r}")
    if shape.kind == "moe":
        required = _required_bits_moe(shape)
    elif shape.kind == "mha":
        required = _required_bits_mha(shape)
    else:
        raise ConfigError(f"kind must be one of {KINDS}, got {shape.kind!r}")
    verdicts = {
        level: CapacityVerdict(level, bits, cal.levels[level].capacity_bits)
        for level, bits in required.items()
    }
    return CapacityReport(verdicts)


@dataclass(frozen=True)
class MemReport:
    """Access counts, energy proxies, calibrated aggregates, capacity verdicts."""

    calibration_kind: str
    calibration_design: str
    levels: dict
    total_words: int
    total_energy_fj: float
    aggregate: CalibrationAggregate
    capacity: CapacityReport | None = None

    def to_dict(self) -> dict:
        out = {
            "calibration": {
                "kind": self.calibration_kind,
                "design": self.calibration_design,
                "aggregate": self.aggregate.to_dict(),
            },
            "levels": {level: dict(vals) for level, vals in sorted(self.levels.items())},
            "trace_totals": {
                "total_words": self.total_words,
                "total_energy_fj": self.total_energy_fj,
            },
        }
        if self.capacity is not None:
            out["capacity"] = self.capacity.to_dict()
        return out


def mem_report(
    counts: AccessCounts, cal: MemCalibration, capacity: CapacityReport | None = None
) -> MemReport:
    """Weight access counts by the calibrated per-access figures.

    The energy proxy for a level is words_moved * access_power_mw *
    access_latency_ps, i.e. femtojoules.  Calibrated aggregates are echoed
    untouched in their own section.
    """
    levels = {}
    total_energy = 0.0
    for level, c in counts.per_level.items():
        if level not in cal.levels:
            raise TraceError(
                f"trace touches level {level!r} which the {cal.kind}/{cal.design} calibration does not define"
            )
        spec = cal.levels[level]
        energy = c.words * spec.power_mw * spec.latency_ps
        total_energy += energy
        levels[level] = {
            "reads": c.reads,
            "writes": c.writes,
            "words_read": c.words_read,
            "words_written": c.words_written,
            "access_latency_ps": spec.latency_ps,
            "access_power_mw": spec.power_mw,
            "energy_fj": energy,
        }
    # Levels with no traffic still appear, with zero counts.
    for level, spec in cal.levels.items():
        if level not in levels:
            levels[level] = {
                "reads": 0,
                "writes": 0,
                "words_read": 0,
                "words_written": 0,
                "access_latency_ps": spec.latency_ps,
                "access_power_mw": spec.power_mw,
                "energy_fj": 0.0,
            }
    return MemReport(
        calibration_kind=cal.kind,
        calibration_design=cal.design,
        levels=levels,
        total_words=counts.total_words,
        total_energy_fj=total_energy,
        aggregate=cal.aggregate,
        capacity=capacity,
    )


def dump_calibration(cal: MemCalibration) -> dict:
    """Serialize a calibration into the override-file schema."""
    return {
        "kind": cal.kind,
        "design": cal.design,
        "levels": [
            {
                "id": spec.id,
                "words": spec.words,
                "width_bits": spec.width_bits,
                "latency_ps": spec.latency_ps,
                "power_mw": spec.power_mw,
            }
            for _, spec in sorted(cal.levels.items())
        ],
        "aggregate": cal.aggregate.to_dict(),
    }


def load_calibration(source) -> MemCalibration:
    """Load a calibration override from a path or an already-parsed document."""
    if isinstance(source, (str, bytes)):
        with open(source) as fh:
            doc = json.load(fh)
    else:
        doc = source
    if not isinstance(doc, dict):
        raise ConfigError("calibration document must be a mapping")
    for key in ("design", "levels", "aggregate"):
        if key not in doc:
            raise ConfigError(f"calibration document missing {key!r}")
    levels = {}
    for entry in doc["levels"]:
        spec = MemLevelSpec(
            id=entry["id"],
            words=int(entry["words"]),
            width_bits=int(entry["width_bits"]),
            latency_ps=float(entry["latency_ps"]),
            power_mw=float(entry["power_mw"]),
        )
        levels[spec.id] = spec
    kind = doc.get("kind")
    if kind is None:
        kind = "moe" if WEIGHT_GLB0 in levels else "mha"
    agg = doc["aggregate"]
    try:
        aggregate = CalibrationAggregate(
            effective_frequency_ghz=float(agg["effective_frequency_ghz"]),
            area_mm2=float(agg["area_mm2"]),
            num_cells=int(agg["num_cells"]),
            internal_power_mw=float(agg["internal_power_mw"]),
            switching_power_mw=float(agg["switching_power_mw"]),
            leakage_power_mw=float(agg["leakage_power_mw"]),
            total_power_mw=float(agg["total_power_mw"]),
            memory_access_latency_ps=float(agg["memory_access_latency_ps"]),
            memory_access_power_mw=float(agg["memory_access_power_mw"]),
        )
    except KeyError as missing:
        raise ConfigError(f"calibration aggregate missing field {missing}") from None
    return MemCalibration(kind=kind, design=str(doc["design"]), levels=levels, aggregate=aggregate)
