"""Cycle-level throughput model of the sorting and rasterization pipeline.

Hardware constants (defaults): the raster array starts a tile after a
4-cycle fill and then retires one Gaussian per cycle; the sorter inserts
256 depth entries per cycle; depths are 2 bytes each and arrive over a
38.4 byte/cycle DRAM link (Fraction arithmetic keeps the cycle counts
exact); a subtile buffer holds 1024 entries.

naive schedule   the whole frame is fetched and depth-sorted first, then
                 every non-empty tile is rasterized:

                     T = max(sort_compute(D), sort_fetch(D))
                           + sum_t (fill + n_t)

                 with D the total number of depth entries.  The sort
                 phase is fetch bound: the sorter is busy for only
                 ceil(D/256) of the ceil(2D/38.4) cycles, a utilization
                 that approaches 19.2/256 = 7.5% from above.

interleaved      tiles are cut into balanced subtiles of at most 1024
                 entries and streamed through a two-stage pipeline: the
                 sort stage (fetch overlapped with insertion, so
                 a_i = max(fetch_i, compute_i)) runs ahead while the
                 raster stage consumes finished subtiles.  Makespan is
                 the classic two-stage flow-shop recurrence

                     t1 += a_i;  t2 = max(t2, t1) + r_i

                 A single subtile degenerates to the naive total, so the
                 two models agree exactly on one-tile frames that fit
                 the buffer.

Both models count independent per-tile sort populations (a Gaussian
spanning several tiles contributes one entry per tile).

The roofline places both phases over the same link: the raster array
peaks at 1536 MACs per cycle at 1536/18 MACs per fetched byte (compute
bound), while sorting with decay-net scoring performs 6 MACs per 2-byte
depth entry (3 MACs/byte, memory bound at 115.2 MACs/cycle attainable).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction


@dataclass
class HwConfig:
    fill_latency: int = 4
    sort_rate: int = 256  # depth entries inserted per cycle
    depth_bytes: int = 2
    bytes_per_cycle: Fraction = Fraction("38.4")
    subtile_capacity: int = 1024  # entries per subtile buffer
    peak_macs_per_cycle: int = 1536
    raster_macs_per_byte: Fraction = Fraction(1536, 18)
    sort_macs_per_byte: Fraction = Fraction(6, 2)

    def __post_init__(self):
        self.bytes_per_cycle = Fraction(self.bytes_per_cycle)
        if self.subtile_capacity < 1 or self.sort_rate < 1:
            raise ValueError("rates and capacities must be positive")


def sort_cycles(n: int, cfg: HwConfig | None = None) -> tuple:
    """(compute, fetch) cycles to sort n depth entries."""
    cfg = cfg or HwConfig()
    if n <= 0:
        return 0, 0
    compute = math.ceil(n / cfg.sort_rate)
    fetch = math.ceil(Fraction(n * cfg.depth_bytes) / cfg.bytes_per_cycle)
    return compute, int(fetch)


def raster_cycles(n: int, cfg: HwConfig | None = None) -> int:
    """Fill latency plus one Gaussian per cycle; empty tiles are skipped."""
    cfg = cfg or HwConfig()
    return 0 if n <= 0 else cfg.fill_latency + n


def split_balanced(n: int, capacity: int) -> list:
    """Split n entries into the fewest chunks of near-equal size <= capacity."""
    if n <= 0:
        return []
    k = math.ceil(n / capacity)
    base, rem = divmod(n, k)
    return [base + 1] * rem + [base] * (k - rem)


@dataclass
class SubtileSegment:
    tile_index: int
    size: int
    sort_start: int
    sort_end: int
    raster_start: int
    raster_end: int


@dataclass
class PipelineTrace:
    segments: list = field(default_factory=list)

    def validate(self, total: int) -> None:
        """Segment bookkeeping must tile the timeline exactly."""
        if not self.segments:
            if total != 0:
                raise AssertionError("empty trace with nonzero total")
            return
        if self.segments[-1].raster_end != total:
            raise AssertionError("trace end does not match total cycles")
        busy = sum(s.raster_end - s.raster_start for s in self.segments)
        idle = self.segments[0].raster_start
        for a, b in zip(self.segments, self.segments[1:]):
            if b.raster_start < a.raster_end:
                raise AssertionError("raster segments overlap")
            idle += b.raster_start - a.raster_end
        if busy + idle != total:
            raise AssertionError("raster busy + idle does not cover the timeline")
        t1 = 0
        for s in self.segments:
            if s.sort_start != t1:
                raise AssertionError("sort stage has an unexplained gap")
            t1 = s.sort_end
            if s.raster_start < s.sort_end:
                raise AssertionError("subtile rasterized before its sort finished")


@dataclass
class PipelineResult:
    schedule: str
    total_cycles: int
    sort_compute: int
    sort_fetch: int
    sort_phase: int
    raster_total: int
    n_tiles: int
    n_subtiles: int
    n_entries: int
    trace: PipelineTrace | None = None

    @property
    def sort_utilization(self) -> float:
        return self.sort_compute / self.sort_phase if self.sort_phase else 0.0

    def to_dict(self) -> dict:
        return {"schedule": self.schedule, "total_cycles": self.total_cycles,
                "sort_compute": self.sort_compute, "sort_fetch": self.sort_fetch,
                "sort_phase": self.sort_phase, "raster_total": self.raster_total,
                "sort_utilization": self.sort_utilization,
                "n_tiles": self.n_tiles, "n_subtiles": self.n_subtiles,
                "n_entries": self.n_entries}


def simulate_naive_pipeline(tile_counts, cfg: HwConfig | None = None) -> PipelineResult:
    """Whole-frame sort phase followed by tile-at-a-time rasterization."""
    cfg = cfg or HwConfig()
    counts = [int(n) for n in tile_counts if int(n) > 0]
    d = sum(counts)
    compute, fetch = sort_cycles(d, cfg)
    sort_phase = max(compute, fetch)
    raster_total = sum(raster_cycles(n, cfg) for n in counts)
    return PipelineResult(schedule="naive", total_cycles=sort_phase + raster_total,
                          sort_compute=compute, sort_fetch=fetch,
                          sort_phase=sort_phase, raster_total=raster_total,
                          n_tiles=len(counts), n_subtiles=len(counts),
                          n_entries=d)


def simulate_interleaved_pipeline(tile_counts, cfg: HwConfig | None = None,
                                  keep_trace: bool = True) -> PipelineResult:
    """Two-stage subtile stream; sort of chunk i+1 overlaps raster of chunk i."""
    cfg = cfg or HwConfig()
    chunks = []
    for t, n in enumerate(tile_counts):
        for size in split_balanced(int(n), cfg.subtile_capacity):
            chunks.append((t, size))
    trace = PipelineTrace() if keep_trace else None
    t1 = 0
    t2 = 0
    sort_compute = 0
    sort_fetch = 0
    raster_total = 0
    for tile_idx, size in chunks:
        c, f = sort_cycles(size, cfg)
        a = max(c, f)
        r = raster_cycles(size, cfg)
        sort_compute += c
        sort_fetch += f
        raster_total += r
        s_start = t1
        t1 += a
        r_start = max(t2, t1)
        t2 = r_start + r
        if trace is not None:
            trace.segments.append(SubtileSegment(
                tile_index=tile_idx, size=size, sort_start=s_start, sort_end=t1,
                raster_start=r_start, raster_end=t2))
    if trace is not None:
        trace.validate(t2)
    return PipelineResult(schedule="interleaved", total_cycles=t2,
                          sort_compute=sort_compute, sort_fetch=sort_fetch,
                          sort_phase=t1, raster_total=raster_total,
                          n_tiles=sum(1 for n in tile_counts if int(n) > 0),
                          n_subtiles=len(chunks), n_entries=sum(s for _, s in chunks),
                          trace=trace)


def compare_pipelines(tile_counts, cfg: HwConfig | None = None) -> dict:
    nv = simulate_naive_pipeline(tile_counts, cfg)
    il = simulate_interleaved_pipeline(tile_counts, cfg)
    speedup = nv.total_cycles / il.total_cycles if il.total_cycles else 1.0
    return {"naive": nv, "interleaved": il, "speedup": speedup}


def roofline_point(name: str, macs_per_byte, cfg: HwConfig | None = None) -> dict:
    cfg = cfg or HwConfig()
    intensity = Fraction(macs_per_byte)
    bw_limit = intensity * cfg.bytes_per_cycle
    attainable = min(Fraction(cfg.peak_macs_per_cycle), bw_limit)
    return {"name": name,
            "intensity_macs_per_byte": float(intensity),
            "attainable_macs_per_cycle": float(attainable),
            "bound": "compute" if bw_limit >= cfg.peak_macs_per_cycle else "memory"}


def roofline_report(cfg: HwConfig | None = None) -> dict:
    cfg = cfg or HwConfig()
    raster = roofline_point("raster", cfg.raster_macs_per_byte, cfg)
    sort = roofline_point("sort", cfg.sort_macs_per_byte, cfg)
    ratio = cfg.raster_macs_per_byte / cfg.sort_macs_per_byte
    return {"peak_macs_per_cycle": cfg.peak_macs_per_cycle,
            "bytes_per_cycle": float(cfg.bytes_per_cycle),
            "points": [raster, sort],
            "intensity_ratio": float(ratio)}


def save_pipeline_json(result: PipelineResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=2)


def save_trace_csv(trace: PipelineTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tile", "size", "sort_start", "sort_end",
                    "raster_start", "raster_end"])
        for s in trace.segments:
            w.writerow([s.tile_index, s.size, s.sort_start, s.sort_end,
                        s.raster_start, s.raster_end])
