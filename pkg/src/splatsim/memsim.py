"""Set-associative cache model for per-Gaussian feature fetches.

Each rasterized (Gaussian, tile) pair needs the Gaussian's packed features
from DRAM unless a small on-chip cache still holds them.  The cache is
4-way set associative, 88 KiB with 32-byte lines by default (704 sets);
a Gaussian maps to set id mod n_sets and occupies one line.

Replacement uses an importance field instead of plain LRU: a line is
installed with importance = min(15, number of tiles the Gaussian spans),
i.e. the number of future uses; every hit consumes one unit (saturating
at zero).  The victim is the valid line with the lowest importance,
least-recently-used among ties.  static_importance freezes the counter at
its install value for comparison runs.

Hit rate depends on the tile traversal order, which is the point of the
schedule module: coherent orders revisit a Gaussian's tiles while its
line is still resident.

DRAM accounting is exact: every miss transfers one line, the link moves
38.4 bytes per cycle (Fraction arithmetic, so 384 bytes is exactly 10
cycles), and energy scales linearly with bytes moved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .schedule import TRAJECTORY_KINDS, make_trajectory

DRAM_BYTES_PER_CYCLE = Fraction("38.4")
IMPORTANCE_MAX = 15


@dataclass
class CacheConfig:
    capacity_bytes: int = 88 * 1024
    ways: int = 4
    line_bytes: int = 32
    static_importance: bool = False

    def __post_init__(self):
        if self.capacity_bytes % (self.ways * self.line_bytes) != 0:
            raise ValueError("capacity must be a whole number of sets")
        if self.n_sets < 1:
            raise ValueError("cache needs at least one set")

    @property
    def n_lines(self) -> int:
        return self.capacity_bytes // self.line_bytes

    @property
    def n_sets(self) -> int:
        return self.n_lines // self.ways


@dataclass
class CacheStats:
    accesses: int = 0
    hits: int = 0
    misses: int = 0
    evictions: int = 0
    line_bytes: int = 32

    @property
    def dram_bytes(self) -> int:
        return self.misses * self.line_bytes

    @property
    def hit_rate(self) -> float:
        return self.hits / self.accesses if self.accesses else 0.0

    def as_dict(self) -> dict:
        return {"accesses": self.accesses, "hits": self.hits,
                "misses": self.misses, "evictions": self.evictions,
                "dram_bytes": self.dram_bytes, "hit_rate": self.hit_rate}


class GaussianCache:
    """The importance-guided set-associative cache."""

    def __init__(self, config: CacheConfig | None = None):
        self.cfg = config or CacheConfig()
        n = self.cfg.n_sets
        w = self.cfg.ways
        self._tags = [[-1] * w for _ in range(n)]
        self._imp = [[0] * w for _ in range(n)]
        self._last = [[0] * w for _ in range(n)]
        self._clock = 0
        self.stats = CacheStats(line_bytes=self.cfg.line_bytes)

    def access(self, gs_id: int, importance: int = 1) -> bool:
        """One feature fetch; returns True on hit."""
        s = gs_id % self.cfg.n_sets
        self._clock += 1
        self.stats.accesses += 1
        tags = self._tags[s]
        for w, tag in enumerate(tags):
            if tag == gs_id:
                self.stats.hits += 1
                self._last[s][w] = self._clock
                if not self.cfg.static_importance and self._imp[s][w] > 0:
                    self._imp[s][w] -= 1
                return True
        self.stats.misses += 1
        imp = self._imp[s]
        last = self._last[s]
        victim = -1
        for w, tag in enumerate(tags):
            if tag == -1:
                victim = w
                break
        if victim == -1:
            victim = min(range(len(tags)), key=lambda w: (imp[w], last[w]))
            self.stats.evictions += 1
        tags[victim] = gs_id
        imp[victim] = min(IMPORTANCE_MAX, int(importance))
        last[victim] = self._clock
        return False

    def set_state(self, set_index: int) -> list:
        """Valid (tag, importance) pairs of one set in way order."""
        return [(t, i) for t, i in zip(self._tags[set_index], self._imp[set_index])
                if t != -1]


class InfiniteCache:
    """Upper bound: only compulsory misses, one per distinct Gaussian."""

    def __init__(self, line_bytes: int = 32):
        self._seen = set()
        self.stats = CacheStats(line_bytes=line_bytes)

    def access(self, gs_id: int, importance: int = 1) -> bool:
        self.stats.accesses += 1
        if gs_id in self._seen:
            self.stats.hits += 1
            return True
        self._seen.add(gs_id)
        self.stats.misses += 1
        return False


@dataclass
class TileWorkload:
    """Per-tile Gaussian id lists plus each Gaussian's tile span."""

    tiles_x: int
    tiles_y: int
    members: dict  # (tx, ty) -> sequence of Gaussian ids, ascending
    spans: dict = field(default_factory=dict)  # id -> number of tiles touched

    def __post_init__(self):
        if not self.spans:
            spans = {}
            for ids in self.members.values():
                for g in ids:
                    spans[int(g)] = spans.get(int(g), 0) + 1
            self.spans = spans

    @property
    def n_gaussians(self) -> int:
        return len(self.spans)

    @property
    def total_accesses(self) -> int:
        return sum(len(v) for v in self.members.values())


def workload_from_projection(res) -> TileWorkload:
    members = {}
    spans = {}
    for ty in range(res.grid.tiles_y):
        for tx in range(res.grid.tiles_x):
            idx = res.grid.indices(tx, ty)
            if len(idx):
                members[(tx, ty)] = [int(v) for v in res.ids[idx]]
    for i, gid in enumerate(res.ids):
        spans[int(gid)] = int(res.tile_counts[i])
    return TileWorkload(tiles_x=res.grid.tiles_x, tiles_y=res.grid.tiles_y,
                        members=members, spans=spans)


# footprint shapes spanning 2..6 tiles, horizontal and vertical
_SHAPES = [(2, 1), (1, 2), (3, 1), (1, 3), (2, 2), (4, 1), (1, 4),
           (5, 1), (1, 5), (3, 2), (2, 3), (6, 1), (1, 6)]


def synthetic_tile_workload(tiles_x: int, tiles_y: int, n_gaussians: int,
                            seed: int = 0) -> TileWorkload:
    """Random rectangular footprints of 2-6 tiles, fully inside the grid."""
    rng = np.random.default_rng(seed)
    members = {}
    spans = {}
    shapes = [s for s in _SHAPES if s[0] <= tiles_x and s[1] <= tiles_y]
    if not shapes:
        raise ValueError("grid too small for any footprint shape")
    picks = rng.integers(0, len(shapes), n_gaussians)
    for gid in range(n_gaussians):
        w, h = shapes[picks[gid]]
        x0 = int(rng.integers(0, tiles_x - w + 1))
        y0 = int(rng.integers(0, tiles_y - h + 1))
        spans[gid] = w * h
        for ty in range(y0, y0 + h):
            for tx in range(x0, x0 + w):
                members.setdefault((tx, ty), []).append(gid)
    return TileWorkload(tiles_x=tiles_x, tiles_y=tiles_y, members=members,
                        spans=spans)


def simulate_frame(workload: TileWorkload, kind: str = "pi",
                   config: CacheConfig | None = None, infinite: bool = False,
                   block_rotation: int = 0,
                   trajectory: np.ndarray | None = None) -> CacheStats:
    """Replay one frame's feature fetches through the cache."""
    if trajectory is None:
        trajectory = make_trajectory(workload.tiles_x, workload.tiles_y, kind,
                                     block_rotation)
    if infinite:
        cache = InfiniteCache(line_bytes=(config or CacheConfig()).line_bytes)
    else:
        cache = GaussianCache(config)
    members = workload.members
    spans = workload.spans
    for tx, ty in trajectory:
        for gid in members.get((int(tx), int(ty)), ()):
            cache.access(gid, spans[gid])
    return cache.stats


def sweep_trajectories(workload: TileWorkload, config: CacheConfig | None = None,
                       kinds=TRAJECTORY_KINDS, block_rotation: int = 0) -> dict:
    return {k: simulate_frame(workload, kind=k, config=config,
                              block_rotation=block_rotation) for k in kinds}


def dram_traffic_report(stats: CacheStats, burst_latency_cycles: int = 0,
                        pj_per_byte: float = 20.0) -> dict:
    """Exact transfer-cycle and energy accounting for one frame's misses."""
    cycles = math.ceil(Fraction(stats.dram_bytes) / DRAM_BYTES_PER_CYCLE)
    cycles += burst_latency_cycles * stats.misses
    baseline_bytes = stats.accesses * stats.line_bytes
    ratio = stats.dram_bytes / baseline_bytes if baseline_bytes else 0.0
    return {
        "accesses": stats.accesses,
        "misses": stats.misses,
        "hit_rate": stats.hit_rate,
        "dram_bytes": stats.dram_bytes,
        "baseline_bytes": baseline_bytes,
        "traffic_ratio": ratio,
        "dram_cycles": int(cycles),
        "burst_latency_cycles": burst_latency_cycles,
        "energy_pj": stats.dram_bytes * pj_per_byte,
        "baseline_energy_pj": baseline_bytes * pj_per_byte,
        "energy_ratio": ratio,
    }
