"""Tile traversal orders for the rasterizer front end.

The scheduler decides the order in which the pipeline visits screen tiles.
Spatially coherent orders keep consecutive tiles close together, which is
what makes the Gaussian feature cache effective: a Gaussian spanning
several tiles is revisited while its features are still resident.

Four traversal families:

  raster  row-major, every row left to right
  s       boustrophedon rows (odd rows reversed)
  z       Morton order; the code interleaves coordinate bits as
          ... y1 x1 y0 x0, so (x=2, y=3) -> 0b1110 = 14.  Non-square and
          non-power-of-two grids keep the relative Morton order of their
          cells.
  pi      Hilbert order inside complete 8x8 blocks, blocks walked in
          boustrophedon order; leftover right strip and bottom rows are
          covered by plain boustrophedon.  The 8x8 Hilbert pattern starts
          from the order-1 curve (0,0) -> (1,0) -> (1,1) -> (0,1) and can
          be used in any of its four rotations.

Every traversal visits each tile exactly once; the mean Manhattan distance
between consecutive tiles is the locality figure of merit.
"""

from __future__ import annotations

import csv
from functools import lru_cache

import numpy as np

TRAJECTORY_KINDS = ("raster", "s", "z", "pi")

PI_BLOCK = 8
PI_BLOCK_ORDER = 3  # 2^3 = 8


def _spread_bits(v: np.ndarray) -> np.ndarray:
    """Insert a zero between each of the low 16 bits."""
    v = np.asarray(v, dtype=np.uint32) & np.uint32(0xFFFF)
    v = (v | (v << 8)) & np.uint32(0x00FF00FF)
    v = (v | (v << 4)) & np.uint32(0x0F0F0F0F)
    v = (v | (v << 2)) & np.uint32(0x33333333)
    v = (v | (v << 1)) & np.uint32(0x55555555)
    return v


def _compact_bits(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.uint32) & np.uint32(0x55555555)
    v = (v | (v >> 1)) & np.uint32(0x33333333)
    v = (v | (v >> 2)) & np.uint32(0x0F0F0F0F)
    v = (v | (v >> 4)) & np.uint32(0x00FF00FF)
    v = (v | (v >> 8)) & np.uint32(0x0000FFFF)
    return v


def morton_encode(x, y):
    """Bit-interleaved code ... y1 x1 y0 x0; works on scalars or arrays."""
    code = _spread_bits(x) | (_spread_bits(y) << np.uint32(1))
    if np.isscalar(x) or (np.ndim(x) == 0 and np.ndim(y) == 0):
        return int(code)
    return code.astype(np.int64)


def morton_decode(code):
    c = np.asarray(code, dtype=np.uint32)
    x = _compact_bits(c)
    y = _compact_bits(c >> np.uint32(1))
    if np.isscalar(code) or np.ndim(code) == 0:
        return int(x), int(y)
    return x.astype(np.int64), y.astype(np.int64)


def _rotate_cw(x: int, y: int, n: int, rotation: int):
    """Rotate grid coords by rotation * 90 degrees within an n x n square."""
    for _ in range(rotation % 4):
        x, y = n - 1 - y, x
    return x, y


def hilbert_d2xy(order: int, d: int, rotation: int = 0):
    """Position of step d on the 2^order Hilbert curve.

    The base orientation visits (0,0) -> (1,0) -> (1,1) -> (0,1).
    """
    n = 1 << order
    if not 0 <= d < n * n:
        raise ValueError(f"d={d} outside curve of {n * n} cells")
    x = y = 0
    t = d
    s = 1
    while s < n:
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        if ry == 0:
            if rx == 1:
                x = s - 1 - x
                y = s - 1 - y
            x, y = y, x
        x += s * rx
        y += s * ry
        t //= 4
        s *= 2
    x, y = y, x  # swap into the x-first base orientation
    return _rotate_cw(x, y, n, rotation)


def hilbert_xy2d(order: int, x: int, y: int, rotation: int = 0) -> int:
    n = 1 << order
    if not (0 <= x < n and 0 <= y < n):
        raise ValueError(f"({x}, {y}) outside {n} x {n} grid")
    # undo the rotation, then the axis swap, then run the standard walk
    x, y = _rotate_cw(x, y, n, (-rotation) % 4)
    x, y = y, x
    d = 0
    s = n // 2
    while s > 0:
        rx = 1 if (x & s) > 0 else 0
        ry = 1 if (y & s) > 0 else 0
        d += s * s * ((3 * rx) ^ ry)
        if ry == 0:
            if rx == 1:
                x = s - 1 - x
                y = s - 1 - y
            x, y = y, x
        s //= 2
    return d


@lru_cache(maxsize=8)
def hilbert_block_pattern(rotation: int = 0) -> np.ndarray:
    """The 64-step 8x8 Hilbert pattern as an (64, 2) array of (x, y)."""
    pts = [hilbert_d2xy(PI_BLOCK_ORDER, d, rotation) for d in range(PI_BLOCK ** 2)]
    out = np.array(pts, dtype=np.int64)
    out.setflags(write=False)
    return out


def _s_rows(x_lo, x_hi, y_lo, y_hi):
    """Boustrophedon cover of a rectangle, rows top to bottom."""
    out = []
    for i, y in enumerate(range(y_lo, y_hi)):
        xs = range(x_lo, x_hi) if i % 2 == 0 else range(x_hi - 1, x_lo - 1, -1)
        out.extend((x, y) for x in xs)
    return out


def make_trajectory(tiles_x: int, tiles_y: int, kind: str,
                    block_rotation: int = 0) -> np.ndarray:
    """Visit order over the tile grid as an (N, 2) array of (tx, ty)."""
    if tiles_x <= 0 or tiles_y <= 0:
        raise ValueError("grid must have at least one tile per axis")
    kind = kind.lower()
    if kind == "raster":
        ys, xs = np.mgrid[0:tiles_y, 0:tiles_x]
        return np.column_stack([xs.ravel(), ys.ravel()])
    if kind == "s":
        return np.array(_s_rows(0, tiles_x, 0, tiles_y), dtype=np.int64)
    if kind == "z":
        ys, xs = np.mgrid[0:tiles_y, 0:tiles_x]
        xs = xs.ravel()
        ys = ys.ravel()
        order = np.argsort(morton_encode(xs, ys), kind="stable")
        return np.column_stack([xs[order], ys[order]])
    if kind == "pi":
        pattern = hilbert_block_pattern(block_rotation)
        bw = tiles_x // PI_BLOCK
        bh = tiles_y // PI_BLOCK
        parts = []
        for by in range(bh):
            bxs = range(bw) if by % 2 == 0 else range(bw - 1, -1, -1)
            for bx in bxs:
                base = np.array([bx * PI_BLOCK, by * PI_BLOCK], dtype=np.int64)
                parts.append(pattern + base)
        if bw * PI_BLOCK < tiles_x and bh > 0:
            parts.append(np.array(_s_rows(bw * PI_BLOCK, tiles_x, 0, bh * PI_BLOCK),
                                  dtype=np.int64))
        if bh * PI_BLOCK < tiles_y:
            parts.append(np.array(_s_rows(0, tiles_x, bh * PI_BLOCK, tiles_y),
                                  dtype=np.int64))
        return np.concatenate(parts) if parts else np.empty((0, 2), dtype=np.int64)
    raise ValueError(f"unknown trajectory kind {kind!r}")


def validate_trajectory(traj: np.ndarray, tiles_x: int, tiles_y: int) -> None:
    """Raise unless traj visits every tile of the grid exactly once."""
    if len(traj) != tiles_x * tiles_y:
        raise ValueError(f"trajectory length {len(traj)} != {tiles_x * tiles_y}")
    seen = set(map(tuple, np.asarray(traj).tolist()))
    if len(seen) != tiles_x * tiles_y:
        raise ValueError("trajectory revisits a tile")
    for x, y in seen:
        if not (0 <= x < tiles_x and 0 <= y < tiles_y):
            raise ValueError(f"tile ({x}, {y}) outside grid")


def step_lengths(traj: np.ndarray) -> np.ndarray:
    """Manhattan distance between consecutive visits."""
    t = np.asarray(traj, dtype=np.int64)
    return np.abs(np.diff(t, axis=0)).sum(axis=1)


def mean_manhattan_step(traj: np.ndarray) -> float:
    steps = step_lengths(traj)
    return float(steps.mean()) if len(steps) else 0.0


def trajectory_table(tiles_x: int, tiles_y: int, block_rotation: int = 0) -> list:
    """Locality summary of all traversal kinds on one grid."""
    rows = []
    for kind in TRAJECTORY_KINDS:
        traj = make_trajectory(tiles_x, tiles_y, kind, block_rotation)
        steps = step_lengths(traj)
        rows.append({
            "kind": kind,
            "tiles_x": tiles_x,
            "tiles_y": tiles_y,
            "mean_step": float(steps.mean()) if len(steps) else 0.0,
            "max_step": int(steps.max()) if len(steps) else 0,
            "unit_step_fraction": float((steps == 1).mean()) if len(steps) else 0.0,
        })
    return rows


def save_trajectory_csv(traj: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "tx", "ty"])
        for i, (x, y) in enumerate(np.asarray(traj)):
            w.writerow([i, int(x), int(y)])
