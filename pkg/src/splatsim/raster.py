"""Tile rasterization of projected Gaussians with operation accounting.

Two equivalent alpha evaluation paths exist for a 16x16 tile:

  naive  every pixel evaluates the full exponent independently; the
         dedicated per-pixel datapath costs 8 mul, 4 add, 1 exp per
         evaluation (2048 mul / 1024 add / 256 exp per Gaussian-tile).

  axis   the exponent is separated into per-column and per-row line terms
         plus a rank-one cross product:
             xterm[c] = c * dx        x2term[c] = (-a/2) * dx^2
             yterm[r] = dy            y2term[r] = (-b/2) * dy^2
             E[r, c]  = (xterm[c] * yterm[r] + x2term[c]) + y2term[r]
         Sixteen X line units cost 2 mul + 2 add each, sixteen Y line units
         2 mul + 1 add each (64 mul / 48 add per Gaussian-tile), and each
         pixel then needs only 2 mul + 2 add + 1 exp (512 / 512 / 256).
         Total 576 mul + 560 add versus 2048 + 1024: a 63.0% MAC saving,
         2.25 mul and 2.1875 add per pixel unit amortized.

All counters charge these unit costs; they are a hardware cost model, not
a tally of host float operations.  Blending charges 5 mul + 4 add per
contributing Gaussian-pixel pair (front-to-back compositing), and weighted
blending 4 mul + 4 add plus 3 divides per resolved pixel.

Pixels sample at integer coordinates.  Alpha is min(opacity * exp(E),
alpha_cap); contributions below alpha_skip are discarded; a pixel stops
accepting contributions once its transmittance falls below t_stop (with
t_stop = 0 blending equals the closed-form series exactly).

In fp16 mode every scalar step above is rounded to binary16 (numpy float16
ufuncs round after each op; exp is exact-then-round), matching the
bit-level model in the fp16 module.  Inputs are quantized once up front.
Image coordinates must stay below 2048 in fp16 mode so pixel indices are
exactly representable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import fp16
from .projection import ProjectionResult, ProjectedGaussian, TILE_SIZE

ALPHA_CAP = 0.99
ALPHA_SKIP = 1.0 / 255.0
T_STOP = 1e-4

NAIVE_PIXEL_COST = (8, 4, 1)  # mul, add, exp per pixel evaluation
AXIS_LINE_COST = (64, 48)  # mul, add per Gaussian-tile for the 32 line units
AXIS_PIXEL_COST = (2, 2, 1)
BLEND_SORTED_COST = (5, 4)  # per contributing pair
BLEND_WEIGHTED_COST = (4, 4)


@dataclass
class PhaseCounts:
    mul: int = 0
    add: int = 0
    exp: int = 0
    div: int = 0

    def __add__(self, other):
        return PhaseCounts(self.mul + other.mul, self.add + other.add,
                           self.exp + other.exp, self.div + other.div)

    def macs(self) -> int:
        return self.mul + self.add

    def as_dict(self) -> dict:
        return {"mul": self.mul, "add": self.add, "exp": self.exp, "div": self.div}


@dataclass
class OpCounts:
    """Operation tallies split by pipeline phase."""

    alpha: PhaseCounts = field(default_factory=PhaseCounts)
    lines: PhaseCounts = field(default_factory=PhaseCounts)
    blend: PhaseCounts = field(default_factory=PhaseCounts)

    def __add__(self, other):
        return OpCounts(self.alpha + other.alpha, self.lines + other.lines,
                        self.blend + other.blend)

    def total(self) -> PhaseCounts:
        return self.alpha + self.lines + self.blend

    def alpha_macs(self) -> int:
        return self.alpha.macs() + self.lines.macs()

    def as_dict(self) -> dict:
        return {"alpha": self.alpha.as_dict(), "lines": self.lines.as_dict(),
                "blend": self.blend.as_dict(), "total": self.total().as_dict()}


@dataclass
class RasterConfig:
    alpha_cap: float = ALPHA_CAP
    alpha_skip: float = ALPHA_SKIP
    t_stop: float = T_STOP
    background: tuple = (0.0, 0.0, 0.0)
    alpha_path: str = "axis"  # axis | naive

    def __post_init__(self):
        if self.alpha_path not in ("axis", "naive"):
            raise ValueError(f"unknown alpha path {self.alpha_path!r}")


@dataclass
class AxisTerms:
    """Per-tile separable exponent terms for one Gaussian."""

    xterm: np.ndarray  # (16,) c * dx
    x2term: np.ndarray  # (16,) (-a/2) * dx^2
    yterm: np.ndarray  # (16,) dy
    y2term: np.ndarray  # (16,) (-b/2) * dy^2


def alpha_naive(pg: ProjectedGaussian, pixel, counts: OpCounts | None = None,
                alpha_cap: float = ALPHA_CAP, mode: str = "exact") -> float:
    """Full per-pixel alpha evaluation (Eq. 2 of the compositing model)."""
    dt = fp16.dtype_for(mode)
    ha, hb, c = (dt(v) for v in pg.conic)
    mux, muy = dt(pg.mu[0]), dt(pg.mu[1])
    o = dt(pg.opacity)
    px, py = dt(pixel[0]), dt(pixel[1])
    dx = dt(px - mux)
    dy = dt(py - muy)
    x2 = dt(ha * dt(dx * dx))
    y2 = dt(hb * dt(dy * dy))
    cross = dt(dt(c * dx) * dy)
    e = dt(dt(x2 + y2) + cross)
    if mode == "fp16":
        ex = np.float16(np.exp(np.float64(e)))
    else:
        ex = np.exp(e)
    a = min(float(dt(o * ex)), alpha_cap)
    if counts is not None:
        counts.alpha.mul += NAIVE_PIXEL_COST[0]
        counts.alpha.add += NAIVE_PIXEL_COST[1]
        counts.alpha.exp += NAIVE_PIXEL_COST[2]
    return a


def axis_terms(pg: ProjectedGaussian, tile_origin, counts: OpCounts | None = None,
               mode: str = "exact") -> AxisTerms:
    """Line-unit pass: 16 X units (2 mul + 2 add each), 16 Y units (2 mul + 1 add)."""
    dt = fp16.dtype_for(mode)
    ox, oy = tile_origin
    xs = np.arange(ox, ox + TILE_SIZE, dtype=dt)
    ys = np.arange(oy, oy + TILE_SIZE, dtype=dt)
    ha, hb, c = (dt(v) for v in pg.conic)
    dx = xs - dt(pg.mu[0])
    dy = ys - dt(pg.mu[1])
    terms = AxisTerms(
        xterm=c * dx,
        x2term=ha * (dx * dx),
        yterm=dy,
        y2term=hb * (dy * dy),
    )
    if counts is not None:
        counts.lines.mul += AXIS_LINE_COST[0]
        counts.lines.add += AXIS_LINE_COST[1]
    return terms


def alpha_axis_tile(pg: ProjectedGaussian, tile_origin, counts: OpCounts | None = None,
                    alpha_cap: float = ALPHA_CAP, mode: str = "exact") -> np.ndarray:
    """Axis-separated alpha for a full 16x16 tile; rows index y."""
    t = axis_terms(pg, tile_origin, counts=counts, mode=mode)
    cross = t.yterm[:, None] * t.xterm[None, :]
    e = (cross + t.x2term[None, :]) + t.y2term[:, None]
    ex = fp16.exp_array(e, mode)
    dt = fp16.dtype_for(mode)
    a = np.minimum((dt(pg.opacity) * ex).astype(np.float64), alpha_cap)
    if counts is not None:
        n = TILE_SIZE * TILE_SIZE
        counts.alpha.mul += AXIS_PIXEL_COST[0] * n
        counts.alpha.add += AXIS_PIXEL_COST[1] * n
        counts.alpha.exp += AXIS_PIXEL_COST[2] * n
    return a


def alpha_tiles_batch(mu, conic, opacity, tile_origin, mode, path, alpha_cap):
    """Alphas (G, 256) for all Gaussians of one tile, either evaluation path."""
    dt = fp16.dtype_for(mode)
    ox, oy = tile_origin
    xs = np.arange(ox, ox + TILE_SIZE, dtype=dt)
    ys = np.arange(oy, oy + TILE_SIZE, dtype=dt)
    ha = conic[:, 0:1]
    hb = conic[:, 1:2]
    c = conic[:, 2:3]
    dx = xs[None, :] - mu[:, 0:1]  # (G, 16)
    dy = ys[None, :] - mu[:, 1:2]
    if path == "axis":
        xterm = c * dx
        x2term = ha * (dx * dx)
        yterm = dy
        y2term = hb * (dy * dy)
        cross = yterm[:, :, None] * xterm[:, None, :]  # (G, 16, 16) rows y
        e = (cross + x2term[:, None, :]) + y2term[:, :, None]
    else:
        dxg = np.broadcast_to(dx[:, None, :], (len(mu), TILE_SIZE, TILE_SIZE))
        dyg = np.broadcast_to(dy[:, :, None], (len(mu), TILE_SIZE, TILE_SIZE))
        x2 = ha[:, :, None] * (dxg * dxg)
        y2 = hb[:, :, None] * (dyg * dyg)
        cross = (c[:, :, None] * dxg) * dyg
        e = (x2 + y2) + cross
    ex = fp16.exp_array(e, mode)
    a = np.minimum((opacity[:, None, None] * ex).astype(np.float64), alpha_cap)
    return a.reshape(len(mu), -1)


def _charge_alpha_phase(counts: OpCounts, n_pairs: int, path: str) -> None:
    n = TILE_SIZE * TILE_SIZE
    if path == "axis":
        counts.lines.mul += AXIS_LINE_COST[0] * n_pairs
        counts.lines.add += AXIS_LINE_COST[1] * n_pairs
        counts.alpha.mul += AXIS_PIXEL_COST[0] * n * n_pairs
        counts.alpha.add += AXIS_PIXEL_COST[1] * n * n_pairs
        counts.alpha.exp += AXIS_PIXEL_COST[2] * n * n_pairs
    else:
        counts.alpha.mul += NAIVE_PIXEL_COST[0] * n * n_pairs
        counts.alpha.add += NAIVE_PIXEL_COST[1] * n * n_pairs
        counts.alpha.exp += NAIVE_PIXEL_COST[2] * n * n_pairs


def blend_sorted(alphas: np.ndarray, rgbs: np.ndarray, depths: np.ndarray,
                 cfg: RasterConfig = RasterConfig(), counts: OpCounts | None = None,
                 mode: str = "exact", checked: bool = True):
    """Front-to-back compositing of depth-ascending contributions.

    alphas is (G, P), rgbs (G, 3), depths (G,) ascending.  Returns the
    (P, 3) tile pixels and the number of contributing pairs.
    """
    if checked and np.any(np.diff(depths) < 0):
        raise ValueError("blend_sorted input is not sorted by ascending depth")
    dt = fp16.dtype_for(mode)
    g, p = alphas.shape
    trans = np.ones(p, dtype=dt)
    color = np.zeros((p, 3), dtype=dt)
    a16 = alphas.astype(dt)
    rgb16 = rgbs.astype(dt)
    contributing = 0
    for i in range(g):
        active = trans.astype(np.float64) >= cfg.t_stop
        take = active & (a16[i].astype(np.float64) >= cfg.alpha_skip)
        if not take.any():
            if not active.any():
                break
            continue
        w = trans[take] * a16[i, take]
        color[take] += w[:, None] * rgb16[i]
        trans[take] = trans[take] * (dt(1.0) - a16[i, take])
        contributing += int(take.sum())
    bg = np.asarray(cfg.background, dtype=dt)
    color = color + trans[:, None] * bg
    if counts is not None:
        counts.blend.mul += BLEND_SORTED_COST[0] * contributing
        counts.blend.add += BLEND_SORTED_COST[1] * contributing
    return color.astype(np.float64), contributing


@dataclass
class FrameStats:
    """Per-frame rendering report."""

    width: int
    height: int
    mode: str
    arithmetic: str
    alpha_path: str
    n_projected: int
    n_culled: int
    n_degenerate: int
    pairs: int  # Gaussian-tile pairs rasterized
    contributing: int  # Gaussian-pixel pairs that reached the blender
    zero_den_pixels: int  # weighted mode only
    counts: OpCounts
    tile_gaussian_counts: np.ndarray

    def alpha_mac_reduction(self) -> float:
        """Fraction of alpha-phase MACs saved versus the naive path, in [0, 1]."""
        if self.pairs == 0:
            return 0.0
        naive = self.pairs * TILE_SIZE * TILE_SIZE * (NAIVE_PIXEL_COST[0] + NAIVE_PIXEL_COST[1])
        return 1.0 - self.counts.alpha_macs() / naive

    def to_dict(self) -> dict:
        return {
            "width": self.width, "height": self.height, "mode": self.mode,
            "arithmetic": self.arithmetic, "alpha_path": self.alpha_path,
            "n_projected": self.n_projected, "n_culled": self.n_culled,
            "n_degenerate": self.n_degenerate, "pairs": self.pairs,
            "contributing": self.contributing,
            "zero_den_pixels": self.zero_den_pixels,
            "alpha_mac_reduction_percent": 100.0 * self.alpha_mac_reduction(),
            "counts": self.counts.as_dict(),
            "tile_gaussian_counts": self.tile_gaussian_counts.tolist(),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def depth_order(depths: np.ndarray) -> np.ndarray:
    # stable sort keeps the ascending-id tile order as the tiebreak
    return np.argsort(depths, kind="stable")


def render_frame(res: ProjectionResult, mode: str = "sorted", arithmetic: str = "exact",
                 f_values: np.ndarray | None = None, cfg: RasterConfig = RasterConfig()):
    """Rasterize one frame; returns (image (H, W, 3) float64 in [0, 1], FrameStats).

    mode "sorted" composites front to back per tile.  mode "weighted" uses
    order-independent weighted blending and needs per-Gaussian weights
    f_values aligned with res arrays.
    """
    from .neuralsort import blend_weighted  # local import to keep layering one-way

    fp16.require_mode(arithmetic)
    if mode not in ("sorted", "weighted"):
        raise ValueError(f"unknown render mode {mode!r}")
    if mode == "weighted":
        if f_values is None:
            raise ValueError("weighted mode needs per-Gaussian f_values")
        if len(f_values) != len(res.ids):
            raise ValueError("f_values length does not match projected Gaussians")
    if arithmetic == "fp16" and max(res.width, res.height) > 2048:
        raise ValueError("fp16 mode supports image sides up to 2048 pixels")

    dt = fp16.dtype_for(arithmetic)
    mu = res.mu.astype(dt)
    conic = res.conic.astype(dt)
    opacity = res.opacity.astype(dt)
    rgb = res.rgb.astype(dt)
    fv = None if f_values is None else np.asarray(f_values, dtype=dt)

    counts = OpCounts()
    h, w = res.height, res.width
    image = np.zeros((h, w, 3), dtype=np.float64)
    image[:, :] = np.asarray(cfg.background, dtype=np.float64)
    pairs = 0
    contributing = 0
    zero_den = 0
    grid = res.grid
    for ty in range(grid.tiles_y):
        for tx in range(grid.tiles_x):
            members = grid.indices(tx, ty)
            oy, ox = ty * TILE_SIZE, tx * TILE_SIZE
            th = min(TILE_SIZE, h - oy)
            tw = min(TILE_SIZE, w - ox)
            if len(members) == 0:
                continue
            order = members[depth_order(res.depth[members])]
            alphas = alpha_tiles_batch(mu[order], conic[order], opacity[order],
                                        (ox, oy), arithmetic, cfg.alpha_path, cfg.alpha_cap)
            pairs += len(order)
            _charge_alpha_phase(counts, len(order), cfg.alpha_path)
            if mode == "sorted":
                tile, contrib = blend_sorted(alphas, rgb[order], res.depth[order],
                                             cfg=cfg, counts=counts, mode=arithmetic,
                                             checked=False)
            else:
                tile, contrib, zd = blend_weighted(alphas, rgb[order], fv[order],
                                                   cfg=cfg, counts=counts, mode=arithmetic)
                zero_den += zd
            contributing += contrib
            tile = tile.reshape(TILE_SIZE, TILE_SIZE, 3)
            image[oy:oy + th, ox:ox + tw] = tile[:th, :tw]
    image = np.clip(image, 0.0, 1.0)
    stats = FrameStats(
        width=w, height=h, mode=mode, arithmetic=arithmetic, alpha_path=cfg.alpha_path,
        n_projected=len(res.ids), n_culled=res.n_culled, n_degenerate=res.n_degenerate,
        pairs=pairs, contributing=contributing, zero_den_pixels=zero_den,
        counts=counts, tile_gaussian_counts=grid.counts(),
    )
    return image, stats


def save_ppm(image: np.ndarray, path, gamma: float = 1.0 / 2.2) -> None:
    """8-bit P6 with display gamma applied to the linear image."""
    enc = np.clip(image, 0.0, 1.0) ** gamma
    u8 = (enc * 255.0 + 0.5).astype(np.uint8)
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(u8.tobytes())


def save_raw(image: np.ndarray, path) -> None:
    """Raw float32 little-endian pixels plus a JSON sidecar describing layout."""
    path = str(path)
    image.astype("<f4").tofile(path)
    h, w, c = image.shape
    with open(path + ".json", "w") as fh:
        json.dump({"width": w, "height": h, "channels": c,
                   "dtype": "float32-le", "layout": "row-major HWC"}, fh, indent=2)


def load_raw(path):
    path = str(path)
    with open(path + ".json") as fh:
        meta = json.load(fh)
    data = np.fromfile(path, dtype="<f4")
    return data.reshape(meta["height"], meta["width"], meta["channels"]).astype(np.float64)
