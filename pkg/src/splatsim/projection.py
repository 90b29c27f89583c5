"""Projection of 3D Gaussians to screen-space splats and tile assignment.

A world covariance S' = R diag(s^2) R^T is pushed through the camera with
the EWA affine approximation: V = J W S' W^T J^T + blur*I, where W is the
world-to-camera rotation and J the perspective Jacobian at the mean.  The
low-pass blur term (0.3 px^2) keeps splats at least a fraction of a pixel
wide.

The inverse 2D covariance is carried as conic parameters (a, b, c) chosen
so the Gaussian exponent reads

    E = -1/2 a dx^2 - 1/2 b dy^2 + c dx dy
      = -1/2 [dx dy] V^-1 [dx dy]^T

i.e. a = Vyy/det, b = Vxx/det, c = Vxy/det.  Storage keeps (-a/2, -b/2, c)
so the rasterizer applies no further sign or halving work.  Pixels sample
at integer coordinates; tile (tx, ty) owns the half-open pixel rectangle
[16 tx, 16 tx + 16) x [16 ty, 16 ty + 16).

Tile assignment is the conservative axis-aligned square of half-width
r = 3 sqrt(lambda_max(V)) around the projected mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .scene import Camera, Gaussian3D, Scene, SH_C0, sigmoid

TILE_SIZE = 16
BLUR = 0.3

SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)


def quat_to_rot(quats: np.ndarray) -> np.ndarray:
    """Unit-normalize quaternions (w, x, y, z) and return (N, 3, 3) rotations."""
    q = np.asarray(quats, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def covariance_3d(scales_log: np.ndarray, quats: np.ndarray) -> np.ndarray:
    """World covariance(s) R diag(exp(2 s_log)) R^T, shape (N, 3, 3)."""
    rot = quat_to_rot(np.atleast_2d(quats))
    s = np.exp(np.atleast_2d(np.asarray(scales_log, dtype=np.float64)))
    m = rot * s[:, None, :]
    return m @ np.swapaxes(m, -1, -2)


def eval_sh(sh: np.ndarray, dirs: np.ndarray, degree: int = 3) -> np.ndarray:
    """Evaluate SH color for unit directions; returns rgb clamped at zero.

    sh has shape (N, 16, 3), dirs (N, 3).  The DC term maps through
    rgb = SH_C0 * sh[0] + 0.5.
    """
    if degree not in (0, 1, 2, 3):
        raise ValueError(f"sh degree must be 0..3, got {degree}")
    sh = np.asarray(sh, dtype=np.float64)
    res = SH_C0 * sh[:, 0, :]
    if degree >= 1:
        x, y, z = (dirs[:, i:i + 1] for i in range(3))
        res = res - SH_C1 * y * sh[:, 1] + SH_C1 * z * sh[:, 2] - SH_C1 * x * sh[:, 3]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        res = (res
               + SH_C2[0] * xy * sh[:, 4]
               + SH_C2[1] * yz * sh[:, 5]
               + SH_C2[2] * (2.0 * zz - xx - yy) * sh[:, 6]
               + SH_C2[3] * xz * sh[:, 7]
               + SH_C2[4] * (xx - yy) * sh[:, 8])
    if degree >= 3:
        res = (res
               + SH_C3[0] * y * (3.0 * xx - yy) * sh[:, 9]
               + SH_C3[1] * xy * z * sh[:, 10]
               + SH_C3[2] * y * (4.0 * zz - xx - yy) * sh[:, 11]
               + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sh[:, 12]
               + SH_C3[4] * x * (4.0 * zz - xx - yy) * sh[:, 13]
               + SH_C3[5] * z * (xx - yy) * sh[:, 14]
               + SH_C3[6] * x * (xx - 3.0 * yy) * sh[:, 15])
    return np.clip(res + 0.5, 0.0, None)


@dataclass
class ProjectedGaussian:
    """One splat: screen mean, stored conic (-a/2, -b/2, c), activated opacity,
    rgb color, and camera-space depth."""

    id: int
    mu: np.ndarray  # (2,)
    conic: np.ndarray  # (3,) = (-a/2, -b/2, c)
    opacity: float
    rgb: np.ndarray  # (3,)
    depth: float


@dataclass
class TileGrid:
    """Per-tile membership lists (indices into the projected arrays), row-major tiles."""

    tiles_x: int
    tiles_y: int
    tile_size: int
    members: list  # tiles_x * tiles_y arrays of int indices, ascending

    def tile_index(self, tx: int, ty: int) -> int:
        if not (0 <= tx < self.tiles_x and 0 <= ty < self.tiles_y):
            raise IndexError(f"tile ({tx}, {ty}) outside {self.tiles_x}x{self.tiles_y} grid")
        return ty * self.tiles_x + tx

    def indices(self, tx: int, ty: int) -> np.ndarray:
        return self.members[self.tile_index(tx, ty)]

    def counts(self) -> np.ndarray:
        return np.array([len(m) for m in self.members], dtype=np.int64)


@dataclass
class ProjectionResult:
    """Kept splats for one camera, plus the tile grid over them."""

    ids: np.ndarray  # (M,)
    mu: np.ndarray  # (M, 2)
    conic: np.ndarray  # (M, 3) stored (-a/2, -b/2, c)
    opacity: np.ndarray  # (M,)
    rgb: np.ndarray  # (M, 3)
    depth: np.ndarray  # (M,)
    radius: np.ndarray  # (M,) 3 sigma in pixels
    width: int
    height: int
    grid: TileGrid
    tile_counts: np.ndarray  # (M,) tiles intersected, saturated at 15
    n_culled: int
    n_degenerate: int

    def gaussian_ids(self, tx: int, ty: int) -> np.ndarray:
        return self.ids[self.grid.indices(tx, ty)]


def tile_range(lo: float, hi: float, n_tiles: int):
    """Tiles whose half-open pixel rect meets the closed interval [lo, hi]."""
    t0 = int(np.floor(lo / TILE_SIZE))
    t1 = int(np.floor(hi / TILE_SIZE))
    t0 = max(t0, 0)
    t1 = min(t1, n_tiles - 1)
    return t0, t1


def project_scene(scene: Scene, cam: Camera, sh_degree: int = 3, blur: float = BLUR) -> ProjectionResult:
    """Project every Gaussian; near-plane culled and degenerate splats are dropped
    and counted.  Off-screen splats survive with an empty tile set."""
    n = len(scene)
    tiles_x = -(-cam.width // TILE_SIZE)
    tiles_y = -(-cam.height // TILE_SIZE)

    means = scene.means.astype(np.float64)
    t_cam = means @ cam.r.T + cam.t
    tz = t_cam[:, 2]
    keep = tz > cam.near
    n_culled = int(n - keep.sum())

    t_kept = t_cam[keep]
    tx_, ty_, tz_ = t_kept[:, 0], t_kept[:, 1], t_kept[:, 2]
    mu = np.column_stack([cam.fx * tx_ / tz_ + cam.cx, cam.fy * ty_ / tz_ + cam.cy])

    cov3 = covariance_3d(scene.scales_log[keep], scene.quats[keep])
    m = len(t_kept)
    j = np.zeros((m, 2, 3))
    j[:, 0, 0] = cam.fx / tz_
    j[:, 0, 2] = -cam.fx * tx_ / tz_ ** 2
    j[:, 1, 1] = cam.fy / tz_
    j[:, 1, 2] = -cam.fy * ty_ / tz_ ** 2
    jw = j @ cam.r
    v = jw @ cov3 @ np.swapaxes(jw, -1, -2)
    vxx = v[:, 0, 0] + blur
    vyy = v[:, 1, 1] + blur
    vxy = v[:, 0, 1]

    det = vxx * vyy - vxy ** 2
    ok = det > 0.0
    n_degenerate = int(m - ok.sum())

    vxx, vyy, vxy, det = vxx[ok], vyy[ok], vxy[ok], det[ok]
    mu = mu[ok]
    depth = tz_[ok]
    conic = np.column_stack([-0.5 * vyy / det, -0.5 * vxx / det, vxy / det])

    lam_max = 0.5 * (vxx + vyy) + np.sqrt(np.maximum((0.5 * (vxx - vyy)) ** 2 + vxy ** 2, 0.0))
    radius = 3.0 * np.sqrt(lam_max)

    kept_idx = np.flatnonzero(keep)[ok]
    ids = scene.ids[kept_idx]
    opacity = sigmoid(scene.opacity_logits[kept_idx].astype(np.float64))
    cam_center = cam.center()
    dirs = means[kept_idx] - cam_center
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    rgb = eval_sh(scene.sh[kept_idx].astype(np.float64), dirs, sh_degree)

    members = [[] for _ in range(tiles_x * tiles_y)]
    tile_counts = np.zeros(len(ids), dtype=np.uint8)
    for i in range(len(ids)):
        x0, x1 = tile_range(mu[i, 0] - radius[i], mu[i, 0] + radius[i], tiles_x)
        y0, y1 = tile_range(mu[i, 1] - radius[i], mu[i, 1] + radius[i], tiles_y)
        if x1 < x0 or y1 < y0:
            continue  # fully off screen
        tile_counts[i] = min(15, (x1 - x0 + 1) * (y1 - y0 + 1))
        for tyy in range(y0, y1 + 1):
            base = tyy * tiles_x
            for txx in range(x0, x1 + 1):
                members[base + txx].append(i)
    grid = TileGrid(
        tiles_x=tiles_x, tiles_y=tiles_y, tile_size=TILE_SIZE,
        members=[np.array(mm, dtype=np.int64) for mm in members],
    )
    return ProjectionResult(
        ids=ids, mu=mu, conic=conic, opacity=opacity, rgb=rgb, depth=depth,
        radius=radius, width=cam.width, height=cam.height, grid=grid,
        tile_counts=tile_counts, n_culled=n_culled, n_degenerate=n_degenerate,
    )


def project_gaussian(g: Gaussian3D, cam: Camera, sh_degree: int = 3,
                     blur: float = BLUR, gaussian_id: int = 0) -> Optional[ProjectedGaussian]:
    """Single-Gaussian wrapper over project_scene; None when culled or degenerate."""
    scene = Scene.from_gaussians([g])
    scene.ids = np.array([gaussian_id], dtype=np.int64)
    res = project_scene(scene, cam, sh_degree=sh_degree, blur=blur)
    if len(res.ids) == 0:
        return None
    return ProjectedGaussian(
        id=int(res.ids[0]), mu=res.mu[0], conic=res.conic[0],
        opacity=float(res.opacity[0]), rgb=res.rgb[0], depth=float(res.depth[0]),
    )
