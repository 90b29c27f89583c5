"""Scene representation and deterministic synthetic scene generation.

A Gaussian carries 59 parameters: mean (3), log scale (3), rotation
quaternion (4), opacity logit (1), and 16 spherical harmonic coefficients
per color channel (48).  Scene stores them structure-of-arrays in float32,
which is also the storage precision of both supported file formats, so
save/load round-trips are bit-exact.

Cameras are pinhole: world-to-camera rotation R (rows: right, up, forward),
translation t, focal lengths and principal point in pixels.  Synthetic
cameras orbit the origin on an arc and look at the scene center.
"""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, field

import numpy as np

# Y00 of the real spherical harmonic basis; the DC color term is
# rgb = SH_C0 * dc + 0.5 (clamped at zero).
SH_C0 = 0.28209479177387814

N_SH_COEFFS = 16
PARAMS_PER_GAUSSIAN = 3 + 3 + 4 + 1 + N_SH_COEFFS * 3  # 59


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.log(p) - np.log1p(-p)
    return out if out.ndim else float(out)


@dataclass
class Gaussian3D:
    """One Gaussian in world space (parameters in their raw, pre-activation form)."""

    mean: np.ndarray  # (3,)
    scale_log: np.ndarray  # (3,) log of per-axis standard deviations
    quat: np.ndarray  # (4,) wxyz, normalized at use
    opacity_logit: float
    sh: np.ndarray  # (16, 3) DC first, then higher bands


@dataclass
class Scene:
    """Structure-of-arrays collection of Gaussians with dense unique ids."""

    means: np.ndarray  # (N, 3) float32
    scales_log: np.ndarray  # (N, 3) float32
    quats: np.ndarray  # (N, 4) float32
    opacity_logits: np.ndarray  # (N,) float32
    sh: np.ndarray  # (N, 16, 3) float32
    ids: np.ndarray = field(default=None)  # (N,) int64

    def __post_init__(self):
        n = len(self.means)
        self.means = np.ascontiguousarray(self.means, dtype=np.float32)
        self.scales_log = np.ascontiguousarray(self.scales_log, dtype=np.float32)
        self.quats = np.ascontiguousarray(self.quats, dtype=np.float32)
        self.opacity_logits = np.ascontiguousarray(self.opacity_logits, dtype=np.float32)
        self.sh = np.ascontiguousarray(self.sh, dtype=np.float32)
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.int64)
        else:
            self.ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        self.validate()

    def __len__(self) -> int:
        return len(self.means)

    def validate(self) -> None:
        n = len(self.means)
        shapes = {
            "means": (self.means, (n, 3)),
            "scales_log": (self.scales_log, (n, 3)),
            "quats": (self.quats, (n, 4)),
            "opacity_logits": (self.opacity_logits, (n,)),
            "sh": (self.sh, (n, N_SH_COEFFS, 3)),
            "ids": (self.ids, (n,)),
        }
        for name, (arr, shape) in shapes.items():
            if arr.shape != shape:
                raise ValueError(f"scene field {name} has shape {arr.shape}, expected {shape}")
        for name in ("means", "scales_log", "quats", "opacity_logits", "sh"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"scene field {name} contains non-finite values")
        if np.any(np.linalg.norm(self.quats, axis=1) == 0.0):
            raise ValueError("zero-norm quaternion")
        if len(np.unique(self.ids)) != n:
            raise ValueError("gaussian ids are not unique")

    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_logits.astype(np.float64))

    def gaussian(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            mean=self.means[i].copy(),
            scale_log=self.scales_log[i].copy(),
            quat=self.quats[i].copy(),
            opacity_logit=float(self.opacity_logits[i]),
            sh=self.sh[i].copy(),
        )

    @classmethod
    def from_gaussians(cls, gaussians) -> "Scene":
        return cls(
            means=np.array([g.mean for g in gaussians], dtype=np.float32).reshape(-1, 3),
            scales_log=np.array([g.scale_log for g in gaussians], dtype=np.float32).reshape(-1, 3),
            quats=np.array([g.quat for g in gaussians], dtype=np.float32).reshape(-1, 4),
            opacity_logits=np.array([g.opacity_logit for g in gaussians], dtype=np.float32),
            sh=np.array([g.sh for g in gaussians], dtype=np.float32).reshape(-1, N_SH_COEFFS, 3),
        )

    def copy(self) -> "Scene":
        return Scene(
            means=self.means.copy(),
            scales_log=self.scales_log.copy(),
            quats=self.quats.copy(),
            opacity_logits=self.opacity_logits.copy(),
            sh=self.sh.copy(),
            ids=self.ids.copy(),
        )


@dataclass
class Camera:
    """Pinhole camera; world-to-camera is x_cam = r @ x_world + t."""

    r: np.ndarray  # (3, 3) rotation, rows are the camera axes in world space
    t: np.ndarray  # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float

    def __post_init__(self):
        self.r = np.ascontiguousarray(self.r, dtype=np.float64)
        self.t = np.ascontiguousarray(self.t, dtype=np.float64)

    def validate(self, ortho_tol: float = 1e-9) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("camera image dimensions must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("camera focal lengths must be positive")
        err = float(np.max(np.abs(self.r @ self.r.T - np.eye(3))))
        if err > ortho_tol:
            raise ValueError(f"camera rotation not orthonormal: residual {err:.3e} > {ortho_tol:.1e}")

    def center(self) -> np.ndarray:
        return -self.r.T @ self.t


def look_at_camera(position, target, width, height, fov_deg=60.0, near=0.2, up=(0.0, 1.0, 0.0)) -> Camera:
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - position
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(up, fwd)
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        raise ValueError("camera forward direction is parallel to up")
    right /= nr
    cam_up = np.cross(fwd, right)
    r = np.stack([right, cam_up, fwd])
    t = -r @ position
    f = 0.5 * width / math.tan(math.radians(fov_deg) / 2.0)
    cam = Camera(
        r=r, t=t, fx=f, fy=f,
        cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
        width=int(width), height=int(height), near=float(near),
    )
    cam.validate()
    return cam


@dataclass(frozen=True)
class GroundTruthPolicy:
    """How training targets are produced for a synthetic scene."""

    render_mode: str = "sorted"
    arithmetic: str = "exact"
    background: tuple = (0.0, 0.0, 0.0)


@dataclass
class SceneSpec:
    """Generator parameters for make_synthetic_scene (all deterministic per seed)."""

    n_gaussians: int = 200
    preset: str = "random"  # random | layers | single
    n_layers: int = 5
    extent: float = 1.0
    opacity_range: tuple = (0.3, 0.8)
    n_cameras: int = 8
    width: int = 64
    height: int = 64
    fov_deg: float = 60.0
    orbit_radius: float = 4.0
    orbit_arc_deg: float = 50.0
    elevation_deg: float = 10.0
    near: float = 0.2


def _orbit_cameras(spec: SceneSpec, rng) -> list:
    cams = []
    n = spec.n_cameras
    for i in range(n):
        frac = 0.5 if n == 1 else i / (n - 1)
        theta = math.radians(spec.orbit_arc_deg) * (frac - 0.5)
        phi = math.radians(rng.uniform(-spec.elevation_deg, spec.elevation_deg))
        pos = spec.orbit_radius * np.array(
            [math.sin(theta) * math.cos(phi), math.sin(phi), -math.cos(theta) * math.cos(phi)]
        )
        cams.append(
            look_at_camera(pos, (0.0, 0.0, 0.0), spec.width, spec.height,
                           fov_deg=spec.fov_deg, near=spec.near)
        )
    return cams


def _dc_from_rgb(rgb: np.ndarray) -> np.ndarray:
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def _random_quats(rng, n) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def make_synthetic_scene(spec: SceneSpec, seed: int):
    """Build (Scene, cameras, ground-truth policy) for a generator spec.

    Presets:
      random  scatter of anisotropic Gaussians in a cube (a single-Gaussian
              request is placed opaque at the origin, on every optical axis)
      layers  n_layers translucent depth-separated sheets facing the cameras,
              distinct color per layer, built to punish wrong blend order
      single  alias for random with n_gaussians = 1
    """
    rng = np.random.default_rng(seed)
    n = 1 if spec.preset == "single" else spec.n_gaussians
    if n <= 0:
        raise ValueError("n_gaussians must be positive")
    ext = spec.extent
    sh = np.zeros((n, N_SH_COEFFS, 3), dtype=np.float64)

    if spec.preset in ("random", "single"):
        if n == 1:
            means = np.zeros((1, 3))
            scales = np.full((1, 3), math.log(0.15 * ext))
            quats = np.array([[1.0, 0.0, 0.0, 0.0]])
            logits = np.array([4.0])  # opacity ~0.98
            sh[0, 0] = _dc_from_rgb([0.75, 0.35, 0.3])
        else:
            means = rng.uniform(-ext, ext, (n, 3))
            scales = np.log(ext * np.exp(rng.uniform(math.log(0.03), math.log(0.12), (n, 3))))
            quats = _random_quats(rng, n)
            logits = logit(rng.uniform(*spec.opacity_range, n))
            sh[:, 0, :] = _dc_from_rgb(rng.uniform(0.1, 0.9, (n, 3)))
    elif spec.preset == "layers":
        k = spec.n_layers
        if k < 2:
            raise ValueError("layers preset needs n_layers >= 2")
        gap = 0.35 * ext
        layer_z = (np.arange(k) - (k - 1) / 2.0) * gap
        layer_of = np.arange(n) % k
        means = np.column_stack([
            rng.uniform(-ext, ext, n),
            rng.uniform(-ext, ext, n),
            layer_z[layer_of] + rng.normal(0.0, 0.01 * ext, n),
        ])
        sxy = ext * np.exp(rng.uniform(math.log(0.10), math.log(0.22), (n, 2)))
        scales = np.log(np.column_stack([sxy, np.full(n, 0.01 * ext)]))
        quats = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        logits = logit(rng.uniform(*spec.opacity_range, n))
        palette = np.array([colorsys.hsv_to_rgb(j / k, 0.75, 0.9) for j in range(k)])
        rgb = np.clip(palette[layer_of] + rng.normal(0.0, 0.04, (n, 3)), 0.05, 0.95)
        sh[:, 0, :] = _dc_from_rgb(rgb)
    else:
        raise ValueError(f"unknown scene preset {spec.preset!r}")

    scene = Scene(
        means=means, scales_log=scales, quats=quats,
        opacity_logits=logits, sh=sh,
    )
    cameras = _orbit_cameras(spec, rng)
    return scene, cameras, GroundTruthPolicy()


def layered_spec(n_gaussians=240, n_layers=5, n_cameras=8, size=64) -> SceneSpec:
    """The layered-occlusion configuration used by the blend-order experiments."""
    return SceneSpec(
        n_gaussians=n_gaussians, preset="layers", n_layers=n_layers,
        n_cameras=n_cameras, width=size, height=size,
    )


__all__ = [
    "Gaussian3D", "Scene", "Camera", "GroundTruthPolicy", "SceneSpec",
    "make_synthetic_scene", "layered_spec", "look_at_camera",
    "sigmoid", "logit", "SH_C0", "N_SH_COEFFS", "PARAMS_PER_GAUSSIAN",
]
