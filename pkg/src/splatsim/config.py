"""Run configuration: JSON file -> validated dict -> library objects.

One schema covers every CLI subcommand; each command only reads the sections
it needs.  Validation is strict: unknown keys anywhere in the file are
rejected so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import copy
import json
from fractions import Fraction

import jsonschema

from .memsim import CacheConfig
from .perfmodel import HwConfig
from .scene import GroundTruthPolicy, SceneSpec, make_synthetic_scene
from .training import TrainConfig

_NONNEG = {"type": "number", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_RGB = {
    "type": "array",
    "items": {"type": "number", "minimum": 0, "maximum": 1},
    "minItems": 3,
    "maxItems": 3,
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "scene": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "file": {"type": ["string", "null"]},
                "n_gaussians": _POS_INT,
                "preset": {"enum": ["random", "layers", "single"]},
                "n_layers": _POS_INT,
                "extent": {"type": "number", "exclusiveMinimum": 0},
                "n_cameras": _POS_INT,
                "width": _POS_INT,
                "height": _POS_INT,
                "fov_deg": {"type": "number", "exclusiveMinimum": 0, "maximum": 160},
                "orbit_radius": {"type": "number", "exclusiveMinimum": 0},
                "orbit_arc_deg": {"type": "number", "minimum": 0},
                "elevation_deg": {"type": "number"},
                "background": _RGB,
            },
        },
        "render": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["sorted", "weighted"]},
                "arithmetic": {"enum": ["exact", "fp16"]},
                "camera_index": {"type": "integer", "minimum": 0},
                "net_file": {"type": ["string", "null"]},
                "decay_k": _NONNEG,
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": _POS_INT,
                "mlp_lr": _NONNEG,
                "color_dc_lr": _NONNEG,
                "opacity_lr": _NONNEG,
                "gaussian_lr_factor": _NONNEG,
                "lambda_ssim": {"type": "number", "minimum": 0, "maximum": 1},
                "eval_every": {"type": "integer", "minimum": 0},
                "snapshot_every": {"type": "integer", "minimum": 0},
                "structure": {"enum": ["decay", "2l-2n", "2l-3n", "3l-2n", "3l-3n"]},
                "hidden_act": {"enum": ["relu", "leaky"]},
                "output_act": {"enum": ["sigmoid", "exp"]},
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tiles_x": _POS_INT,
                "tiles_y": _POS_INT,
                "block_rotation": {"type": "integer", "minimum": 0, "maximum": 3},
            },
        },
        "cache": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "capacity_bytes": _POS_INT,
                "ways": _POS_INT,
                "line_bytes": _POS_INT,
                "static_importance": {"type": "boolean"},
                "workload_gaussians": _POS_INT,
                "seeds": _POS_INT,
                "burst_latency_cycles": {"type": "integer", "minimum": 0},
                "pj_per_byte": _NONNEG,
            },
        },
        "hw": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "fill_latency": {"type": "integer", "minimum": 0},
                "sort_rate": _POS_INT,
                "depth_bytes": _POS_INT,
                "bytes_per_cycle": {"type": "string", "pattern": r"^[0-9]+(\.[0-9]+)?$"},
                "subtile_capacity": _POS_INT,
                "peak_macs_per_cycle": _POS_INT,
            },
        },
        "dse": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": _POS_INT,
                "structures": {
                    "type": "array",
                    "items": {"enum": ["2l-2n", "2l-3n", "3l-2n", "3l-3n"]},
                    "minItems": 1,
                },
                "hidden_acts": {
                    "type": "array",
                    "items": {"enum": ["relu", "leaky"]},
                    "minItems": 1,
                },
                "output_acts": {
                    "type": "array",
                    "items": {"enum": ["sigmoid", "exp"]},
                    "minItems": 1,
                },
            },
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "scene": {
        "file": None,
        "n_gaussians": 240,
        "preset": "layers",
        "n_layers": 5,
        "extent": 1.0,
        "n_cameras": 4,
        "width": 64,
        "height": 64,
        "fov_deg": 60.0,
        "orbit_radius": 4.0,
        "orbit_arc_deg": 50.0,
        "elevation_deg": 10.0,
        "background": [0.0, 0.0, 0.0],
    },
    "render": {
        "mode": "sorted",
        "arithmetic": "exact",
        "camera_index": 0,
        "net_file": None,
        "decay_k": 1.0,
    },
    "train": {
        "steps": 400,
        "mlp_lr": 0.005,
        "color_dc_lr": 0.0025,
        "opacity_lr": 0.05,
        "gaussian_lr_factor": 0.01,
        "lambda_ssim": 0.2,
        "eval_every": 100,
        "snapshot_every": 0,
        "structure": "decay",
        "hidden_act": "leaky",
        "output_act": "exp",
    },
    "schedule": {"tiles_x": 16, "tiles_y": 16, "block_rotation": 0},
    "cache": {
        "capacity_bytes": 88 * 1024,
        "ways": 4,
        "line_bytes": 32,
        "static_importance": False,
        "workload_gaussians": 6000,
        "seeds": 20,
        "burst_latency_cycles": 0,
        "pj_per_byte": 20.0,
    },
    "hw": {
        "fill_latency": 4,
        "sort_rate": 256,
        "depth_bytes": 2,
        "bytes_per_cycle": "38.4",
        "subtile_capacity": 1024,
        "peak_macs_per_cycle": 1536,
    },
    "dse": {
        "steps": 120,
        "structures": ["2l-2n", "2l-3n", "3l-2n", "3l-3n"],
        "hidden_acts": ["relu", "leaky"],
        "output_acts": ["sigmoid", "exp"],
    },
}


class ConfigError(ValueError):
    pass


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, val in override.items():
        if key in base and isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path}{key} must be an object")
            out[key] = _merge(base[key], val, f"{path}{key}/")
        else:
            out[key] = val
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file, then programmatic overrides; validated."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(path) as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def scene_from_config(cfg: dict):
    """Build (scene, cameras, policy) from the scene section."""
    sc = cfg["scene"]
    background = tuple(float(v) for v in sc["background"])
    if sc["file"]:
        from .scene_io import load_native

        scene, cameras = load_native(sc["file"])
        policy = GroundTruthPolicy(background=background)
        return scene, cameras, policy
    spec = SceneSpec(
        n_gaussians=sc["n_gaussians"],
        preset=sc["preset"],
        n_layers=sc["n_layers"],
        extent=sc["extent"],
        n_cameras=sc["n_cameras"],
        width=sc["width"],
        height=sc["height"],
        fov_deg=sc["fov_deg"],
        orbit_radius=sc["orbit_radius"],
        orbit_arc_deg=sc["orbit_arc_deg"],
        elevation_deg=sc["elevation_deg"],
    )
    scene, cameras, policy = make_synthetic_scene(spec, seed=cfg["seed"])
    if background != policy.background:
        policy = GroundTruthPolicy(render_mode=policy.render_mode,
                                   arithmetic=policy.arithmetic,
                                   background=background)
    return scene, cameras, policy


def cache_config_from(cfg: dict) -> CacheConfig:
    c = cfg["cache"]
    return CacheConfig(capacity_bytes=c["capacity_bytes"], ways=c["ways"],
                       line_bytes=c["line_bytes"],
                       static_importance=c["static_importance"])


def hw_config_from(cfg: dict) -> HwConfig:
    h = cfg["hw"]
    return HwConfig(fill_latency=h["fill_latency"], sort_rate=h["sort_rate"],
                    depth_bytes=h["depth_bytes"],
                    bytes_per_cycle=Fraction(h["bytes_per_cycle"]),
                    subtile_capacity=h["subtile_capacity"],
                    peak_macs_per_cycle=h["peak_macs_per_cycle"])


def train_config_from(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(steps=t["steps"], mlp_lr=t["mlp_lr"],
                       color_dc_lr=t["color_dc_lr"], opacity_lr=t["opacity_lr"],
                       gaussian_lr_factor=t["gaussian_lr_factor"],
                       lambda_ssim=t["lambda_ssim"], eval_every=t["eval_every"],
                       snapshot_every=t["snapshot_every"], seed=cfg["seed"])
