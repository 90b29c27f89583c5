import math

import numpy as np
import pytest

from splatsim import scene as sc
from splatsim import scene_io


def test_sigmoid_logit_inverse():
    xs = np.linspace(-8, 8, 33)
    assert np.allclose(sc.logit(sc.sigmoid(xs)), xs, atol=1e-9)
    assert sc.sigmoid(0.0) == 0.5


def test_scene_validation_rejects_bad_shapes():
    with pytest.raises(ValueError):
        sc.Scene(
            means=np.zeros((2, 3)), scales_log=np.zeros((2, 3)),
            quats=np.zeros((3, 4)) + 1.0, opacity_logits=np.zeros(2),
            sh=np.zeros((2, 16, 3)),
        )


def test_scene_validation_rejects_zero_quat():
    with pytest.raises(ValueError):
        sc.Scene(
            means=np.zeros((1, 3)), scales_log=np.zeros((1, 3)),
            quats=np.zeros((1, 4)), opacity_logits=np.zeros(1),
            sh=np.zeros((1, 16, 3)),
        )


def test_scene_validation_rejects_nonfinite():
    means = np.zeros((1, 3))
    means[0, 0] = np.nan
    with pytest.raises(ValueError):
        sc.Scene(
            means=means, scales_log=np.zeros((1, 3)),
            quats=np.ones((1, 4)), opacity_logits=np.zeros(1),
            sh=np.zeros((1, 16, 3)),
        )


def test_synthetic_scene_deterministic_per_seed():
    spec = sc.SceneSpec(n_gaussians=40)
    s1, cams1, _ = sc.make_synthetic_scene(spec, seed=9)
    s2, cams2, _ = sc.make_synthetic_scene(spec, seed=9)
    s3, _, _ = sc.make_synthetic_scene(spec, seed=10)
    assert np.array_equal(s1.means, s2.means)
    assert np.array_equal(s1.sh, s2.sh)
    assert np.array_equal(cams1[0].r, cams2[0].r)
    assert not np.array_equal(s1.means, s3.means)


def test_synthetic_single_gaussian_on_axis():
    spec = sc.SceneSpec(n_gaussians=1, n_cameras=1)
    scene, cams, policy = sc.make_synthetic_scene(spec, seed=1)
    assert len(scene) == 1
    assert np.array_equal(scene.means[0], np.zeros(3, dtype=np.float32))
    assert scene.opacity()[0] > 0.95
    # the camera looks straight at the origin, so the gaussian sits on axis
    z = cams[0].r[2] @ (np.zeros(3) - cams[0].center())
    x = cams[0].r[0] @ (np.zeros(3) - cams[0].center())
    assert z > 0 and abs(x) < 1e-12
    assert policy.render_mode == "sorted"


def test_layers_preset_structure():
    spec = sc.layered_spec(n_gaussians=60, n_layers=5)
    scene, cams, _ = sc.make_synthetic_scene(spec, seed=0)
    assert len(scene) == 60
    assert len(cams) == 8
    zs = np.sort(np.unique(np.round(scene.means[:, 2], 1)))
    assert len(zs) >= 5  # depth-separated sheets
    for cam in cams:
        cam.validate()


def test_camera_orthonormality_tolerance():
    cam = sc.look_at_camera((0, 0, -4), (0, 0, 0), 64, 64)
    cam.validate(ortho_tol=1e-9)
    cam.r = cam.r * 1.001
    with pytest.raises(ValueError):
        cam.validate(ortho_tol=1e-9)


def test_ply_roundtrip(tmp_path):
    spec = sc.SceneSpec(n_gaussians=17)
    scene, _, _ = sc.make_synthetic_scene(spec, seed=3)
    p = tmp_path / "scene.ply"
    scene_io.write_gs_ply(scene, p)
    back = scene_io.load_gs_ply(p)
    assert np.array_equal(back.means, scene.means)
    assert np.array_equal(back.scales_log, scene.scales_log)
    assert np.array_equal(back.quats, scene.quats)
    assert np.array_equal(back.opacity_logits, scene.opacity_logits)
    assert np.array_equal(back.sh, scene.sh)


def test_ply_all_zero_opacity_activates_to_half(tmp_path):
    g = sc.Gaussian3D(
        mean=np.zeros(3), scale_log=np.zeros(3),
        quat=np.array([1.0, 0, 0, 0]), opacity_logit=0.0,
        sh=np.zeros((16, 3)),
    )
    scene = sc.Scene.from_gaussians([g])
    p = tmp_path / "one.ply"
    scene_io.write_gs_ply(scene, p)
    back = scene_io.load_gs_ply(p)
    assert back.opacity()[0] == 0.5


def test_ply_missing_property_named_in_error(tmp_path):
    p = tmp_path / "bad.ply"
    header = (
        "ply\nformat binary_little_endian 1.0\nelement vertex 0\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    p.write_bytes(header.encode())
    with pytest.raises(ValueError, match="f_dc_0"):
        scene_io.load_gs_ply(p)


def test_ply_rejects_ascii(tmp_path):
    p = tmp_path / "ascii.ply"
    p.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(ValueError, match="binary_little_endian"):
        scene_io.load_gs_ply(p)


def test_ply_tolerates_extra_properties(tmp_path):
    spec = sc.SceneSpec(n_gaussians=3)
    scene, _, _ = sc.make_synthetic_scene(spec, seed=5)
    p = tmp_path / "extra.ply"
    props = ["x", "y", "z", "nx", "ny", "nz"] + scene_io.REQUIRED_PROPS[3:]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(scene)}"]
    header += [f"property float {q}" for q in props]
    header.append("end_header")
    dtype = np.dtype([(q, "<f4") for q in props])
    rec = np.zeros(len(scene), dtype=dtype)
    for i, axis in enumerate("xyz"):
        rec[axis] = scene.means[:, i]
    for c in range(3):
        rec[f"f_dc_{c}"] = scene.sh[:, 0, c]
        for k in range(15):
            rec[f"f_rest_{c * 15 + k}"] = scene.sh[:, 1 + k, c]
    rec["opacity"] = scene.opacity_logits
    for i in range(3):
        rec[f"scale_{i}"] = scene.scales_log[:, i]
    for i in range(4):
        rec[f"rot_{i}"] = scene.quats[:, i]
    with open(p, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode())
        fh.write(rec.tobytes())
    back = scene_io.load_gs_ply(p)
    assert np.array_equal(back.means, scene.means)
    assert np.array_equal(back.sh, scene.sh)


def test_native_roundtrip_bit_identical(tmp_path):
    spec = sc.SceneSpec(n_gaussians=100, n_cameras=3)
    scene, cams, _ = sc.make_synthetic_scene(spec, seed=12)
    p = tmp_path / "scene.splat"
    scene_io.save_native(scene, cams, p)
    back, back_cams = scene_io.load_native(p)
    for f in ("means", "scales_log", "quats", "opacity_logits", "sh"):
        assert np.array_equal(getattr(back, f), getattr(scene, f)), f
    assert len(back_cams) == 3
    for a, b in zip(cams, back_cams):
        assert np.allclose(a.r, b.r, atol=1e-6)
        assert (a.width, a.height) == (b.width, b.height)
        assert math.isclose(a.fx, b.fx, rel_tol=1e-6)
    # a second save of the loaded data is byte-identical (stable fixed point)
    p2 = tmp_path / "scene2.splat"
    scene_io.save_native(back, back_cams, p2)
    assert p.read_bytes() == p2.read_bytes()


def test_native_rejects_bad_magic_and_truncation(tmp_path):
    p = tmp_path / "x.splat"
    p.write_bytes(b"NOTSPLAT" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        scene_io.load_native(p)
    spec = sc.SceneSpec(n_gaussians=5, n_cameras=1)
    scene, cams, _ = sc.make_synthetic_scene(spec, seed=2)
    good = tmp_path / "good.splat"
    scene_io.save_native(scene, cams, good)
    data = good.read_bytes()
    bad = tmp_path / "trunc.splat"
    bad.write_bytes(data[: len(data) // 2])
    with pytest.raises(ValueError, match="truncated"):
        scene_io.load_native(bad)


def test_native_rejects_wrong_version(tmp_path):
    spec = sc.SceneSpec(n_gaussians=2, n_cameras=0)
    scene, _, _ = sc.make_synthetic_scene(spec, seed=2)
    p = tmp_path / "v.splat"
    scene_io.save_native(scene, [], p)
    data = bytearray(p.read_bytes())
    data[8] = 9  # version field
    p.write_bytes(bytes(data))
    with pytest.raises(ValueError, match="version"):
        scene_io.load_native(p)
