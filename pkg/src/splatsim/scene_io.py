"""Scene file formats.

load_gs_ply ingests the de facto Gaussian splatting checkpoint layout: a
binary little-endian PLY whose vertex element carries float32 properties
x y z, f_dc_0..2, f_rest_0..44, opacity, scale_0..2, rot_0..3 (extra
properties such as normals are tolerated and skipped).  f_rest is stored
channel-major: coefficients 0..14 belong to the red channel, and so on.

save_native/load_native use this package's own container:

    bytes 0..7   magic "SPLATSIM"
    u32          version (currently 1)
    u64          gaussian count
    count x 59   float32 per gaussian: mean(3) scale_log(3) quat(4)
                 opacity_logit(1) sh(48, row-major over the (16,3) block)
    u32          camera count
    per camera   R row-major (9 f32), t (3 f32), fx fy cx cy (4 f32),
                 width height (2 u32), near (f32)

All multi-byte values are little-endian.  Gaussian fields live in float32
end to end, so a save/load round-trip is bit-identical.  Camera values are
quantized to float32 on save; loaded cameras are validated against a
tolerance wide enough for that quantization.
"""

from __future__ import annotations

import struct

import numpy as np

from .scene import Camera, N_SH_COEFFS, Scene

MAGIC = b"SPLATSIM"
VERSION = 1
MAX_GAUSSIANS = 1 << 28  # id space of the feature cache

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

REQUIRED_PROPS = (
    ["x", "y", "z"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(45)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)


def _parse_ply_header(fh):
    line = fh.readline()
    if line.strip() != b"ply":
        raise ValueError("not a PLY file (missing 'ply' magic)")
    fmt = None
    elements = []  # (name, count, [(prop_name, dtype_code)])
    while True:
        line = fh.readline()
        if not line:
            raise ValueError("PLY header ended before end_header")
        tokens = line.decode("ascii", "replace").strip().split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise ValueError("PLY property before any element")
            if tokens[1] == "list":
                raise ValueError("list properties are not supported")
            if tokens[1] not in _PLY_TYPES:
                raise ValueError(f"unsupported PLY property type {tokens[1]!r}")
            elements[-1][2].append((tokens[-1], _PLY_TYPES[tokens[1]]))
        elif tokens[0] == "end_header":
            break
    if fmt != "binary_little_endian":
        raise ValueError(f"unsupported PLY format {fmt!r}, need binary_little_endian")
    return elements


def load_gs_ply(path) -> Scene:
    with open(path, "rb") as fh:
        elements = _parse_ply_header(fh)
        if not elements or elements[0][0] != "vertex":
            raise ValueError("PLY vertex element must come first")
        _, count, props = elements[0]
        if count > MAX_GAUSSIANS:
            raise ValueError(f"{count} gaussians exceed the {MAX_GAUSSIANS} id space")
        names = [p[0] for p in props]
        for req in REQUIRED_PROPS:
            if req not in names:
                raise ValueError(f"PLY vertex element is missing property {req!r}")
            if props[names.index(req)][1] != "f4":
                raise ValueError(f"PLY property {req!r} must be float32")
        dtype = np.dtype([(n, "<" + c) for n, c in props])
        raw = fh.read(count * dtype.itemsize)
        if len(raw) != count * dtype.itemsize:
            raise ValueError("PLY payload truncated")
        rec = np.frombuffer(raw, dtype=dtype, count=count)

    def cols(names_):
        return np.column_stack([rec[n] for n in names_]).astype(np.float32)

    sh = np.zeros((count, N_SH_COEFFS, 3), dtype=np.float32)
    for c in range(3):
        sh[:, 0, c] = rec[f"f_dc_{c}"]
        for k in range(15):
            sh[:, 1 + k, c] = rec[f"f_rest_{c * 15 + k}"]
    return Scene(
        means=cols(["x", "y", "z"]),
        scales_log=cols(["scale_0", "scale_1", "scale_2"]),
        quats=cols(["rot_0", "rot_1", "rot_2", "rot_3"]),
        opacity_logits=rec["opacity"].astype(np.float32),
        sh=sh,
    )


def write_gs_ply(scene: Scene, path) -> None:
    """Inverse of load_gs_ply for the required properties (test/demo plumbing)."""
    props = REQUIRED_PROPS
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(scene)}"]
    header += [f"property float {p}" for p in props]
    header.append("end_header")
    dtype = np.dtype([(p, "<f4") for p in props])
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
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


def _gaussian_block(scene: Scene) -> np.ndarray:
    n = len(scene)
    block = np.empty((n, 59), dtype="<f4")
    block[:, 0:3] = scene.means
    block[:, 3:6] = scene.scales_log
    block[:, 6:10] = scene.quats
    block[:, 10] = scene.opacity_logits
    block[:, 11:59] = scene.sh.reshape(n, 48)
    return block


def save_native(scene: Scene, cameras, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(scene)))
        fh.write(_gaussian_block(scene).tobytes())
        fh.write(struct.pack("<I", len(cameras)))
        for cam in cameras:
            fh.write(np.asarray(cam.r, dtype="<f4").tobytes())
            fh.write(np.asarray(cam.t, dtype="<f4").tobytes())
            fh.write(struct.pack("<4f", cam.fx, cam.fy, cam.cx, cam.cy))
            fh.write(struct.pack("<2If", cam.width, cam.height, cam.near))


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError(f"native container truncated while reading {what}")
    return data


def load_native(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, 8, "magic") != MAGIC:
            raise ValueError("bad magic: not a SPLATSIM container")
        version, count = struct.unpack("<IQ", _read_exact(fh, 12, "header"))
        if version != VERSION:
            raise ValueError(f"unsupported container version {version}")
        if count > MAX_GAUSSIANS:
            raise ValueError(f"{count} gaussians exceed the {MAX_GAUSSIANS} id space")
        block = np.frombuffer(
            _read_exact(fh, count * 59 * 4, "gaussians"), dtype="<f4"
        ).reshape(count, 59)
        scene = Scene(
            means=block[:, 0:3],
            scales_log=block[:, 3:6],
            quats=block[:, 6:10],
            opacity_logits=block[:, 10],
            sh=block[:, 11:59].reshape(count, 16, 3),
        )
        (n_cams,) = struct.unpack("<I", _read_exact(fh, 4, "camera count"))
        cameras = []
        for i in range(n_cams):
            r = np.frombuffer(_read_exact(fh, 36, f"camera {i} rotation"), dtype="<f4")
            t = np.frombuffer(_read_exact(fh, 12, f"camera {i} translation"), dtype="<f4")
            fx, fy, cx, cy = struct.unpack("<4f", _read_exact(fh, 16, f"camera {i} intrinsics"))
            w, h, near = struct.unpack("<2If", _read_exact(fh, 12, f"camera {i} geometry"))
            cam = Camera(
                r=r.reshape(3, 3).astype(np.float64),
                t=t.astype(np.float64),
                fx=fx, fy=fy, cx=cx, cy=cy, width=w, height=h, near=near,
            )
            # float32 quantization of an orthonormal matrix leaves ~1e-7 residue
            cam.validate(ortho_tol=1e-5)
            cameras.append(cam)
    return scene, cameras
