"""Binary little-endian PLY I/O in the standard 3D-GS checkpoint layout.

Stored vertex properties: x, y, z, f_dc_0..2, f_rest_0..44, opacity,
scale_0..2, rot_0..3, all float32. On load the usual activations apply:
logistic sigmoid on opacity, exp on scales, quaternion normalization.
Per-Gaussian features, when present, live in an FTC1 sidecar next to the
PLY (``<name>.features.ftc1``).
"""

from __future__ import annotations

import os

import numpy as np

from .scene import SH_COEFFS, GaussianScene, ValidationError
from .tensor_io import read_tensor, write_tensor

N_REST = (SH_COEFFS - 1) * 3  # 45

PROPERTIES = (
    ["x", "y", "z"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(N_REST)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)


class PlyParseError(ValueError):
    """Raised when a PLY header or payload cannot be parsed."""


def sidecar_path(path) -> str:
    return str(path) + ".features.ftc1"


def _parse_header(f):
    line = f.readline()
    if line.strip() != b"ply":
        raise PlyParseError("not a PLY file (missing 'ply' signature)")
    fmt = None
    count = None
    props = []
    in_vertex = False
    while True:
        line = f.readline()
        if not line:
            raise PlyParseError("unterminated header (missing end_header)")
        tokens = line.decode("ascii", "replace").split()
        if not tokens:
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                count = int(tokens[2])
        elif tokens[0] == "property" and in_vertex:
            if tokens[1] != "float":
                raise PlyParseError(f"property {tokens[-1]}: expected float, got {tokens[1]}")
            props.append(tokens[2])
        elif tokens[0] == "end_header":
            break
    if fmt != "binary_little_endian":
        raise PlyParseError(f"unsupported format {fmt!r}, expected binary_little_endian")
    if count is None:
        raise PlyParseError("header has no vertex element")
    for name in PROPERTIES:
        if name not in props:
            raise PlyParseError(f"header missing property {name!r}")
    return count, props


def load_ply(path) -> GaussianScene:
    """Load a Gaussian scene, applying activations and normalization."""
    with open(path, "rb") as f:
        count, props = _parse_header(f)
        dtype = np.dtype([(p, "<f4") for p in props])
        raw = np.fromfile(f, dtype=dtype, count=count)
    if raw.shape[0] != count:
        raise PlyParseError(f"{path}: payload has {raw.shape[0]} of {count} vertices")

    def cols(names):
        if count == 0:
            return np.zeros((0, len(names)))
        return np.stack([raw[n].astype(np.float64) for n in names], axis=1)

    positions = cols(["x", "y", "z"])
    dc = cols([f"f_dc_{i}" for i in range(3)])
    rest = cols([f"f_rest_{i}" for i in range(N_REST)])
    opacity_logit = cols(["opacity"])[:, 0] if count else np.zeros(0)
    log_scales = cols([f"scale_{i}" for i in range(3)])
    quats = cols([f"rot_{i}" for i in range(4)])

    if count:
        for name, arr in (("position", positions), ("f_dc", dc), ("f_rest", rest),
                          ("opacity", opacity_logit), ("scale", log_scales),
                          ("rot", quats)):
            bad = ~np.isfinite(arr).reshape(count, -1).all(axis=1)
            if bad.any():
                raise ValidationError(
                    f"{path}: non-finite {name} at vertex {int(np.flatnonzero(bad)[0])}")

    with np.errstate(over="ignore"):
        opacities = 1.0 / (1.0 + np.exp(-opacity_logit))
    scales = np.exp(log_scales)
    norms = np.linalg.norm(quats, axis=1, keepdims=True)
    if count and (norms == 0).any():
        raise ValidationError(
            f"{path}: zero quaternion at vertex {int(np.flatnonzero(norms[:, 0] == 0)[0])}")
    rotations = quats / norms if count else quats

    # f_rest is stored channel-major (all coeff-1.. of R, then G, then B),
    # matching the reference checkpoint layout.
    sh = np.zeros((count, SH_COEFFS, 3))
    sh[:, 0, :] = dc
    if count:
        sh[:, 1:, :] = rest.reshape(count, 3, SH_COEFFS - 1).transpose(0, 2, 1)

    features = None
    side = sidecar_path(path)
    if os.path.exists(side):
        features = read_tensor(side).astype(np.float64)

    return GaussianScene(positions, rotations, scales, opacities, sh, features)


def save_ply(scene: GaussianScene, path):
    """Write a scene back to disk; inverse activations keep round-trips at f32."""
    n = len(scene)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in PROPERTIES]
    header.append("end_header")

    rec = np.zeros(n, dtype=np.dtype([(p, "<f4") for p in PROPERTIES]))
    if n:
        rec["x"], rec["y"], rec["z"] = scene.positions.T.astype(np.float32)
        for i in range(3):
            rec[f"f_dc_{i}"] = scene.sh[:, 0, i].astype(np.float32)
        rest = scene.sh[:, 1:, :].transpose(0, 2, 1).reshape(n, N_REST)
        for i in range(N_REST):
            rec[f"f_rest_{i}"] = rest[:, i].astype(np.float32)
        with np.errstate(divide="ignore"):
            op = np.clip(scene.opacities, 0.0, 1.0)
            rec["opacity"] = np.log(op / (1.0 - op)).astype(np.float32)
        for i in range(3):
            rec[f"scale_{i}"] = np.log(scene.scales[:, i]).astype(np.float32)
        for i in range(4):
            rec[f"rot_{i}"] = scene.rotations[:, i].astype(np.float32)

    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rec.tobytes())

    side = sidecar_path(path)
    if scene.features is not None:
        write_tensor(side, scene.features.astype(np.float32))
    elif os.path.exists(side):
        os.remove(side)
