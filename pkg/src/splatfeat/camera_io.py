"""Camera list JSON: a minimal schema kept deliberately dependency-free.

File layout: a JSON array of objects
``{id, fx, fy, cx, cy, width, height, world_to_cam}`` where ``world_to_cam``
is 16 row-major floats.
"""

from __future__ import annotations

import json

import numpy as np

from .scene import CameraView, ValidationError

_REQUIRED = ("id", "fx", "fy", "cx", "cy", "width", "height", "world_to_cam")


def load_cameras(path) -> list[CameraView]:
    with open(path) as f:
        entries = json.load(f)
    if not isinstance(entries, list):
        raise ValidationError(f"{path}: expected a JSON array of cameras")
    views = []
    for i, e in enumerate(entries):
        for key in _REQUIRED:
            if key not in e:
                raise ValidationError(f"{path}: camera {i} missing field {key!r}")
        w2c = np.asarray(e["world_to_cam"], dtype=np.float64)
        if w2c.shape != (16,):
            raise ValidationError(f"{path}: camera {i} world_to_cam needs 16 floats")
        views.append(CameraView(
            view_id=str(e["id"]), fx=float(e["fx"]), fy=float(e["fy"]),
            cx=float(e["cx"]), cy=float(e["cy"]),
            width=int(e["width"]), height=int(e["height"]),
            world_to_cam=w2c.reshape(4, 4)))
    return views


def save_cameras(views: list[CameraView], path):
    entries = []
    for v in views:
        entries.append({
            "id": v.view_id, "fx": v.fx, "fy": v.fy, "cx": v.cx, "cy": v.cy,
            "width": v.width, "height": v.height,
            "world_to_cam": [float(x) for x in v.world_to_cam.reshape(16)],
        })
    with open(path, "w") as f:
        json.dump(entries, f, indent=1)
        f.write("\n")
