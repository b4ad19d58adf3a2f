"""Deterministic flat-shaded rasterizer for world states.

Boxes are drawn face by face with painter's-algorithm ordering (farthest
mean depth first), a fixed directional light, and per-object colors.  The
same state and camera always produce byte-identical PNG bytes.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from ..errors import DegenerateCamera
from .world import WorldState, _separation_half

BACKGROUND = np.array([226, 229, 233], dtype=np.uint8)
TABLE_COLOR = np.array([196, 193, 188], dtype=float)
GRIPPER_COLOR = np.array([45, 45, 52], dtype=float)
LIGHT_DIR = np.array([-0.35, 0.25, 0.90])
AMBIENT = 0.55

# corner indices (see Obb.corners ordering) for the 6 faces, with the axis
# and sign of each face's outward normal
_FACES = (
    ((4, 5, 7, 6), 0, +1), ((0, 1, 3, 2), 0, -1),
    ((2, 3, 7, 6), 1, +1), ((0, 1, 5, 4), 1, -1),
    ((1, 3, 7, 5), 2, +1), ((0, 2, 6, 4), 2, -1),
)


@dataclass(frozen=True)
class CameraSpec:
    position: tuple = (-0.52, -0.50, 0.46)
    look_at: tuple = (0.06, 0.0, 0.04)
    up: tuple = (0.0, 0.0, 1.0)
    fov_deg: float = 42.0
    width: int = 512
    height: int = 512


def _camera_basis(camera: CameraSpec):
    pos = np.asarray(camera.position, dtype=float)
    target = np.asarray(camera.look_at, dtype=float)
    forward = target - pos
    norm = np.linalg.norm(forward)
    if norm < 1e-9:
        raise DegenerateCamera("camera position equals look-at point")
    forward /= norm
    right = np.cross(forward, np.asarray(camera.up, dtype=float))
    right /= np.linalg.norm(right)
    up = np.cross(right, forward)
    return pos, forward, right, up


def _project(points: np.ndarray, pos, forward, right, up, camera: CameraSpec):
    rel = points - pos
    depth = rel @ forward
    focal = (camera.height / 2.0) / np.tan(np.deg2rad(camera.fov_deg) / 2.0)
    safe = np.maximum(depth, 1e-6)
    px = camera.width / 2.0 + focal * (rel @ right) / safe
    py = camera.height / 2.0 - focal * (rel @ up) / safe
    return np.column_stack([px, py]), depth


def _fill_convex(canvas: np.ndarray, poly: np.ndarray, color: np.ndarray) -> None:
    h, w, _ = canvas.shape
    x0 = max(int(np.floor(poly[:, 0].min())), 0)
    x1 = min(int(np.ceil(poly[:, 0].max())) + 1, w)
    y0 = max(int(np.floor(poly[:, 1].min())), 0)
    y1 = min(int(np.ceil(poly[:, 1].max())) + 1, h)
    if x0 >= x1 or y0 >= y1:
        return
    xs = np.arange(x0, x1) + 0.5
    ys = np.arange(y0, y1) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    inside = np.ones(gx.shape, dtype=bool)
    n = len(poly)
    area = 0.0
    for i in range(n):
        j = (i + 1) % n
        area += poly[i, 0] * poly[j, 1] - poly[j, 0] * poly[i, 1]
    orient = 1.0 if area >= 0 else -1.0
    for i in range(n):
        j = (i + 1) % n
        ex, ey = poly[j] - poly[i]
        cross = (gx - poly[i, 0]) * ey - (gy - poly[i, 1]) * ex
        inside &= orient * cross >= 0.0
    region = canvas[y0:y1, x0:x1]
    region[inside] = color.astype(np.uint8)


def _shade(color: np.ndarray, normal: np.ndarray) -> np.ndarray:
    light = LIGHT_DIR / np.linalg.norm(LIGHT_DIR)
    lum = AMBIENT + (1.0 - AMBIENT) * max(0.0, float(normal @ light))
    return np.clip(color * lum, 0, 255)


def render(world: WorldState, camera: CameraSpec | None = None) -> bytes:
    """Rasterize the world to PNG bytes. Never mutates the state."""
    camera = camera or CameraSpec()
    pos, forward, right, up = _camera_basis(camera)
    canvas = np.empty((camera.height, camera.width, 3), dtype=np.uint8)
    canvas[:, :] = BACKGROUND

    faces = []  # (mean depth, polygon, shaded color)

    # tabletop quad spanning the workspace
    lo, hi = world.workspace_lo, world.workspace_hi
    table = np.array([
        [lo[0], lo[1], 0.0], [hi[0], lo[1], 0.0],
        [hi[0], hi[1], 0.0], [lo[0], hi[1], 0.0],
    ])
    poly, depth = _project(table, pos, forward, right, up, camera)
    faces.append((float(depth.mean()), poly, _shade(TABLE_COLOR, np.array([0.0, 0.0, 1.0]))))

    boxes = [(obj.obb, np.array(obj.color, dtype=float)) for obj in world.objects]
    for finger in world.gripper.finger_obbs(_separation_half(world)):
        boxes.append((finger, GRIPPER_COLOR.copy()))

    for obb, color in boxes:
        corners = obb.corners()
        proj, depth = _project(corners, pos, forward, right, up, camera)
        if np.any(depth <= 1e-3):
            continue  # behind or at the camera; desk scenes never hit this
        axis_mat = obb.axis_matrix()
        for idx, axis, sign in _FACES:
            normal = sign * axis_mat[:, axis]
            if normal @ (pos - corners[list(idx)].mean(axis=0)) <= 0:
                continue  # back face
            faces.append((
                float(depth[list(idx)].mean()),
                proj[list(idx)],
                _shade(color, normal),
            ))

    for _, poly, color in sorted(faces, key=lambda f: -f[0]):
        _fill_convex(canvas, poly, color)

    buf = io.BytesIO()
    Image.fromarray(canvas, "RGB").save(buf, format="PNG", optimize=False)
    return buf.getvalue()
