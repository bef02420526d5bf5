"""Deterministic software renderer for scenes.

Perspective projection from the camera ring, flat-shaded 2D silhouettes per
shape class drawn back-to-front (painter's algorithm) over a ray-cast room
background: light grey floor and walls, light blue sky band above the walls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .colors import hsv_to_rgb
from .scenes import Scene, SceneObject, SHAPE_DIMS

CAMERA_ELEVATION = 0.35
CAMERA_TARGET = (0.0, 0.0, 0.12)   # slight downward pitch
TAN_HALF_FOV = 0.8391              # 40 degree half angle; keeps bearing < 45 deg
WALL_HEIGHT = 0.7
NEAR_PLANE = 0.05

FLOOR_COLOR = np.array([0.80, 0.80, 0.80], dtype=np.float32)
WALL_COLOR = np.array([0.70, 0.70, 0.70], dtype=np.float32)
SKY_COLOR = np.array([0.70, 0.85, 0.95], dtype=np.float32)


def camera_basis(theta: float, radius: float):
    """Eye position and orthonormal (right, up, forward) camera axes."""
    eye = np.array([radius * math.cos(theta), radius * math.sin(theta),
                    CAMERA_ELEVATION])
    target = np.array(CAMERA_TARGET)
    fwd = target - eye
    fwd /= np.linalg.norm(fwd)
    world_up = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, world_up)
    right /= np.linalg.norm(right)
    up = np.cross(right, fwd)
    return eye, right, up, fwd


def _background(eye, right, up, fwd, res: int) -> np.ndarray:
    """Ray-cast floor, room walls (inner faces only) and sky."""
    half = np.arange(res, dtype=np.float64)
    u = (half + 0.5) / res * 2.0 - 1.0          # column -> NDC x
    v = 1.0 - (half + 0.5) / res * 2.0          # row -> NDC y
    uu, vv = np.meshgrid(u, v)
    dirs = (fwd[None, None, :]
            + uu[:, :, None] * TAN_HALF_FOV * right[None, None, :]
            + vv[:, :, None] * TAN_HALF_FOV * up[None, None, :])

    t_best = np.full((res, res), np.inf)
    img = np.empty((res, res, 3), dtype=np.float32)
    img[:] = SKY_COLOR

    dz = dirs[:, :, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = np.where(dz < 0.0, -eye[2] / dz, np.inf)
    hit = t_floor < t_best
    img[hit] = FLOOR_COLOR
    t_best = np.where(hit, t_floor, t_best)

    # walls at x = +-1 (spanning y in [-1,1]) and y = +-1; a wall is visible
    # only from inside the room (its inner face), so the near walls never
    # block the camera on the ring.
    for axis, sign in ((0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)):
        d_ax = dirs[:, :, axis]
        inner_dir = sign  # moving toward the plane from inside
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (sign * 1.0 - eye[axis]) / d_ax
        approaching = (d_ax * inner_dir > 0.0) & (eye[axis] * sign < 1.0)
        t = np.where(approaching & (t > 0.0), t, np.inf)
        z_hit = eye[2] + t * dz
        other = eye[1 - axis] + t * dirs[:, :, 1 - axis]
        valid = (t < t_best) & (z_hit >= 0.0) & (z_hit <= WALL_HEIGHT) \
            & (np.abs(other) <= 1.0)
        img[valid] = WALL_COLOR
        t_best = np.where(valid, t, t_best)
    return img


def _shape_mask(shape: str, du: np.ndarray, dv: np.ndarray,
                w_px: float, h_px: float) -> np.ndarray:
    """Silhouette predicate in pixel offsets from the base anchor.

    du is the signed column offset from the object's centerline, dv the
    height above the base (in pixels, up positive).
    """
    if shape == "cube" or shape == "box":
        return (np.abs(du) <= w_px) & (dv >= 0) & (dv <= h_px)
    if shape == "cone":
        frac = np.clip(dv / h_px, 0.0, 1.0)
        return (dv >= 0) & (dv <= h_px) & (np.abs(du) <= w_px * (1.0 - frac))
    if shape == "triangle":
        frac = np.clip(dv / h_px, 0.0, 1.0)
        outer = (dv >= 0) & (dv <= h_px) & (np.abs(du) <= w_px * (1.0 - frac))
        s = 0.52
        dvi = (dv - 0.22 * h_px) / s
        fraci = np.clip(dvi / h_px, 0.0, 1.0)
        inner = (dvi >= 0) & (dvi <= h_px) & (np.abs(du / s) <= w_px * (1.0 - fraci))
        return outer & ~inner
    if shape == "cylinder":
        cap_c = h_px - w_px
        body = (np.abs(du) <= w_px) & (dv >= 0) & (dv <= cap_c)
        cap = (du ** 2 + (dv - cap_c) ** 2 <= w_px ** 2) & (dv > cap_c)
        return body | cap
    if shape == "capsule":
        lo, hi = w_px, h_px - w_px
        body = (np.abs(du) <= w_px) & (dv >= lo) & (dv <= hi)
        bot = du ** 2 + (dv - lo) ** 2 <= w_px ** 2
        top = du ** 2 + (dv - hi) ** 2 <= w_px ** 2
        return body | bot | top
    if shape == "icosahedron":
        r = h_px / 2.0
        dvc = dv - r
        box = (np.abs(du) <= w_px) & (np.abs(dvc) <= r)
        diamond = np.abs(du) / w_px + np.abs(dvc) / r <= 1.5
        return box & diamond
    if shape == "sphere":
        r = h_px / 2.0
        return du ** 2 + (dv - r) ** 2 <= r ** 2
    raise ValueError(f"unknown shape {shape!r}")


@dataclass
class ObjectRender:
    """Per-object rasterization byproducts used by tests and analyses."""
    depth: float
    profile_mask: np.ndarray  # silhouette before occlusion
    visible_mask: np.ndarray  # pixels actually owned after painting


def _project_object(obj: SceneObject, eye, right, up, fwd, res: int):
    base = np.array([obj.position[0], obj.position[1], 0.0])
    mid = base + np.array([0.0, 0.0, obj.height / 2.0])
    depth_mid = float(np.dot(mid - eye, fwd))
    depth_base = float(np.dot(base - eye, fwd))
    if depth_mid <= NEAR_PLANE or depth_base <= NEAR_PLANE:
        return None
    u_ndc = float(np.dot(base - eye, right)) / (depth_base * TAN_HALF_FOV)
    v_ndc = float(np.dot(base - eye, up)) / (depth_base * TAN_HALF_FOV)
    cx = (u_ndc + 1.0) / 2.0 * res - 0.5
    cy = (1.0 - v_ndc) / 2.0 * res - 0.5   # pixel row of the base
    scale = res / (2.0 * TAN_HALF_FOV * depth_mid)
    w_half, height = SHAPE_DIMS[obj.shape]
    w_px = w_half * obj.size * scale
    h_px = height * obj.size * scale
    return cx, cy, w_px, h_px, depth_mid


def render_view(scene: Scene, theta: float, res: int = 128,
                return_objects: bool = False):
    """Render the scene from camera angle theta into an RGB float image.

    Objects are depth-sorted and painted back-to-front, so nearer objects
    occlude farther ones; anything outside the frustum is simply clipped.
    """
    if res < 8:
        raise ValueError("res too small")
    eye, right, up, fwd = camera_basis(theta, scene.camera_radius)
    img = _background(eye, right, up, fwd, res)

    cols, rows = np.meshgrid(np.arange(res, dtype=np.float64),
                             np.arange(res, dtype=np.float64))
    renders: list[ObjectRender | None] = [None] * len(scene.objects)
    owner = np.full((res, res), -1, dtype=np.int32)

    projected = []
    for idx, obj in enumerate(scene.objects):
        proj = _project_object(obj, eye, right, up, fwd, res)
        if proj is None:
            renders[idx] = ObjectRender(math.inf,
                                        np.zeros((res, res), bool),
                                        np.zeros((res, res), bool))
            continue
        projected.append((idx, obj, proj))

    # painter's algorithm: farthest first
    for idx, obj, (cx, cy, w_px, h_px, depth) in sorted(
            projected, key=lambda t: -t[2][4]):
        du = cols - cx
        dv = cy - rows  # up positive
        mask = _shape_mask(obj.shape, du, dv, w_px, h_px)
        rgb = np.array(hsv_to_rgb(*obj.hsv), dtype=np.float32)
        img[mask] = rgb
        owner[mask] = idx
        renders[idx] = ObjectRender(depth, mask, mask)  # visible fixed below

    for idx, obj, _ in projected:
        r = renders[idx]
        renders[idx] = ObjectRender(r.depth, r.profile_mask, owner == idx)

    img = np.clip(img, 0.0, 1.0)
    if return_objects:
        return img, renders
    return img


def downsample(img: np.ndarray, factor: int = 4) -> np.ndarray:
    """Mean-pool factor x factor blocks per channel (128x128 -> 32x32)."""
    h, w, c = img.shape
    if h % factor or w % factor:
        raise ValueError(f"image dims {img.shape} not divisible by {factor}")
    pooled = img.reshape(h // factor, factor, w // factor, factor, c)
    return pooled.mean(axis=(1, 3), dtype=np.float64).astype(np.float32)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def save_png(img: np.ndarray, path: str | Path) -> None:
    """8-bit PNG export for inspection; the pipeline itself stays float."""
    from PIL import Image

    Image.fromarray(to_uint8(img)).save(Path(path), format="PNG")


def image_grid(images: list[list[np.ndarray]], pad: int = 2) -> np.ndarray:
    """Compose a row-major grid of equally sized images with white gutters."""
    rows = len(images)
    cols = max(len(r) for r in images)
    h, w, c = images[0][0].shape
    grid = np.ones((rows * h + (rows + 1) * pad,
                    cols * w + (cols + 1) * pad, c), dtype=np.float32)
    for i, row in enumerate(images):
        for j, im in enumerate(row):
            y = pad + i * (h + pad)
            x = pad + j * (w + pad)
            grid[y:y + h, x:x + w] = im
    return grid
