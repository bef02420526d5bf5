"""Scene and camera sampling plus the train/validation/test split rules.

A scene is a square room with floor coordinates x, y in [-1, 1] containing
two or three colored objects, observed from 10 camera positions on a circle
around the room center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import SceneGenerationError

SHAPES = (
    "cube",
    "box",
    "cone",
    "triangle",
    "cylinder",
    "capsule",
    "icosahedron",
    "sphere",
)

# (half-width, height) of each shape's footprint/silhouette in units of `size`.
SHAPE_DIMS = {
    "cube": (0.50, 1.00),
    "box": (0.35, 1.60),
    "cone": (0.55, 1.30),
    "triangle": (0.60, 1.15),
    "cylinder": (0.38, 1.40),
    "capsule": (0.30, 1.50),
    "icosahedron": (0.55, 1.10),
    "sphere": (0.50, 1.00),
}

VIEWS_PER_SCENE = 10
DEFAULT_CAMERA_RADIUS = 1.2

# Held-out (color, shape) combinations. Scenes containing any of the last
# four go to the test split; scenes containing any of the first three (and
# none of the last four) go to validation; everything else trains.
# "mint torus" is kept verbatim in the rule even though no torus shape
# exists in the 8-shape catalog, so it can never match a sampled scene.
HELD_OUT_VALIDATION = ("yellow sphere", "aqua icosahedron", "mint torus")
HELD_OUT_TEST = ("green box", "pink cylinder", "blue capsule", "peach cone")

SPLIT_TRAIN = "train"
SPLIT_VALIDATION = "validation"
SPLIT_TEST = "test"
SPLIT_REJECT = "reject"  # reachable only if the rules above were narrowed
SPLITS = (SPLIT_TRAIN, SPLIT_VALIDATION, SPLIT_TEST)


@dataclass(frozen=True)
class SceneObject:
    shape: str
    hsv: tuple[float, float, float]
    size: float
    position: tuple[float, float]

    def validate(self) -> None:
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        h, s, v = self.hsv
        if not (0.0 <= h <= 1.0 and 0.5 <= s <= 1.0 and 0.8 <= v <= 1.0):
            raise ValueError(f"HSV {self.hsv} outside sampling ranges")
        if self.size <= 0.0:
            raise ValueError("size must be positive")
        x, y = self.position
        if not (-1.0 <= x <= 1.0 and -1.0 <= y <= 1.0):
            raise ValueError(f"position {self.position} outside room")

    @property
    def footprint_radius(self) -> float:
        return SHAPE_DIMS[self.shape][0] * self.size

    @property
    def height(self) -> float:
        return SHAPE_DIMS[self.shape][1] * self.size


@dataclass(frozen=True)
class Scene:
    objects: tuple[SceneObject, ...]
    cameras: tuple[float, ...]
    camera_radius: float = DEFAULT_CAMERA_RADIUS

    def validate(self) -> None:
        if not 2 <= len(self.objects) <= 3:
            raise ValueError(f"scene must have 2 or 3 objects, got {len(self.objects)}")
        for obj in self.objects:
            obj.validate()
        if len(self.cameras) != VIEWS_PER_SCENE:
            raise ValueError(f"scene must have {VIEWS_PER_SCENE} cameras")
        if len(set(self.cameras)) != len(self.cameras):
            raise ValueError("camera angles must be distinct")
        for theta in self.cameras:
            if not 0.0 <= theta < 2.0 * math.pi:
                raise ValueError(f"camera angle {theta} outside [0, 2pi)")
        if self.camera_radius <= 0.0:
            raise ValueError("camera_radius must be positive")


@dataclass
class GenerationConfig:
    """Knobs for scene sampling; serialized as a flat key=value file."""

    seed: int = 0
    n_scenes: int = 1000
    object_count_weights: tuple[float, float] = (0.5, 0.5)  # P(2 objects), P(3)
    camera_radius: float = DEFAULT_CAMERA_RADIUS
    size_min: float = 0.15
    size_max: float = 0.45
    max_overlap: float = 0.25
    max_attempts: int = 200
    n_views: int = VIEWS_PER_SCENE
    caption_style: str = "synthetic"  # or "varied" (natural-language stand-in)
    workers: int = 1


def sample_cameras(rng: np.random.Generator, k: int) -> tuple[float, ...]:
    """Sample k distinct camera angles uniformly on [0, 2pi)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    angles: list[float] = []
    while len(angles) < k:
        theta = float(rng.uniform(0.0, 2.0 * math.pi))
        if theta not in angles:
            angles.append(theta)
    return tuple(angles)


def camera_position(theta: float, radius: float = DEFAULT_CAMERA_RADIUS) -> tuple[float, float]:
    return (radius * math.cos(theta), radius * math.sin(theta))


def world_to_view(p: Sequence[float], theta: float,
                  camera_radius: float = DEFAULT_CAMERA_RADIUS) -> tuple[float, float]:
    """Map a world point to (lateral, depth) in the camera frame at angle theta.

    The camera sits at radius*(cos theta, sin theta) facing the room center.
    Depth grows away from the camera; lateral is positive to the camera's
    right (right = forward x world-up, so increasing theta moves the camera
    counter-clockwise seen from above).
    """
    cx, cy = camera_position(theta, camera_radius)
    rx, ry = p[0] - cx, p[1] - cy
    ct, st = math.cos(theta), math.sin(theta)
    lateral = rx * (-st) + ry * ct
    depth = rx * (-ct) + ry * (-st)
    return (lateral, depth)


def sample_object(rng: np.random.Generator, cfg: GenerationConfig) -> SceneObject:
    shape = SHAPES[int(rng.integers(len(SHAPES)))]
    hsv = (
        float(rng.uniform(0.0, 1.0)),
        float(rng.uniform(0.5, 1.0)),
        float(rng.uniform(0.8, 1.0)),
    )
    size = float(rng.uniform(cfg.size_min, cfg.size_max))
    position = (float(rng.uniform(-1.0, 1.0)), float(rng.uniform(-1.0, 1.0)))
    return SceneObject(shape=shape, hsv=hsv, size=size, position=position)


def _overlaps(a: SceneObject, b: SceneObject, max_overlap: float) -> bool:
    dist = math.hypot(a.position[0] - b.position[0], a.position[1] - b.position[1])
    return dist < (a.footprint_radius + b.footprint_radius) * (1.0 - max_overlap)


def sample_scene(rng: np.random.Generator, cfg: GenerationConfig) -> Scene:
    """Sample a scene, rejecting object placements that overlap too much."""
    w2, w3 = cfg.object_count_weights
    n_objects = 2 if rng.uniform(0.0, w2 + w3) < w2 else 3
    objects: list[SceneObject] = []
    attempts = 0
    while len(objects) < n_objects:
        candidate = sample_object(rng, cfg)
        if any(_overlaps(candidate, o, cfg.max_overlap) for o in objects):
            attempts += 1
            if attempts > cfg.max_attempts:
                raise SceneGenerationError(
                    f"object placement failed after {cfg.max_attempts} attempts; "
                    "lower max_overlap or size_max"
                )
            continue
        objects.append(candidate)
    scene = Scene(
        objects=tuple(objects),
        cameras=sample_cameras(rng, cfg.n_views),
        camera_radius=cfg.camera_radius,
    )
    scene.validate()
    return scene


def scene_combos(scene: Scene) -> set[str]:
    """The scene's "<color-name> <shape>" combination strings."""
    from .colors import default_color_table

    table = default_color_table()
    return {f"{table.name_for(o.hsv)} {o.shape}" for o in scene.objects}


def split_label(combos: Iterable[str]) -> str:
    """Split assignment from a scene's (color, shape) combination strings."""
    combos = set(combos)
    if combos & set(HELD_OUT_TEST):
        return SPLIT_TEST
    if combos & set(HELD_OUT_VALIDATION):
        return SPLIT_VALIDATION
    return SPLIT_TRAIN


def assign_split(scene: Scene) -> str:
    return split_label(scene_combos(scene))


def scene_rng(seed: int, scene_index: int) -> np.random.Generator:
    """Deterministic per-scene generator, independent of generation order."""
    return np.random.default_rng(np.random.SeedSequence((seed, scene_index)))
