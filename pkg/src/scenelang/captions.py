"""Viewpoint-dependent caption synthesis from scene geometry.

Each caption describes every unordered object pair exactly once. A pair
description is one or two sentences: the first names both objects with the
dominant relation, the second (when a secondary axis relation exists) adds
it by shape name only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .colors import ColorTable, default_color_table
from .scenes import Scene, SceneObject, world_to_view, sample_cameras

# Relation thresholds in room units. An axis relation is emitted only when
# the view-space delta on that axis reaches AXIS_THRESHOLD; close/far fire
# on the pairwise center distance.
AXIS_THRESHOLD = 0.1
CLOSE_THRESHOLD = 0.5
FAR_THRESHOLD = 1.2

LEFT_OF = "left_of"
RIGHT_OF = "right_of"
IN_FRONT_OF = "in_front_of"
BEHIND = "behind"
CLOSE = "close"
FAR = "far"

RELATIONS = (IN_FRONT_OF, BEHIND, LEFT_OF, RIGHT_OF, CLOSE, FAR)
AXIS_RELATIONS = (LEFT_OF, RIGHT_OF, IN_FRONT_OF, BEHIND)

INVERSE_RELATION = {
    LEFT_OF: RIGHT_OF,
    RIGHT_OF: LEFT_OF,
    IN_FRONT_OF: BEHIND,
    BEHIND: IN_FRONT_OF,
    CLOSE: CLOSE,
    FAR: FAR,
}

RELATION_PHRASE = {
    LEFT_OF: "to the left of",
    RIGHT_OF: "to the right of",
    IN_FRONT_OF: "in front of",
    BEHIND: "behind",
    CLOSE: "close to",
    FAR: "far from",
}

SIZE_SMALL_QUANTILE = 0.3
SIZE_LARGE_QUANTILE = 0.7

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_TEMPLATE_WORDS = ("there", "is", "a", "large", "small")
_RELATION_WORDS = ("in", "front", "of", "behind", "to", "the", "left",
                   "right", "close", "far", "from")

# Extra words used by the varied (natural-language stand-in) caption style.
_VARIED_WORDS = ("you", "can", "see", "sits", "room", "scene", "shows",
                 "it", "looks", "nice")
# Rare fillers deliberately left out of every vocabulary to exercise <unk>.
_OOV_FILLERS = ("stunning", "peculiar")


def relations_for_pair(a: SceneObject, b: SceneObject, theta: float) -> list[str]:
    """Relations of a relative to b as seen from camera angle theta.

    Axis relations are ordered by view-space |delta| descending, so the
    dominant one comes first; close/far (when triggered) follows. If nothing
    clears a threshold the pair still gets one relation: close/far if
    available, otherwise the larger-delta axis.
    """
    if a is b:
        raise ValueError("relations need two distinct objects")
    la, da = world_to_view(a.position, theta)
    lb, db = world_to_view(b.position, theta)
    dlat = la - lb
    ddep = da - db
    dist = math.hypot(a.position[0] - b.position[0], a.position[1] - b.position[1])

    axis: list[tuple[float, str]] = []
    if abs(dlat) >= AXIS_THRESHOLD:
        axis.append((abs(dlat), LEFT_OF if dlat < 0 else RIGHT_OF))
    if abs(ddep) >= AXIS_THRESHOLD:
        axis.append((abs(ddep), IN_FRONT_OF if ddep < 0 else BEHIND))
    axis.sort(key=lambda t: -t[0])

    dist_rel = None
    if dist < CLOSE_THRESHOLD:
        dist_rel = CLOSE
    elif dist > FAR_THRESHOLD:
        dist_rel = FAR

    rels = [name for _, name in axis]
    if dist_rel is not None:
        rels.append(dist_rel)
    if not rels:
        if abs(dlat) >= abs(ddep):
            rels = [LEFT_OF if dlat < 0 else RIGHT_OF]
        else:
            rels = [IN_FRONT_OF if ddep < 0 else BEHIND]
    return rels


def size_word(size: float, size_min: float, size_max: float) -> str | None:
    span = size_max - size_min
    if size < size_min + SIZE_SMALL_QUANTILE * span:
        return "small"
    if size > size_min + SIZE_LARGE_QUANTILE * span:
        return "large"
    return None


def _noun_phrase(obj: SceneObject, table: ColorTable,
                 size_min: float, size_max: float) -> list[str]:
    words = ["a"]
    sw = size_word(obj.size, size_min, size_max)
    if sw:
        words.append(sw)
    words.append(table.name_for(obj.hsv))
    words.append(obj.shape)
    return words


def pair_sentences(a: SceneObject, b: SceneObject, theta: float, table: ColorTable,
                   size_min: float, size_max: float) -> list[str]:
    """One or two sentences describing the (a, b) pair, a mentioned first."""
    rels = relations_for_pair(a, b, theta)
    first = ["there", "is"] + _noun_phrase(a, table, size_min, size_max)
    first += RELATION_PHRASE[rels[0]].split()
    first += _noun_phrase(b, table, size_min, size_max)
    sentences = [" ".join(first) + " ."]
    axis_rels = [r for r in rels if r in AXIS_RELATIONS]
    if len(axis_rels) >= 2:
        second = ["the", a.shape, "is"] + RELATION_PHRASE[axis_rels[1]].split()
        second += ["the", b.shape]
        sentences.append(" ".join(second) + " .")
    return sentences


@dataclass(frozen=True)
class Caption:
    text: str
    tokens: tuple[int, ...]


def caption_words(scene: Scene, theta: float, rng: np.random.Generator,
                  size_min: float = 0.15, size_max: float = 0.45,
                  table: ColorTable | None = None) -> list[str]:
    """Token words of a full scene caption at angle theta.

    Covers every unordered object pair exactly once; the mention order
    within each pair is random.
    """
    table = table or default_color_table()
    words: list[str] = []
    n = len(scene.objects)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = scene.objects[i], scene.objects[j]
            if rng.uniform() < 0.5:
                a, b = b, a
            for sentence in pair_sentences(a, b, theta, table, size_min, size_max):
                words.extend(sentence.split())
    return words


def varied_caption_words(scene: Scene, theta: float, rng: np.random.Generator,
                         size_min: float = 0.15, size_max: float = 0.45,
                         table: ColorTable | None = None) -> list[str]:
    """Caption in the varied phrasing style (natural-language stand-in).

    Same relational content as the synthetic style but with alternative
    sentence frames, and an occasional out-of-vocabulary filler so the
    <unk> path gets real coverage.
    """
    table = table or default_color_table()
    words: list[str] = []
    n = len(scene.objects)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = scene.objects[i], scene.objects[j]
            if rng.uniform() < 0.5:
                a, b = b, a
            rels = relations_for_pair(a, b, theta)
            np_a = _noun_phrase(a, table, size_min, size_max)
            np_b = _noun_phrase(b, table, size_min, size_max)
            rel = RELATION_PHRASE[rels[0]].split()
            frame = int(rng.integers(4))
            if frame == 0:
                sent = ["you", "can", "see"] + np_a + rel + np_b
            elif frame == 1:
                sent = np_a + ["sits"] + rel + np_b + ["in", "the", "room"]
            elif frame == 2:
                sent = ["the", "scene", "shows"] + np_a + rel + np_b
            else:
                sent = ["there", "is"] + np_a + rel + np_b
            words.extend(sent + ["."])
    if rng.uniform() < 0.05:
        filler = _OOV_FILLERS[int(rng.integers(len(_OOV_FILLERS)))]
        words.extend(["it", "looks", filler, "."])
    return words


def render_text(words: Sequence[str]) -> str:
    """Human-readable text: sentences capitalized, '.' attached."""
    out: list[str] = []
    capitalize = True
    for w in words:
        if w == ".":
            if out:
                out[-1] += "."
            capitalize = True
            continue
        out.append(w.capitalize() if capitalize else w)
        capitalize = False
    text = " ".join(out)
    return text.replace(". ", ". ").strip()


class Vocabulary:
    """Token <-> id mapping; id 0 is padding, id 1 the unknown token."""

    def __init__(self, words: Sequence[str]):
        if words[0] != PAD_TOKEN or words[1] != UNK_TOKEN:
            raise ValueError("vocabulary must start with <pad>, <unk>")
        if len(set(words)) != len(words):
            raise ValueError("duplicate vocabulary entries")
        self.words = tuple(words)
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def encode(self, words: Sequence[str], allow_unk: bool = False) -> np.ndarray:
        ids = []
        for w in words:
            i = self.index.get(w)
            if i is None:
                if not allow_unk:
                    raise KeyError(f"word {w!r} not in vocabulary")
                i = self.unk_id
            ids.append(i)
        return np.asarray(ids, dtype=np.uint16)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.words[int(i)] for i in ids if int(i) != self.pad_id]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.words) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls(Path(path).read_text().splitlines())


def build_vocabulary(style: str = "synthetic",
                     table: ColorTable | None = None) -> Vocabulary:
    """Closed vocabulary of the caption grammar for the given style."""
    from .scenes import SHAPES

    table = table or default_color_table()
    words: list[str] = [PAD_TOKEN, UNK_TOKEN]
    words += _TEMPLATE_WORDS
    words += table.names
    words += SHAPES
    for w in _RELATION_WORDS:
        if w not in words:
            words.append(w)
    words.append(".")
    if style == "varied":
        for w in _VARIED_WORDS:
            if w not in words:
                words.append(w)
    elif style != "synthetic":
        raise ValueError(f"unknown caption style {style!r}")
    return Vocabulary(words)


def generate_caption(scene: Scene, theta: float, rng: np.random.Generator,
                     vocab: Vocabulary, style: str = "synthetic",
                     size_min: float = 0.15, size_max: float = 0.45,
                     table: ColorTable | None = None) -> Caption:
    if style == "synthetic":
        words = caption_words(scene, theta, rng, size_min, size_max, table)
        ids = vocab.encode(words)
    elif style == "varied":
        words = varied_caption_words(scene, theta, rng, size_min, size_max, table)
        ids = vocab.encode(words, allow_unk=True)
    else:
        raise ValueError(f"unknown caption style {style!r}")
    return Caption(text=render_text(words), tokens=tuple(int(i) for i in ids))


# ---------------------------------------------------------------------------
# Transformation scene sets for the representation similarity study.
# Variants of a two-object base scene: noun change swaps the shapes,
# adjective change swaps the colors, preposition change swaps the object
# positions (inverting the relation), and the meaning-preserving variant
# keeps the scene but mentions the objects in the opposite order.
# ---------------------------------------------------------------------------

TRANSFORMATIONS = ("noun", "adjective", "preposition", "meaning")


@dataclass(frozen=True)
class TransformationSet:
    base: Scene
    noun: Scene        # shapes swapped between the two objects
    adjective: Scene   # colors swapped
    preposition: Scene # positions swapped (relation inverted)
    meaning: Scene     # identical scene; described with swapped mention order

    def scenes(self) -> dict[str, Scene]:
        return {"base": self.base, "noun": self.noun, "adjective": self.adjective,
                "preposition": self.preposition, "meaning": self.meaning}


def _with_objects(scene: Scene, objects: tuple[SceneObject, ...]) -> Scene:
    return Scene(objects=objects, cameras=scene.cameras,
                 camera_radius=scene.camera_radius)


def gershman_scene_set(rng: np.random.Generator,
                       table: ColorTable | None = None,
                       size_min: float = 0.15, size_max: float = 0.45) -> TransformationSet:
    """Sample a transformation study scene set.

    The base scene has two objects with distinct shapes and color names,
    mid-band sizes (no size word) and enough separation that every
    viewpoint yields a clear dominant axis relation.
    """
    table = table or default_color_table()
    span = size_max - size_min
    lo = size_min + (SIZE_SMALL_QUANTILE + 0.05) * span
    hi = size_min + (SIZE_LARGE_QUANTILE - 0.05) * span

    from .scenes import SHAPES

    s1, s2 = rng.choice(len(SHAPES), size=2, replace=False)
    while True:
        hsv1 = (float(rng.uniform()), float(rng.uniform(0.5, 1)), float(rng.uniform(0.8, 1)))
        hsv2 = (float(rng.uniform()), float(rng.uniform(0.5, 1)), float(rng.uniform(0.8, 1)))
        if table.name_for(hsv1) != table.name_for(hsv2):
            break
    # positions: a random direction with separation in [0.5, 1.1], centered
    sep = float(rng.uniform(0.5, 1.1))
    ang = float(rng.uniform(0, 2 * math.pi))
    dx, dy = 0.5 * sep * math.cos(ang), 0.5 * sep * math.sin(ang)
    p1 = (dx, dy)
    p2 = (-dx, -dy)
    a = SceneObject(shape=SHAPES[int(s1)], hsv=hsv1,
                    size=float(rng.uniform(lo, hi)), position=p1)
    b = SceneObject(shape=SHAPES[int(s2)], hsv=hsv2,
                    size=float(rng.uniform(lo, hi)), position=p2)
    cams = sample_cameras(rng, 10)
    base = Scene(objects=(a, b), cameras=cams)
    noun = _with_objects(base, (
        SceneObject(shape=b.shape, hsv=a.hsv, size=a.size, position=a.position),
        SceneObject(shape=a.shape, hsv=b.hsv, size=b.size, position=b.position),
    ))
    adjective = _with_objects(base, (
        SceneObject(shape=a.shape, hsv=b.hsv, size=a.size, position=a.position),
        SceneObject(shape=b.shape, hsv=a.hsv, size=b.size, position=b.position),
    ))
    preposition = _with_objects(base, (
        SceneObject(shape=a.shape, hsv=a.hsv, size=a.size, position=b.position),
        SceneObject(shape=b.shape, hsv=b.hsv, size=b.size, position=a.position),
    ))
    return TransformationSet(base=base, noun=noun, adjective=adjective,
                             preposition=preposition, meaning=base)


def transformation_captions(ts: TransformationSet, theta: float,
                            table: ColorTable | None = None,
                            size_min: float = 0.15,
                            size_max: float = 0.45) -> dict[str, list[str]]:
    """Captions of all five variants at one viewpoint, mention order fixed.

    Base, noun, adjective and preposition captions mention object 0 first;
    the meaning-preserving caption mentions object 1 first (which inverts
    the stated relations while describing the identical scene).
    """
    table = table or default_color_table()
    out: dict[str, list[str]] = {}
    for name, scene in ts.scenes().items():
        a, b = scene.objects
        if name == "meaning":
            a, b = b, a
        words: list[str] = []
        for sentence in pair_sentences(a, b, theta, table, size_min, size_max):
            words.extend(sentence.split())
        out[name] = words
    return out
