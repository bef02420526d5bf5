"""The 22-entry named color table and nearest-name lookup in HSV space."""

from __future__ import annotations

import functools
import importlib.resources
import math
from dataclasses import dataclass
from pathlib import Path

REQUIRED_NAMES = {
    # names the split rules and reference captions rely on
    "yellow", "aqua", "mint", "green", "pink", "blue", "peach",
    "red", "purple", "magenta",
}


@dataclass(frozen=True)
class ColorTable:
    names: tuple[str, ...]
    hsv: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        if len(self.names) != 22:
            raise ValueError(f"color table must have 22 entries, got {len(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise ValueError("color names must be unique")
        missing = REQUIRED_NAMES - set(self.names)
        if missing:
            raise ValueError(f"color table missing required names: {sorted(missing)}")

    def name_for(self, hsv: tuple[float, float, float]) -> str:
        """Nearest table entry under squared HSV distance with hue wraparound.

        Ties resolve to the earlier table entry.
        """
        h, s, v = hsv
        best = 0
        best_d = math.inf
        for i, (th, ts, tv) in enumerate(self.hsv):
            dh = abs(h - th)
            dh = min(dh, 1.0 - dh)
            d = dh * dh + (s - ts) ** 2 + (v - tv) ** 2
            if d < best_d:
                best_d = d
                best = i
        return self.names[best]

    def hsv_for(self, name: str) -> tuple[float, float, float]:
        return self.hsv[self.names.index(name)]


def parse_color_table(text: str) -> ColorTable:
    names: list[str] = []
    hsv: list[tuple[float, float, float]] = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"bad color table line: {line!r}")
        names.append(parts[0])
        hsv.append((float(parts[1]), float(parts[2]), float(parts[3])))
    return ColorTable(names=tuple(names), hsv=tuple(hsv))


def load_color_table(path: str | Path) -> ColorTable:
    return parse_color_table(Path(path).read_text())


def color_table_text() -> str:
    """The bundled table file contents (written next to generated datasets)."""
    return importlib.resources.files("scenelang.data").joinpath("colors.txt").read_text()


@functools.lru_cache(maxsize=1)
def default_color_table() -> ColorTable:
    return parse_color_table(color_table_text())


def color_name(hsv: tuple[float, float, float]) -> str:
    return default_color_table().name_for(hsv)


def hsv_to_rgb(h: float, s: float, v: float) -> tuple[float, float, float]:
    """Standard hexcone HSV -> RGB conversion; all components in [0, 1]."""
    h6 = (h % 1.0) * 6.0
    i = int(math.floor(h6)) % 6
    f = h6 - math.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    return ((v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q))[i]
