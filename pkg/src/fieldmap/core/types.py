"""Plain data types shared by the matcher, back-end and reconstruction code.

Image convention: ``u`` grows rightward, ``v`` grows downward, origin at the
top-left pixel. The vertical penalty of the matching cost depends on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

LEFT = "left"
RIGHT = "right"
SIDES = (LEFT, RIGHT)


class ImagePoint(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True)
class SeedKeypoint:
    """Ellipse center of one detected seed, the node type of the matching graph."""

    center: ImagePoint
    frame_id: int = 0
    side: str = LEFT
    bbox: Optional[tuple[float, float, float, float]] = None

    def __post_init__(self):
        if not isinstance(self.center, ImagePoint):
            object.__setattr__(self, "center", ImagePoint(*map(float, self.center)))
        if not (np.isfinite(self.center.u) and np.isfinite(self.center.v)):
            raise ValueError("keypoint center must be finite")
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}, got {self.side!r}")
        if self.bbox is not None:
            x0, y0, x1, y1 = self.bbox
            if not (x0 < x1 and y0 < y1):
                raise ValueError("bbox must satisfy x_min < x_max and y_min < y_max")
            if not (x0 <= self.center.u <= x1 and y0 <= self.center.v <= y1):
                raise ValueError("bbox must contain the keypoint center")

    @property
    def u(self) -> float:
        return self.center.u

    @property
    def v(self) -> float:
        return self.center.v


@dataclass(frozen=True)
class Ellipse:
    center: ImagePoint
    semi_axes: tuple[float, float]
    rotation: float


@dataclass(frozen=True)
class StereoCamera:
    """Rectified pinhole stereo pair; the right camera sits ``baseline`` metres along +x."""

    fx: float = 500.0
    fy: float = 500.0
    cx: float = 320.0
    cy: float = 240.0
    baseline: float = 0.1
    image_size: tuple[int, int] = (640, 480)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0 or self.baseline <= 0:
            raise ValueError("fx, fy and baseline must be positive")
        width, height = self.image_size
        if not (self.cx < width and self.cy < height):
            raise ValueError("principal point must lie inside the image")

    @property
    def width(self) -> int:
        return int(self.image_size[0])

    @property
    def height(self) -> int:
        return int(self.image_size[1])

    def in_image(self, u, v):
        u = np.asarray(u)
        v = np.asarray(v)
        return (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)


@dataclass
class Landmark:
    id: int
    position: np.ndarray
    observations: list = field(default_factory=list)  # (frame_id, side, SeedKeypoint)


@dataclass
class PointCloud:
    """``points`` is (N, 3) float metres; ``colors`` is (N, 3) uint8 or None."""

    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        self.points = pts
        if self.colors is not None:
            cols = np.asarray(self.colors)
            if cols.size == 0:
                cols = cols.reshape(0, 3)
            if cols.shape != pts.shape:
                raise ValueError("colors must match points in shape")
            self.colors = np.clip(np.rint(cols), 0, 255).astype(np.uint8)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))
