"""Synthetic sorghum scenes: range traversal and single-panicle orbit."""

from fieldmap.simulator.scenes import (
    FrameDetections,
    Scene,
    generate_orbit_scene,
    generate_range_scene,
    generate_scene,
)

__all__ = [
    "FrameDetections",
    "Scene",
    "generate_orbit_scene",
    "generate_range_scene",
    "generate_scene",
]
