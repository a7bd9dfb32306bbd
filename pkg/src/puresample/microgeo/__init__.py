from .scene import (
    MicroBrdf,
    Medium,
    MicrogeometryScene,
    SceneError,
    beckmann_heightfield,
    poisson_disk_spheres,
    scene_from_file,
    scene_from_json,
)
from .tracer import WalkOutcome, micro_sample, trace_walk, trace_walks
from . import kernels

__all__ = [
    "MicroBrdf",
    "Medium",
    "MicrogeometryScene",
    "SceneError",
    "WalkOutcome",
    "beckmann_heightfield",
    "kernels",
    "micro_sample",
    "poisson_disk_spheres",
    "scene_from_file",
    "scene_from_json",
    "trace_walk",
    "trace_walks",
]
