"""pushlab: a 2D push/grasp lab with a quasi-static physics oracle, a push
prediction network (DIPN), a grasp scorer (GN-lite) and a one-step
lookahead push/grasp planner, all in numpy."""

from .geometry import Pose2, compose, invert, mask_iou, rasterize
from .scene import Observation, Scene, generate_scene, load_scene, render, save_scene

__version__ = "0.1.0"

__all__ = [
    "Pose2",
    "compose",
    "invert",
    "mask_iou",
    "rasterize",
    "Observation",
    "Scene",
    "generate_scene",
    "load_scene",
    "render",
    "save_scene",
]
