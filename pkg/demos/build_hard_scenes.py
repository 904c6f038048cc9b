"""Author the packed "hard" scenes shipped with the package.

Every scene is made of tight blocks in which each object has a neighbor on
two perpendicular sides, so no grasp can close on anything until a push
opens a gap. Run from the repository root:

    python3 demos/build_hard_scenes.py
"""

import math
from pathlib import Path

import numpy as np

from pushlab.geometry import Pose2, polygon_area, rectangle, transform_points
from pushlab.scene import Body, ObjectSpec, Scene, centered_shape, save_scene

OUT = Path(__file__).resolve().parents[1] / "src" / "pushlab" / "data" / "hard"
GAP = 0.5


def block(center, rows, cols, w=28.0, h=28.0, angle_deg=0.0):
    """Poses and shapes of a rows x cols grid of w x h rectangles."""
    shape = centered_shape(rectangle(-w / 2, -h / 2, w / 2, h / 2))
    frame = Pose2(center[0], center[1], math.radians(angle_deg))
    out = []
    for r in range(rows):
        for c in range(cols):
            local = [(c - (cols - 1) / 2) * (w + GAP), (r - (rows - 1) / 2) * (h + GAP)]
            x, y = transform_points(frame, [local])[0]
            out.append((shape, Pose2(float(x), float(y), frame.theta)))
    return out


def loose(center, size, angle_deg=0.0):
    shape = centered_shape(rectangle(-size / 2, -size / 2, size / 2, size / 2))
    return [(shape, Pose2(center[0], center[1], math.radians(angle_deg)))]


def scene(parts, seed):
    bodies = []
    for k, (shape, pose) in enumerate(parts):
        spec = ObjectSpec(shape, k + 1, mass=polygon_area(shape) / 300.0, friction=0.5)
        bodies.append(Body(spec, pose))
    return Scene(tuple(bodies), seed=seed)


SCENES = {
    "h01_block2x2": block((112, 112), 2, 2),
    "h02_block2x2_rot22": block((112, 112), 2, 2, angle_deg=22.5),
    "h03_block2x3": block((112, 112), 2, 3),
    "h04_block3x2_rot67": block((112, 112), 3, 2, angle_deg=67.5),
    "h05_block2x2_offcenter": block((80, 140), 2, 2, angle_deg=-22.5),
    "h06_two_blocks": block((70, 80), 2, 2) + block((150, 150), 2, 2, angle_deg=45),
    "h07_long_bricks": block((112, 112), 2, 2, w=36, h=28),
    "h08_block_and_loose": block((100, 110), 2, 2, angle_deg=22.5) + loose((170, 60), 20) + loose((50, 180), 18, 30),
    "h09_block2x3_rot45": block((112, 112), 2, 3, angle_deg=45),
    "h10_mixed_blocks": block((72, 112), 2, 2, angle_deg=45) + block((158, 112), 2, 2),
}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for k, (name, parts) in enumerate(SCENES.items()):
        save_scene(scene(parts, seed=k), OUT / f"{name}.json")
        print(name, len(parts), "objects")


if __name__ == "__main__":
    main()
