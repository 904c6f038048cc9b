"""Clear one shipped hard scene with the push/grasp planner and narrate it.

Needs trained checkpoints (see demos/pipeline.sh):

    python3 demos/run_hard_episode.py out/dipn.ckpt out/gn.ckpt [h01_block2x2]
"""

import sys
from importlib import resources
from pathlib import Path

from pushlab import evaluation as ev
from pushlab import planner as pl
from pushlab.dipn import DipnParams
from pushlab.graspnet import GraspScorerParams
from pushlab.scene import load_scene


def main():
    if len(sys.argv) < 3:
        raise SystemExit(__doc__)
    predictor = ev.PredictorHandle("dipn", DipnParams.load(sys.argv[1]))
    scorer = GraspScorerParams.load(sys.argv[2])
    name = sys.argv[3] if len(sys.argv) > 3 else "h01_block2x2"
    path = Path(str(resources.files("pushlab") / "data" / "hard")) / f"{name}.json"
    scene = load_scene(path)

    log = pl.run_episode(scene, predictor, scorer, pl.PlannerConfig(), seed=0)
    print(f"{name}: {log.n_objects} objects, budget {3 * log.n_objects} actions")
    for k, step in enumerate(log.actions, 1):
        a = step["action"]
        where = f"({a['x']:.1f}, {a['y']:.1f}) at {a['theta_deg']:.1f} deg"
        if a["type"] == "push":
            why = f"best push Q {step['q_push_best']:.4f} > grasp mean {step['grasp_mean']:.4f}"
            print(f"{k:2d}. push  {where}: {why}; moved {step['outcome']['moved']}")
        else:
            why = "shortcut" if step["q_push_best"] is None else f"no push beats mean {step['grasp_mean']:.4f}"
            print(f"{k:2d}. grasp {where}: score {step['grasp_best']:.3f} ({why}) -> {step['outcome']['result']}")
    status = "cleared" if log.completed else f"not cleared ({log.incomplete_reason})"
    print(f"{status}: removed {log.removed}, grasps {log.grasp_successes}/{log.grasp_attempts}")


if __name__ == "__main__":
    main()
