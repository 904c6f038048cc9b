"""Push one object in a random scene and compare predictors against the oracle.

Prints the IoU error of the static and trans baselines and, if a DIPN
checkpoint is given, of DIPN. Writes before/after/prediction images as PPM.

    python3 demos/push_and_predict.py [dipn.ckpt] [--seed 3]
"""

import argparse
from pathlib import Path

import numpy as np

from pushlab import dipn
from pushlab import evaluation as ev
from pushlab.dipn import DipnParams
from pushlab.physics import simulate_push
from pushlab.sampling import sample_pushes
from pushlab.scene import generate_scene, render


def save_ppm(path: Path, color: np.ndarray) -> None:
    rng = np.random.default_rng(0)
    palette = np.vstack([[255, 255, 255], rng.integers(40, 220, (64, 3))]).astype(np.uint8)
    img = palette[np.clip(color, 0, 64)]
    path.write_bytes(b"P6 %d %d 255\n" % (img.shape[1], img.shape[0]) + img.tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("dipn", nargs="?")
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--out", default="demo_push")
    args = ap.parse_args()

    scene = generate_scene(6, seed=args.seed, spread=130)
    obs = render(scene)
    pushes = sample_pushes(obs)
    rng = np.random.default_rng(args.seed)
    for k in rng.permutation(len(pushes)):
        out = simulate_push(scene, pushes[k])
        if out.contacted and not out.exited:
            push = pushes[k]
            break
    else:
        raise SystemExit("no contacting push in this scene; try another seed")

    s = push.start
    print(f"push from ({s.x:.1f}, {s.y:.1f}) heading {np.degrees(s.theta):.1f} deg; moved objects {sorted(out.contacted)}")
    preds = {"static": ev.predict_static(obs, push), "trans": ev.predict_trans(obs, push)}
    if args.dipn:
        preds["dipn"] = dipn.predict(DipnParams.load(args.dipn), obs, push)
    for name, p in preds.items():
        print(f"  {name:6s} error {ev.prediction_error(p, out):.4f}")

    d = Path(args.out)
    d.mkdir(exist_ok=True)
    save_ppm(d / "before.ppm", obs.color)
    save_ppm(d / "after.ppm", render(out.final_scene).color)
    for name, p in preds.items():
        save_ppm(d / f"pred_{name}.ppm", p.image)
    print(f"images in {d}/")


if __name__ == "__main__":
    main()
