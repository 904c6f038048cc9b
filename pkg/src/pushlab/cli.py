"""Command line entry point: ``pushlab <subcommand> [flags]``.

Exit codes: 0 ok, 1 usage or invalid input, 2 runtime failure.
``PUSHLAB_THREADS`` caps the BLAS worker count.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import dipn, evaluation, graspnet, planner
from .dipn import DipnParams, TrainConfig
from .geometry import WORKSPACE
from .graspnet import GraspSamples, GraspScorerParams, GraspTrainConfig
from .physics import DEFAULT_GRIPPER, PUSH_DISTANCE, GripperModel, PushRecord
from .planner import PlannerConfig
from .scene import generate_scene, load_scene, save_scene

CONFIG_NAME = "run_config.json"


class UsageError(Exception):
    """Bad flags or unusable inputs (exit code 1)."""


@dataclass
class RunConfig:
    seed: int = 0
    workspace: int = WORKSPACE
    push_distance: float = PUSH_DISTANCE
    gripper: dict = field(default_factory=lambda: asdict(DEFAULT_GRIPPER))
    planner: dict = field(default_factory=lambda: asdict(PlannerConfig()))
    dipn_train: dict = field(default_factory=lambda: asdict(TrainConfig()))
    gn_train: dict = field(default_factory=lambda: asdict(GraspTrainConfig()))
    out: str = ""

    def config_hash(self) -> str:
        d = asdict(self)
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def grip(self) -> GripperModel:
        return GripperModel(**self.gripper)

    def planner_config(self) -> PlannerConfig:
        return PlannerConfig(**{**self.planner, "push_distance": self.push_distance})

    def dipn_config(self) -> TrainConfig:
        return TrainConfig(**{**self.dipn_train, "seed": self.seed})

    def gn_config(self) -> GraspTrainConfig:
        return GraspTrainConfig(**{**self.gn_train, "seed": self.seed})


def _merge(base: dict, over: dict, where: str) -> dict:
    out = dict(base)
    for k, v in over.items():
        if k not in base:
            raise UsageError(f"unknown config key {where}{k}")
        out[k] = _merge(base[k], v, f"{where}{k}.") if isinstance(base[k], dict) and isinstance(v, dict) else v
    return out


def resolve_config(args) -> RunConfig:
    cfg = asdict(RunConfig())
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            cfg = _merge(cfg, json.loads(path.read_text()), "")
        except json.JSONDecodeError as e:
            raise UsageError(f"invalid config JSON: {e}") from None
    cfg["seed"] = args.seed if args.seed is not None else cfg["seed"]
    if getattr(args, "push_distance", None) is not None:
        cfg["push_distance"] = args.push_distance
    if getattr(args, "stride", None) is not None:
        cfg["planner"]["stride"] = args.stride
    cfg["out"] = args.out
    try:
        rc = RunConfig(**cfg)
        rc.grip(), rc.planner_config(), rc.dipn_config(), rc.gn_config()
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid config: {e}") from None
    return rc


# --------------------------------------------------------------------------
# artifact helpers


def _out_dir(out: str) -> Path:
    p = Path(out)
    if p.suffix:
        p.parent.mkdir(parents=True, exist_ok=True)
        return p.parent
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_config(cfg: RunConfig, where: Path, name: str = CONFIG_NAME) -> None:
    d = asdict(cfg)
    d["config_hash"] = cfg.config_hash()
    (where / name).write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".partial")
    tmp.write_text(text)
    os.replace(tmp, path)


def _need_file(path: Optional[str], what: str) -> Path:
    if not path:
        raise UsageError(f"missing --{what}")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def read_push_records(path: Path) -> tuple[Optional[dict], list[PushRecord]]:
    header, recs = None, []
    try:
        with open(path) as f:
            for line in f:
                if not line.strip():
                    continue
                d = json.loads(line)
                if "header" in d:
                    header = d["header"]
                else:
                    recs.append(PushRecord.from_dict(d))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise UsageError(f"malformed push dataset {path}: {e}") from None
    return header, recs


def write_push_records(path: Path, records, header: dict) -> None:
    lines = [json.dumps({"header": header}, sort_keys=True)]
    lines += [json.dumps(r.to_dict(), sort_keys=True) for r in records]
    _atomic_text(path, "\n".join(lines) + "\n")


def save_grasp_samples(path: Path, samples: GraspSamples, header: dict) -> None:
    tmp = path.with_name(path.name + ".partial.npz")
    np.savez_compressed(
        tmp, windows=samples.windows, labels=samples.labels, source=samples.source, header=json.dumps(header)
    )
    os.replace(tmp, path)


def load_grasp_samples(path: Path) -> tuple[dict, GraspSamples]:
    try:
        with np.load(path) as z:
            head = json.loads(str(z["header"]))
            return head, GraspSamples(z["windows"], z["labels"], z["source"])
    except (OSError, KeyError, ValueError) as e:
        raise UsageError(f"malformed grasp dataset {path}: {e}") from None


def scene_files(spec: str) -> list[Path]:
    """Scene JSON files from a directory or file; ``hard/`` names the shipped set."""
    p = Path(spec)
    if not p.exists() and spec.rstrip("/") == "hard":
        p = Path(str(resources.files("pushlab") / "data" / "hard"))
    if p.is_file():
        return [p]
    if not p.is_dir():
        raise UsageError(f"scenes not found: {spec}")
    files = sorted(f for f in p.glob("*.json") if f.name != CONFIG_NAME)
    if not files:
        raise UsageError(f"no scene files in {spec}")
    return files


def _header(cfg: RunConfig, kind: str, **extra) -> dict:
    return {"kind": kind, "config_hash": cfg.config_hash(), **extra}


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_scenes(args, cfg: RunConfig) -> None:
    out = _out_dir(args.out)
    for k in range(args.count):
        scene = generate_scene(args.n_objects, cfg.seed * 100003 + k, size=cfg.workspace)
        save_scene(scene, out / f"scene_{k:04d}.json")
    _write_config(cfg, out)


def cmd_collect_pushes(args, cfg: RunConfig) -> None:
    out = Path(args.out)
    _out_dir(args.out)
    recs = planner.collect_push_dataset(
        args.n, cfg.seed, max_objects=args.n_objects or 7, distance=cfg.push_distance, grip=cfg.grip()
    )
    write_push_records(out, recs, _header(cfg, "push_records", n=len(recs)))
    _write_config(cfg, out.parent, out.name + ".config.json")


def cmd_collect_grasps(args, cfg: RunConfig) -> None:
    out = Path(args.out)
    _out_dir(args.out)
    stride = cfg.planner["stride"]
    parts = []
    if args.pretrain_scenes:
        parts.append(planner.collect_pretrain_dataset(args.pretrain_scenes, cfg.seed, stride=stride, grip=cfg.grip()))
    if args.n:
        gnp = GraspScorerParams.load(_need_file(args.gn, "gn")) if args.gn else None
        parts.append(
            planner.collect_grasp_dataset(
                args.n, cfg.seed + 1, n_objects=args.n_objects or 10, stride=stride, gn_params=gnp, grip=cfg.grip()
            )
        )
    samples = GraspSamples.concat(parts)
    save_grasp_samples(out, samples, _header(cfg, "grasp_samples", n=len(samples)))
    _write_config(cfg, out.parent, out.name + ".config.json")


def cmd_train_dipn(args, cfg: RunConfig) -> None:
    _, recs = read_push_records(_need_file(args.data, "data"))
    if not recs:
        raise UsageError("empty push dataset")
    out = Path(args.out)
    _out_dir(args.out)
    examples = [dipn.make_example(r) for r in recs]
    params = DipnParams(seed=cfg.seed)
    curve = dipn.train(params, examples, cfg.dipn_config())
    params.save(out, {"config_hash": cfg.config_hash()})
    rows = [{"epoch": k + 1, "loss": v} for k, v in enumerate(curve)]
    _atomic_text(out.with_name(out.name + ".loss.csv"), evaluation.rows_to_csv(rows, ["epoch", "loss"]))
    _write_config(cfg, out.parent, out.name + ".config.json")


def cmd_train_gn(args, cfg: RunConfig) -> None:
    parts = [load_grasp_samples(_need_file(d, "data"))[1] for d in args.data]
    samples = GraspSamples.concat(parts)
    if not len(samples):
        raise UsageError("empty grasp dataset")
    out = Path(args.out)
    _out_dir(args.out)
    params, curve = planner.train_grasp_scorer(samples, cfg.gn_config(), cfg.planner["stride"], cfg.grip())
    params.save(out, {"config_hash": cfg.config_hash()})
    rows = [{"epoch": k + 1, "loss": v} for k, v in enumerate(curve)]
    _atomic_text(out.with_name(out.name + ".loss.csv"), evaluation.rows_to_csv(rows, ["epoch", "loss"]))
    _write_config(cfg, out.parent, out.name + ".config.json")


def _predictor(args) -> evaluation.PredictorHandle:
    if args.predictor == "dipn":
        return evaluation.PredictorHandle("dipn", DipnParams.load(_need_file(args.dipn, "dipn")))
    return evaluation.PredictorHandle(args.predictor)


def cmd_eval_dipn(args, cfg: RunConfig) -> None:
    _, recs = read_push_records(_need_file(args.data, "data"))
    if not recs:
        raise UsageError("empty push dataset")
    handle = _predictor(args)
    out = _out_dir(args.out)
    errs = evaluation.evaluate_predictor(handle, recs)
    rows = [{"index": k, "predictor": args.predictor, "error": float(e)} for k, e in enumerate(errs)]
    _atomic_text(out / f"errors_{args.predictor}.csv", evaluation.rows_to_csv(rows, ["index", "predictor", "error"]))
    summary = [
        {
            "predictor": args.predictor,
            "n_pushes": len(errs),
            "mean_error": float(errs.mean()),
            "std_error": float(errs.std()),
            "config_hash": cfg.config_hash(),
        }
    ]
    _atomic_text(out / f"summary_{args.predictor}.csv", evaluation.rows_to_csv(summary))
    _write_config(cfg, out)


def cmd_run_episodes(args, cfg: RunConfig) -> None:
    files = scene_files(args.scenes)
    handle = _predictor(args)
    gnp = GraspScorerParams.load(_need_file(args.gn, "gn"))
    pcfg = cfg.planner_config()
    out = _out_dir(args.out)
    logs = []
    for path in files:
        scene = load_scene(path)
        for r in range(args.repeat):
            log = planner.run_episode(scene, handle, gnp, pcfg, seed=cfg.seed * 1000 + r, grip=cfg.grip())
            log.scene = path.stem
            logs.append(log)
    header = _header(cfg, "episode_logs", predictor=args.predictor, scenes=str(args.scenes), repeat=args.repeat)
    tmp = out / "episodes.jsonl.partial"
    planner.write_logs(tmp, logs, header)
    os.replace(tmp, out / "episodes.jsonl")
    _atomic_text(out / "metrics.csv", evaluation.rows_to_csv(metric_rows(logs, args.predictor), METRIC_COLUMNS))
    _write_config(cfg, out)


METRIC_COLUMNS = [
    "group",
    "predictor",
    "episodes",
    "completion",
    "grasp_success_completed",
    "grasp_success_all",
    "efficiency_completed",
    "efficiency_all",
]


def metric_rows(logs, predictor: str) -> list[dict]:
    groups: dict[str, list] = {}
    for log in logs:
        groups.setdefault(log.scene, []).append(log)
    rows = []
    for name in sorted(groups):
        rows.append({"group": name, "predictor": predictor, **asdict(evaluation.pag_metrics(groups[name]))})
    rows.append({"group": "ALL", "predictor": predictor, **asdict(evaluation.pag_metrics(logs))})
    return rows


def cmd_report(args, cfg: RunConfig) -> None:
    out = _out_dir(args.out)
    rows = []
    hashes = set()
    for path in args.logs:
        header, logs = planner.read_logs(_need_file(path, "logs"))
        if not logs:
            raise UsageError(f"no episodes in {path}")
        header = header or {}
        hashes.add(header.get("config_hash"))
        rows += metric_rows(logs, header.get("predictor", "?"))
    if len(hashes) > 1 and not args.force:
        raise UsageError(f"logs come from different configs {sorted(map(str, hashes))}; pass --force to aggregate")
    _atomic_text(out / "report.csv", evaluation.rows_to_csv(rows, METRIC_COLUMNS))
    evaluation.write_json(out / "report.json", {"config_hashes": sorted(map(str, hashes)), "rows": rows})
    _write_config(cfg, out)


# --------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pushlab", description="2D push/grasp lab: data, training, evaluation and episodes.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_help: str):
        sp.add_argument("--seed", type=int, default=None, help="master seed (default from config, 0)")
        sp.add_argument("--config", help="JSON file overriding RunConfig fields")
        sp.add_argument("--out", required=True, help=out_help)
        sp.add_argument("--push-distance", type=float, default=None, help="push length in cells")
        sp.add_argument("--stride", type=int, default=None, help="grasp candidate grid stride")
        return sp

    sp = common(sub.add_parser("gen-scenes", help="write random scene files"), "output directory")
    sp.add_argument("--n-objects", type=int, default=10)
    sp.add_argument("--count", type=int, default=10)
    sp.set_defaults(func=cmd_gen_scenes)

    sp = common(sub.add_parser("collect-pushes", help="random pushes labeled by the physics oracle"), "output .jsonl")
    sp.add_argument("--n", type=int, required=True, help="number of pushes")
    sp.add_argument("--n-objects", type=int, default=None, help="max objects per scene (default 7)")
    sp.set_defaults(func=cmd_collect_pushes)

    sp = common(sub.add_parser("collect-grasps", help="self-labeled and executed grasp samples"), "output .npz")
    sp.add_argument("--n", type=int, default=0, help="number of executed (online) grasps")
    sp.add_argument("--pretrain-scenes", type=int, default=0, help="scenes of geometric pretraining labels")
    sp.add_argument("--n-objects", type=int, default=None, help="objects per online scene (default 10)")
    sp.add_argument("--gn", help="GN-lite checkpoint for greedy online grasps")
    sp.set_defaults(func=cmd_collect_grasps)

    sp = common(sub.add_parser("train-dipn", help="train the push prediction network"), "output checkpoint")
    sp.add_argument("--data", required=True, help="push records .jsonl")
    sp.set_defaults(func=cmd_train_dipn)

    sp = common(sub.add_parser("train-gn", help="train the grasp scorer"), "output checkpoint")
    sp.add_argument("--data", nargs="+", required=True, help="grasp sample .npz files")
    sp.set_defaults(func=cmd_train_gn)

    sp = common(sub.add_parser("eval-dipn", help="push prediction error on a dataset"), "output directory")
    sp.add_argument("--data", required=True, help="push records .jsonl")
    sp.add_argument("--predictor", choices=evaluation.PREDICTORS, default="dipn")
    sp.add_argument("--dipn", help="DIPN checkpoint (predictor dipn)")
    sp.set_defaults(func=cmd_eval_dipn)

    sp = common(sub.add_parser("run-episodes", help="run the planner on scene files"), "output directory")
    sp.add_argument("--scenes", required=True, help="scene directory or file; 'hard/' for the shipped set")
    sp.add_argument("--repeat", type=int, default=1)
    sp.add_argument("--predictor", choices=evaluation.PREDICTORS, default="dipn")
    sp.add_argument("--dipn", help="DIPN checkpoint (predictor dipn)")
    sp.add_argument("--gn", required=True, help="GN-lite checkpoint")
    sp.set_defaults(func=cmd_run_episodes)

    sp = common(sub.add_parser("report", help="aggregate episode logs into metric tables"), "output directory")
    sp.add_argument("--logs", nargs="+", required=True, help="episodes.jsonl files")
    sp.add_argument("--force", action="store_true", help="aggregate logs from different configs")
    sp.set_defaults(func=cmd_report)
    return p


def _thread_limit():
    n = os.environ.get("PUSHLAB_THREADS")
    if not n:
        return None
    try:
        k = int(n)
    except ValueError:
        raise UsageError(f"PUSHLAB_THREADS must be an integer, got {n!r}") from None
    if k < 1:
        raise UsageError("PUSHLAB_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=k)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        for name in ("n", "count", "repeat", "n_objects", "pretrain_scenes", "stride"):
            v = getattr(args, name, None)
            if v is not None and v < (1 if name in ("repeat", "count", "stride") else 0):
                raise UsageError(f"--{name.replace('_', '-')} out of range: {v}")
        cfg = resolve_config(args)
        limit = _thread_limit()
        try:
            args.func(args, cfg)
        finally:
            if limit is not None:
                limit.restore_original_limits()
    except UsageError as e:
        print(f"pushlab: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure: one line, no traceback
        print(f"pushlab: runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
