"""Push-interaction prediction network.

Given an observation and a candidate push, every object's post-push SE(2)
displacement is predicted from a direct term (pusher on object) plus a sum of
pairwise interaction terms (object on object), and a post-push image is
synthesized by moving the segmented instance masks.

Inputs are first mapped by the normalization transform so every push starts
at ``(40, 112)`` heading along +x.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import MLP, Tensor, no_grad
from .geometry import (
    NORMALIZED_PUSH,
    WORKSPACE,
    Pose2,
    invert,
    normalization_transform,
    rotate_vector,
    sample_nearest,
    transform_points,
    warp_mask,
)
from .physics import PushAction, PushRecord, apply_displacement
from .scene import CROP_SIZE, Observation, render

ARCH = "dipn-v1"
# finger movement space in the normalized frame, inclusive corners
PUSH_BOX = (40, 100, 65, 124)
GLOBAL_POOL = 8
MASK_POOL = 4


def push_image(size: int = WORKSPACE) -> np.ndarray:
    m = np.zeros((size, size), dtype=bool)
    x0, y0, x1, y1 = PUSH_BOX
    m[y0 : y1 + 1, x0 : x1 + 1] = True
    return m


_PUSH_IMAGE = push_image()


@dataclass
class DipnInputs:
    T: Pose2
    p_norm: Pose2
    M_p: np.ndarray
    M_I: np.ndarray
    masks: list[np.ndarray]  # 60x60 crops in the normalized frame
    centers: np.ndarray  # (n, 2) normalized-frame centers
    ids: list[int]
    world_centers: np.ndarray  # (n, 2)
    lost: list[bool] = field(default_factory=list)

    def __len__(self):
        return len(self.ids)


def _normalized_grid(size: int) -> np.ndarray:
    g = np.arange(size) + 0.5
    gx, gy = np.meshgrid(g, g)
    return np.stack([gx, gy], axis=-1)


_GRID = _normalized_grid(WORKSPACE)
_half = CROP_SIZE // 2
_CROP_OFFSETS = np.stack(np.meshgrid(np.arange(CROP_SIZE) - _half, np.arange(CROP_SIZE) - _half), axis=-1).astype(float)


def build_inputs(obs: Observation, push: PushAction) -> DipnInputs:
    """Map an observation and a push into the normalized push frame."""
    T = normalization_transform(push.start)
    Tinv = invert(T)
    size = obs.color.shape[0]
    grid = _GRID if size == WORKSPACE else _normalized_grid(size)
    M_I = sample_nearest(obs.color > 0, transform_points(Tinv, grid.reshape(-1, 2)).reshape(grid.shape))
    masks, centers, ids, lost, world = [], [], [], [], []
    for inst in obs.instances:
        c = transform_points(T, inst.center[None])[0]
        src = transform_points(Tinv, (c + _CROP_OFFSETS).reshape(-1, 2)).reshape(_CROP_OFFSETS.shape)
        m = sample_nearest(inst.mask, src)
        masks.append(m)
        centers.append(c)
        ids.append(inst.color_id)
        world.append(inst.center)
        lost.append(not m.any())
    return DipnInputs(
        T=T,
        p_norm=NORMALIZED_PUSH,
        M_p=_PUSH_IMAGE if size == WORKSPACE else push_image(size),
        M_I=M_I,
        masks=masks,
        centers=np.array(centers).reshape(-1, 2),
        ids=ids,
        world_centers=np.array(world).reshape(-1, 2),
        lost=lost,
    )


def max_pool(img: np.ndarray, k: int) -> np.ndarray:
    h, w = img.shape
    return img.reshape(h // k, k, w // k, k).max(axis=(1, 3))


@dataclass
class Features:
    """Network-ready arrays for one (observation, push) pair."""

    glob: np.ndarray  # (1568,)
    push: np.ndarray  # (3,)
    masks: np.ndarray  # (n, 225)
    centers: np.ndarray  # (n, 2)
    ids: np.ndarray  # (n,)


def features(inp: DipnInputs) -> Features:
    glob = np.concatenate([max_pool(inp.M_p, GLOBAL_POOL).ravel(), max_pool(inp.M_I, GLOBAL_POOL).ravel()])
    p = inp.p_norm
    push = np.array([p.x / WORKSPACE, p.y / WORKSPACE, p.theta / math.pi])
    if len(inp):
        masks = np.stack([max_pool(m, MASK_POOL).ravel() for m in inp.masks]).astype(float)
    else:
        masks = np.zeros((0, (CROP_SIZE // MASK_POOL) ** 2))
    centers = (inp.centers - WORKSPACE / 2.0) / (WORKSPACE / 2.0)
    return Features(glob.astype(float), push, masks, centers, np.asarray(inp.ids))


# --------------------------------------------------------------------------
# network


@dataclass
class DipnArch:
    push_layers: tuple = (8, 16)
    center_layers: tuple = (8, 16)
    global_layers: tuple = (256, 128)
    mask_layers: tuple = (64, 32)
    dt_layers: tuple = (128, 128)
    it_layers: tuple = (128, 128, 128)
    dec_layers: tuple = (256, 64, 32, 16, 3)
    global_dim: int = 2 * (WORKSPACE // GLOBAL_POOL) ** 2
    mask_dim: int = (CROP_SIZE // MASK_POOL) ** 2


class DipnParams:
    def __init__(self, seed: int = 0, arch: Optional[DipnArch] = None):
        self.arch = arch or DipnArch()
        a = self.arch
        rng = np.random.default_rng(seed)
        self.enc_push = MLP(3, a.push_layers, rng)
        self.enc_center = MLP(2, a.center_layers, rng)
        self.enc_global = MLP(a.global_dim, a.global_layers, rng)
        self.enc_mask = MLP(a.mask_dim, a.mask_layers, rng)
        e_p = a.push_layers[-1]
        e_i = a.mask_layers[-1] + a.center_layers[-1]
        self.dt = MLP(e_p + e_i, a.dt_layers, rng)
        self.it = MLP(e_p + 2 * e_i, a.it_layers, rng)
        self.dec = MLP(a.global_layers[-1] + a.dt_layers[-1], a.dec_layers, rng, final_relu=False)
        if a.dt_layers[-1] != a.it_layers[-1]:
            raise ValueError("direct and interactive terms must have equal width")

    def modules(self) -> dict[str, MLP]:
        return {
            "enc_push": self.enc_push,
            "enc_center": self.enc_center,
            "enc_global": self.enc_global,
            "enc_mask": self.enc_mask,
            "dt": self.dt,
            "it": self.it,
            "dec": self.dec,
        }

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for name, mlp in self.modules().items():
            for k, layer in enumerate(mlp.layers):
                out[f"{name}.{k}.w"] = layer.w
                out[f"{name}.{k}.b"] = layer.b
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def save(self, path, extra: Optional[dict] = None) -> None:
        header = {"arch": ARCH, "layers_config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.arch).items()}}
        header.update(extra or {})
        ad.save_checkpoint(path, self.named_parameters(), header)

    @classmethod
    def load(cls, path) -> "DipnParams":
        head, arrays = ad.load_checkpoint(path)
        if head.get("arch") != ARCH:
            raise ValueError(f"not a {ARCH} checkpoint")
        cfg = {k: tuple(v) if isinstance(v, list) else v for k, v in head["layers_config"].items()}
        params = cls(seed=0, arch=DipnArch(**cfg))
        for name, t in params.named_parameters().items():
            t.data = arrays[name].copy()
        return params


@dataclass
class Batch:
    glob: np.ndarray  # (B, G)
    push: np.ndarray  # (B, 3)
    masks: np.ndarray  # (N, M)
    centers: np.ndarray  # (N, 2)
    sample: np.ndarray  # (N,) owning sample of each object
    pair_i: np.ndarray  # receivers
    pair_j: np.ndarray  # senders
    members: np.ndarray  # (N, K) pair rows per receiver, sender-id order, -1 padded
    counts: list[int]


def make_batch(feats: Sequence[Features]) -> Batch:
    glob = np.stack([f.glob for f in feats])
    push = np.stack([f.push for f in feats])
    masks = np.concatenate([f.masks for f in feats])
    centers = np.concatenate([f.centers for f in feats])
    counts = [len(f.ids) for f in feats]
    sample = np.repeat(np.arange(len(feats)), counts)
    kmax = max([c - 1 for c in counts] + [0])
    members = -np.ones((len(sample), max(kmax, 1)), dtype=np.intp)
    pi, pj = [], []
    base = 0
    for f, n in zip(feats, counts):
        # interaction terms are summed in ascending sender-id order
        order = np.argsort(f.ids, kind="stable")
        for i in range(n):
            slot = 0
            for j in order:
                if j == i:
                    continue
                members[base + i, slot] = len(pi)
                pi.append(base + i)
                pj.append(base + j)
                slot += 1
        base += n
    return Batch(glob, push, masks, centers, sample, np.array(pi, dtype=np.intp), np.array(pj, dtype=np.intp), members, counts)


def forward(params: DipnParams, batch: Batch) -> Tensor:
    """Normalized-frame ``(x, y, theta)`` per object, shape ``(N, 3)``.

    Outputs are scaled: translation in push distances, rotation in units of pi.
    """
    e_ab = params.enc_global(Tensor(batch.glob))
    e_p = params.enc_push(Tensor(batch.push))
    e_i = ad.concat([params.enc_mask(Tensor(batch.masks)), params.enc_center(Tensor(batch.centers))])
    e_p_obj = ad.gather(e_p, batch.sample)
    direct = params.dt(ad.concat([e_p_obj, e_i]))
    if len(batch.pair_i):
        pair_in = ad.concat(
            [ad.gather(e_p, batch.sample[batch.pair_i]), ad.gather(e_i, batch.pair_i), ad.gather(e_i, batch.pair_j)]
        )
        inter = ad.sum_over_set(params.it(pair_in), batch.members)
        h = ad.add(direct, inter)
    else:
        h = direct
    return params.dec(ad.concat([ad.gather(e_ab, batch.sample), h]))


def forward_inputs(params: DipnParams, inp: DipnInputs) -> np.ndarray:
    with no_grad():
        return forward(params, make_batch([features(inp)])).data


# --------------------------------------------------------------------------
# prediction and synthesis


@dataclass
class PushPrediction:
    transforms: list[Pose2]  # world-frame displacement of each instance, rotation about its center
    image: np.ndarray  # synthesized color grid
    masks: list[np.ndarray]
    ids: list[int]
    centers: np.ndarray


def synthesize(obs: Observation, transforms: Sequence[Pose2]) -> PushPrediction:
    """Stamp every instance mask at its displaced pose, later ids on top."""
    size = obs.color.shape
    masks = [
        warp_mask(inst.mask, t, inst.center, size) for inst, t in zip(obs.instances, transforms)
    ]
    image = np.zeros(size, dtype=obs.color.dtype)
    order = np.argsort([inst.color_id for inst in obs.instances], kind="stable")
    for k in order:
        image[masks[k]] = obs.instances[k].color_id
    centers = np.array([inst.center for inst in obs.instances]).reshape(-1, 2)
    return PushPrediction(list(transforms), image, masks, [i.color_id for i in obs.instances], centers)


def outputs_to_world(out: np.ndarray, T: Pose2, distance: float) -> list[Pose2]:
    t = rotate_vector(-T.theta, out[:, :2] * distance)
    return [Pose2(float(a), float(b), float(th) * math.pi) for (a, b), th in zip(t, out[:, 2])]


def world_to_targets(transforms: Sequence[Pose2], T: Pose2, distance: float) -> np.ndarray:
    d = np.array([[t.x, t.y] for t in transforms]).reshape(-1, 2)
    t = rotate_vector(T.theta, d) / distance
    th = np.array([t.theta for t in transforms]) / math.pi
    return np.column_stack([t, th])


def predict(params: DipnParams, obs: Observation, push: PushAction) -> PushPrediction:
    return predict_many(params, obs, [push])[0]


def predict_many(params: DipnParams, obs: Observation, pushes: Sequence[PushAction], batch_size: int = 64) -> list[PushPrediction]:
    """Batched predictions for many candidate pushes on one observation."""
    if not obs.instances:
        return [synthesize(obs, []) for _ in pushes]
    preds = []
    for lo in range(0, len(pushes), batch_size):
        chunk = pushes[lo : lo + batch_size]
        inputs = [build_inputs(obs, p) for p in chunk]
        with no_grad():
            out = forward(params, make_batch([features(i) for i in inputs])).data
        n = len(obs.instances)
        for k, (p, inp) in enumerate(zip(chunk, inputs)):
            tr = outputs_to_world(out[k * n : (k + 1) * n], inp.T, p.distance)
            preds.append(synthesize(obs, tr))
    return preds


def anchored_displacement(pose: Pose2, disp: Pose2, anchor) -> Pose2:
    """Re-express a centroid displacement as a rotation about ``anchor``
    followed by a translation, so that moving the anchor point reproduces
    the body motion exactly."""
    c = np.array([pose.x, pose.y])
    a = np.asarray(anchor, dtype=float)
    moved = c + np.array([disp.x, disp.y]) + rotate_vector(disp.theta, a - c)
    t = moved - a
    return Pose2(float(t[0]), float(t[1]), disp.theta)


def record_targets(record: PushRecord, obs: Observation) -> list[Pose2]:
    """Ground-truth displacement of each observed instance about its center."""
    by_color = {b.spec.color_id: (b, t) for b, t in zip(record.scene_before.bodies, record.transforms)}
    out = []
    for inst in obs.instances:
        body, disp = by_color[inst.color_id]
        out.append(anchored_displacement(body.pose, disp, inst.center))
    return out


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    momentum: float = 0.9
    optimizer: str = "adam"
    seed: int = 0
    shuffle: bool = True
    max_steps: Optional[int] = None
    mirror: bool = True
    lr_decay: float = 0.93


@dataclass
class Example:
    feats: Features
    target: np.ndarray  # (n, 3) scaled normalized-frame targets


def make_example(record: PushRecord, obs: Optional[Observation] = None) -> Example:
    obs = render(record.scene_before) if obs is None else obs
    inp = build_inputs(obs, record.push)
    target = world_to_targets(record_targets(record, obs), inp.T, record.push.distance)
    return Example(features(inp), target)


def mirror_example(ex: Example) -> Example:
    """Reflect across the push axis: the normalized push is its own mirror image."""
    f = ex.feats
    g = GLOBAL_POOL
    side = WORKSPACE // g
    glob = f.glob.copy()
    glob[side * side :] = f.glob[side * side :].reshape(side, side)[::-1].ravel()
    k = CROP_SIZE // MASK_POOL
    masks = f.masks.reshape(-1, k, k)[:, ::-1].reshape(len(f.masks), -1)
    centers = f.centers * np.array([1.0, -1.0])
    target = ex.target * np.array([1.0, -1.0, -1.0])
    return Example(Features(glob, f.push.copy(), masks, centers, f.ids), target)


def batch_loss(params: DipnParams, examples: Sequence[Example]) -> Tensor:
    """Per-object summed SmoothL1, averaged over the samples in the batch."""
    batch = make_batch([e.feats for e in examples])
    out = forward(params, batch)
    target = np.concatenate([e.target for e in examples])
    return ad.scale(ad.smooth_l1(out, target), 1.0 / len(examples))


def train(params: DipnParams, examples: Sequence[Example], config: TrainConfig = TrainConfig()) -> list[float]:
    """Fit in place; returns the mean training loss of every epoch."""
    examples = [e for e in examples if len(e.feats.ids)]
    if not examples:
        raise ValueError("empty training set")
    if config.mirror:
        examples = examples + [mirror_example(e) for e in examples]
    rng = np.random.default_rng(config.seed)
    opt = ad.make_optimizer(config.optimizer, params.parameters(), config.lr, config.momentum)
    curve = []
    steps = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(examples)) if config.shuffle else np.arange(len(examples))
        total, count = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            chunk = [examples[k] for k in order[lo : lo + config.batch_size]]
            loss = batch_loss(params, chunk)
            ad.backward(loss)
            opt.step()
            total += float(loss.data) * len(chunk)
            count += len(chunk)
            steps += 1
            if config.max_steps is not None and steps >= config.max_steps:
                break
        curve.append(total / count)
        if config.lr_decay != 1.0:
            opt.lr *= config.lr_decay
        if config.max_steps is not None and steps >= config.max_steps:
            break
    return curve


# --------------------------------------------------------------------------
# prediction dumps


def write_ppm(path, color: np.ndarray) -> None:
    """Binary PPM with a fixed palette keyed by color id."""
    rng = np.random.default_rng(12345)
    palette = rng.integers(40, 256, size=(int(color.max()) + 1, 3)).astype(np.uint8)
    palette[0] = 0
    rgb = palette[color]
    h, w = color.shape
    Path(path).write_bytes(f"P6 {w} {h} 255\n".encode() + rgb.tobytes())


def dump_prediction(pred: PushPrediction, stem) -> None:
    stem = Path(stem)
    write_ppm(stem.with_suffix(".ppm"), pred.image)
    data = {
        "ids": pred.ids,
        "transforms": [[t.x, t.y, math.degrees(t.theta)] for t in pred.transforms],
    }
    stem.with_suffix(".json").write_text(json.dumps(data, indent=1))
