"""GN-lite: grasp success scorer over a gripper-aligned local window.

The window is 12 x 58 samples (across x along the gripper axis), read from
the observation rotated so that the gripper axis is horizontal. Rows are
spaced 2 cells apart so the window spans the full 24-cell finger length;
columns are 1 cell apart and span both fingers at full opening. Two
channels (occupancy, height) feed a dense network ``[512, 128, 32, 1]``
whose sigmoid output is the predicted probability of a successful grasp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .autodiff import MLP, Tensor
from .physics import DEFAULT_GRIPPER, GRASP_ANGLES, GraspAction, GripperModel, adjudicate_grasp
from .sampling import grasp_grid, grid_to_actions
from .scene import Observation, Scene

ARCH = "gnlite-v1"
WINDOW = (12, 58)
ROW_PITCH = 2.0
LAYERS = (512, 128, 32, 1)
_PAD = 40


def window_offsets(theta: float, window: tuple[int, int] = WINDOW) -> np.ndarray:
    """World offsets of window cell centers for a gripper at angle ``theta``,
    snapped to 1e-9 so offsets on a cell boundary are exact."""
    rows, cols = window
    v, u = np.meshgrid(
        (np.arange(rows) - rows / 2 + 0.5) * ROW_PITCH, np.arange(cols) - cols / 2 + 0.5, indexing="ij"
    )
    c, s = math.cos(theta), math.sin(theta)
    return np.round(np.stack([u * c - v * s, u * s + v * c], axis=-1).reshape(-1, 2), 9)


_OFFSETS = [window_offsets(t) for t in GRASP_ANGLES]


def _channels(obs: Observation) -> np.ndarray:
    occ = (obs.color > 0).astype(np.uint8)
    height = np.clip(np.rint(obs.height), 0, 255).astype(np.uint8)
    return np.stack([occ, height])


def _flat_offsets(k: int, width: int) -> np.ndarray:
    """Flat index offsets of window cells around a cell-centered grasp."""
    d = np.floor(0.5 + _OFFSETS[k]).astype(int)
    return d[:, 1] * width + d[:, 0]


def _fast_rows(grid: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Rows centered on a cell inside the image, readable through a fixed table."""
    cx, cy = np.floor(grid[:, 0]), np.floor(grid[:, 1])
    ok = (grid[:, 0] - cx == 0.5) & (grid[:, 1] - cy == 0.5)
    return ok & (cx >= 0) & (cy >= 0) & (cx < shape[1]) & (cy < shape[0])


def window_index(grid: np.ndarray, shape: tuple[int, int]) -> Optional[np.ndarray]:
    """Flat indices into the padded image of every window cell, ``(N, cells)``;
    ``None`` unless every row is cell-centered inside the image."""
    if not len(grid) or not _fast_rows(grid, shape).all():
        return None
    w = shape[1] + 2 * _PAD
    base = (grid[:, 1].astype(int) + _PAD) * w + grid[:, 0].astype(int) + _PAD
    ks = grid[:, 2].astype(int)
    idx = np.empty((len(grid), WINDOW[0] * WINDOW[1]), dtype=np.int32)
    for k in np.unique(ks):
        rows = ks == k
        idx[rows] = base[rows, None] + _flat_offsets(k, w)[None]
    return idx


def padded_occupancy(color: np.ndarray) -> np.ndarray:
    """Flattened zero-padded occupancy, the image that ``window_index`` reads."""
    return np.pad((color > 0).astype(np.uint8), _PAD).ravel()


def extract_windows(obs: Observation, grid: np.ndarray, window: tuple[int, int] = WINDOW) -> np.ndarray:
    """Aligned windows for candidate rows ``(x, y, angle index)``.

    Returns uint8 ``(N, 2 * rows * cols)``; cells outside the workspace are 0.
    """
    chans = _channels(obs)
    padded = np.pad(chans, ((0, 0), (_PAD, _PAD), (_PAD, _PAD)))
    h, w = padded.shape[1:]
    n_cells = window[0] * window[1]
    out = np.zeros((len(grid), 2 * n_cells), dtype=np.uint8)
    if not len(grid):
        return out
    flat = padded.reshape(2, -1)
    fast = _fast_rows(grid, obs.color.shape) if window == WINDOW else np.zeros(len(grid), dtype=bool)
    if fast.any():
        idx = window_index(grid[fast], obs.color.shape)
        out[fast, :n_cells] = flat[0][idx]
        out[fast, n_cells:] = flat[1][idx]
    slow = np.nonzero(~fast)[0]
    ks = grid[slow, 2].astype(int)
    for k in np.unique(ks):
        rows = slow[ks == k]
        offs = _OFFSETS[k] if window == WINDOW else window_offsets(GRASP_ANGLES[k], window)
        pts = grid[rows, None, :2] + offs[None]
        xi = np.floor(pts[..., 0]).astype(int) + _PAD
        yi = np.floor(pts[..., 1]).astype(int) + _PAD
        np.clip(xi, 0, w - 1, out=xi)
        np.clip(yi, 0, h - 1, out=yi)
        out[rows, :n_cells] = padded[0][yi, xi]
        out[rows, n_cells:] = padded[1][yi, xi]
    return out


class GraspScorerParams:
    def __init__(self, seed: int = 0, window: tuple[int, int] = WINDOW, layers: Sequence[int] = LAYERS):
        self.window = tuple(window)
        self.layers = tuple(layers)
        rng = np.random.default_rng(seed)
        self.mlp = MLP(2 * window[0] * window[1], layers, rng, final_relu=False)

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters()

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for k, layer in enumerate(self.mlp.layers):
            out[f"mlp.{k}.w"] = layer.w
            out[f"mlp.{k}.b"] = layer.b
        return out

    def logits(self, windows: np.ndarray) -> Tensor:
        return self.mlp(Tensor(np.asarray(windows, dtype=np.float64)))

    def predict_windows(self, windows: np.ndarray, batch: int = 4096) -> np.ndarray:
        """Scores in (0, 1). Inference runs in float32 on transposed weights."""
        layers = [(l.w.data.T.astype(np.float32), l.b.data.astype(np.float32)) for l in self.mlp.layers]
        n = self.window[0] * self.window[1]
        # identical channels: fold the first layer and multiply once on half the input
        folded = (layers[0][0][:n] + layers[0][0][n:], layers[0][1])
        out = np.empty(len(windows))
        for lo in range(0, len(windows), batch):
            x = windows[lo : lo + batch]
            if np.array_equal(x[:, :n], x[:, n:]):
                h = np.asarray(x[:, :n], dtype=np.float32)
                first = folded
            else:
                h = np.asarray(x, dtype=np.float32)
                first = layers[0]
            for k, (w, b) in enumerate([first, *layers[1:]]):
                h = h @ w + b
                if k < len(layers) - 1:
                    np.maximum(h, 0.0, out=h)
            z = h[:, 0].astype(np.float64)
            out[lo : lo + batch] = 0.5 * (1.0 + np.tanh(0.5 * z))
        return out

    def save(self, path, extra: Optional[dict] = None) -> None:
        header = {"arch": ARCH, "window": list(self.window), "layers_config": list(self.layers)}
        header.update(extra or {})
        ad.save_checkpoint(path, self.named_parameters(), header)

    @classmethod
    def load(cls, path) -> "GraspScorerParams":
        head, arrays = ad.load_checkpoint(path)
        if head.get("arch") != ARCH:
            raise ValueError(f"not a {ARCH} checkpoint")
        params = cls(seed=0, window=tuple(head["window"]), layers=tuple(head["layers_config"]))
        for name, t in params.named_parameters().items():
            t.data = arrays[name].copy()
        return params


def score_grid(params: GraspScorerParams, obs: Observation, grid: np.ndarray) -> np.ndarray:
    return params.predict_windows(extract_windows(obs, grid, params.window))


def score(params: GraspScorerParams, obs: Observation, g: GraspAction) -> float:
    k = _angle_index(g.center.theta)
    return float(score_grid(params, obs, np.array([[g.center.x, g.center.y, k]]))[0])


def _angle_index(theta: float) -> int:
    k = int(round(theta / (2 * math.pi / 16))) % 16
    if abs(math.remainder(theta - GRASP_ANGLES[k], 2 * math.pi)) > 1e-6:
        raise ValueError(f"grasp angle {theta} is not one of the 16 orientations")
    return k


def score_map(params: GraspScorerParams, obs: Observation, stride: int = 4) -> np.ndarray:
    """Per-rotation score grids ``(16, H // stride, W // stride)``; NaN off-band."""
    grid = grasp_grid(obs, stride)
    h, w = obs.color.shape
    out = np.full((16, -(-h // stride), -(-w // stride)), np.nan)
    if len(grid):
        s = score_grid(params, obs, grid)
        out[grid[:, 2].astype(int), (grid[:, 1] // stride).astype(int), (grid[:, 0] // stride).astype(int)] = s
    return out


# --------------------------------------------------------------------------
# samples and labels


@dataclass
class GraspSamples:
    windows: np.ndarray  # uint8 (N, D)
    labels: np.ndarray  # (N,) in {0, 1}
    source: np.ndarray  # (N,) "pretrain" | "online"

    def __len__(self):
        return len(self.labels)

    @classmethod
    def empty(cls, dim: int = 2 * WINDOW[0] * WINDOW[1]) -> "GraspSamples":
        return cls(np.zeros((0, dim), dtype=np.uint8), np.zeros(0), np.zeros(0, dtype="<U8"))

    @classmethod
    def concat(cls, parts: Sequence["GraspSamples"]) -> "GraspSamples":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.windows for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.source for p in parts]),
        )

    def subset(self, source: str) -> "GraspSamples":
        keep = self.source == source
        return GraspSamples(self.windows[keep], self.labels[keep], self.source[keep])


def geometric_labels(scene: Scene, grid: np.ndarray, grip: GripperModel = DEFAULT_GRIPPER) -> np.ndarray:
    """1 where the grasp would close on an object without a finger collision."""
    return np.array([float(adjudicate_grasp(scene, g, grip).success) for g in grid_to_actions(grid)])


def pretrain_labels(
    scene: Scene,
    obs: Observation,
    grid: np.ndarray,
    grip: GripperModel = DEFAULT_GRIPPER,
) -> GraspSamples:
    """Self-labeled samples: geometry only, nothing is executed."""
    labels = geometric_labels(scene, grid, grip)
    return GraspSamples(extract_windows(obs, grid), labels, np.full(len(grid), "pretrain"))


# --------------------------------------------------------------------------
# training


@dataclass
class GraspTrainConfig:
    """Fit settings. ``balance`` oversamples positives to half of each epoch;
    the ``mine_*`` fields drive the hard-negative rounds run by
    :func:`pushlab.planner.train_grasp_scorer`."""

    epochs: int = 6
    online_epochs: int = 4
    batch_size: int = 128
    lr: float = 1e-3
    momentum: float = 0.9
    optimizer: str = "adam"
    seed: int = 0
    balance: bool = False
    mine_rounds: int = 4
    mine_scenes: int = 150
    mine_top: int = 100


def _fit(params: GraspScorerParams, samples: GraspSamples, epochs: int, cfg: GraspTrainConfig, rng, curve):
    opt = ad.make_optimizer(cfg.optimizer, params.parameters(), cfg.lr, cfg.momentum)
    idx = np.arange(len(samples))
    if cfg.balance:
        pos = idx[samples.labels > 0.5]
        neg = idx[samples.labels <= 0.5]
        if len(pos) and len(neg) and len(pos) < len(neg):
            idx = np.concatenate([neg, np.resize(rng.permutation(pos), len(neg))])
    for _ in range(epochs):
        order = rng.permutation(idx)
        total = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            rows = np.sort(order[lo : lo + cfg.batch_size])
            loss = ad.bce_with_logits(params.logits(samples.windows[rows]), samples.labels[rows])
            ad.backward(loss)
            opt.step()
            total += float(loss.data) * len(rows)
        curve.append(total / len(order))


def train(params: GraspScorerParams, samples: GraspSamples, config: GraspTrainConfig = GraspTrainConfig()) -> list[float]:
    """Binary cross-entropy fit: pretrain samples first, then online samples."""
    if not len(samples):
        raise ValueError("empty sample set")
    rng = np.random.default_rng(config.seed)
    curve: list[float] = []
    pre = samples.subset("pretrain")
    online = samples.subset("online")
    if len(pre):
        _fit(params, pre, config.epochs, config, rng, curve)
    if len(online):
        _fit(params, online, config.online_epochs if len(pre) else config.epochs, config, rng, curve)
    return curve


def accuracy(params: GraspScorerParams, samples: GraspSamples, threshold: float = 0.5) -> float:
    pred = params.predict_windows(samples.windows) >= threshold
    return float(np.mean(pred == (samples.labels > 0.5)))


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve via the rank-sum statistic."""
    labels = np.asarray(labels) > 0.5
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
