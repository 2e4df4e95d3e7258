"""Training recipe: min-max normalization, teacher-forced unrolling with a
windowed MSE objective, ADAM with global-norm clipping, one update per
scene (no batching; scenes have varying pedestrian counts), 80/20
train/validation split with best-validation checkpointing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .autodiff import GradientStore, Tape
from .errors import ContractError, DataFormatError, NumericError
from .model import ModelParams, init_params, make_dropout_masks, unroll

FRAME_INTERVAL = 0.4  # seconds per step at 2.5 frames per second


@dataclass
class NormStats:
    """Per-axis min/max fitted on the training split."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def apply(self, positions):
        """Affine map sending [min, max] to [-1, 1] per axis.

        Values outside the fitted range keep the same linear map (no
        clamping), so invert(apply(x)) == x everywhere.
        """
        p = np.asarray(positions, dtype=np.float64)
        out = np.empty_like(p)
        out[..., 0] = 2.0 * (p[..., 0] - self.xmin) / (self.xmax - self.xmin) - 1.0
        out[..., 1] = 2.0 * (p[..., 1] - self.ymin) / (self.ymax - self.ymin) - 1.0
        return out

    def invert(self, positions):
        p = np.asarray(positions, dtype=np.float64)
        out = np.empty_like(p)
        out[..., 0] = (p[..., 0] + 1.0) * (self.xmax - self.xmin) / 2.0 + self.xmin
        out[..., 1] = (p[..., 1] + 1.0) * (self.ymax - self.ymin) / 2.0 + self.ymin
        return out


def minmax_fit(scenes) -> NormStats:
    """Fit per-axis min/max over every present position of the scenes."""
    xs, ys = [], []
    for scene in scenes:
        pos = scene.positions[scene.presence]
        if pos.size:
            xs.append(pos[:, 0])
            ys.append(pos[:, 1])
    if not xs:
        raise DataFormatError("no positions to fit normalization on")
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    stats = NormStats(float(x.min()), float(x.max()), float(y.min()), float(y.max()))
    if stats.xmax <= stats.xmin or stats.ymax <= stats.ymin:
        raise DataFormatError(
            f"degenerate normalization axis: x [{stats.xmin}, {stats.xmax}], "
            f"y [{stats.ymin}, {stats.ymax}]"
        )
    return stats


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 0.001
    clip: float = 10.0
    t_obs: int = 8
    t_pred: int = 12
    loss_window: str = "pred"
    dropout: float = 0.2
    seed: int = 0
    val_frac: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.loss_window not in ("pred", "full"):
            raise ContractError(f"loss_window must be pred|full, got {self.loss_window!r}")


class OptimizerState:
    """Per-parameter first/second ADAM moments plus the step counter."""

    def __init__(self, params: ModelParams):
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.step = 0


def adam_step(params: ModelParams, grads: GradientStore, opt: OptimizerState,
              lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected ADAM update, in place on the parameter tensors."""
    opt.step += 1
    for name, p in params.tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"gradient {name}: shape {g.shape} vs param {p.shape}")
        K.adam_update(p, g, opt.m[name], opt.v[name], lr, beta1, beta2, eps, opt.step)


def clip_global_norm(grads: GradientStore, max_norm=10.0):
    """Scale all gradients jointly so their global L2 norm is <= max_norm.

    Returns the pre-clip norm. Direction is preserved exactly (a single
    scalar multiplies every entry).
    """
    total = 0.0
    for a in grads.arrays():
        total += K.sqsum(a)
    norm = float(np.sqrt(total))
    if not np.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    if norm > max_norm:
        s = max_norm / norm
        for a in grads.arrays():
            K.scale(a, s)
    return norm


def window_steps(t_obs, t_pred, window):
    """0-based prediction steps counted by the loss."""
    total = t_obs + t_pred
    if window == "pred":
        steps = list(range(t_obs, total))
    elif window == "full":
        steps = list(range(1, total))
    else:
        raise ContractError(f"unknown loss window {window!r}")
    if not steps:
        raise ContractError("empty loss window")
    return steps


def mse_loss(pred, truth, t_obs, t_pred, window="pred"):
    """Windowed mean squared error over pedestrians, steps and both axes.

    pred/truth are (N, T, 2) arrays in normalized units; pred needs valid
    entries at every windowed step. Plain numpy; the tape twin used for
    training is scene_loss below.
    """
    steps = window_steps(t_obs, t_pred, window)
    d = np.asarray(pred)[:, steps] - np.asarray(truth)[:, steps]
    return float(np.mean(d * d))


def scene_loss(tape: Tape, bound, variant, pos_norm, cfg: TrainConfig, masks_fn=None):
    """Teacher-forced unroll of one scene plus the windowed MSE, on tape."""
    preds = unroll(tape, bound, variant, pos_norm, cfg.t_obs, "teacher", masks_fn)
    steps = window_steps(cfg.t_obs, cfg.t_pred, cfg.loss_window)
    stacked = tape.concat([preds[s] for s in steps])
    target = tape.leaf(np.concatenate([pos_norm[:, s] for s in steps], axis=-1))
    return tape.mse(stacked, target)


def full_presence_positions(scene):
    """(M, T, 2) positions of the pedestrians present at every step."""
    keep = scene.presence.all(axis=1)
    if not keep.any():
        return None
    return np.ascontiguousarray(scene.positions[keep])


@dataclass
class TrainResult:
    params: ModelParams
    norm: NormStats
    config: TrainConfig
    variant: str
    history: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    train_fingerprints: set = field(default_factory=set)
    updates: int = 0  # optimizer steps; one per scene per epoch

    def best_epoch(self):
        vals = [v for _, _, v in self.history]
        if all(np.isnan(v) for v in vals):
            return len(self.history) - 1
        return int(np.nanargmin(vals))


def split_train_val(n_scenes, val_frac, seed):
    """Deterministic disjoint index split; validation gets round(frac*n)."""
    rng = np.random.default_rng([seed, 91])
    order = rng.permutation(n_scenes)
    n_val = int(round(val_frac * n_scenes))
    if n_val >= n_scenes:
        n_val = n_scenes - 1
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


def train(config: TrainConfig, scenes, variant) -> TrainResult:
    """Run the full recipe and return the best-validation parameters.

    One optimizer update per scene; scene order reshuffled each epoch from
    the seed; dropout masks come from a separate seeded stream, so a run
    is bit-reproducible for a fixed seed and backend.
    """
    total = config.t_obs + config.t_pred
    usable = []
    for scene in scenes:
        if scene.length != total:
            raise ContractError(
                f"scene length {scene.length} != t_obs+t_pred {total}"
            )
        pos = full_presence_positions(scene)
        if pos is not None:
            usable.append((scene, pos))
    if not usable:
        raise DataFormatError("no training scene with a fully-present pedestrian")

    train_idx, val_idx = split_train_val(len(usable), config.val_frac, config.seed)
    train_scenes = [usable[i] for i in train_idx]
    val_scenes = [usable[i] for i in val_idx]
    norm = minmax_fit([s for s, _ in train_scenes])
    norm_train = [norm.apply(pos) for _, pos in train_scenes]
    norm_val = [norm.apply(pos) for _, pos in val_scenes]

    params = init_params(variant, config.seed)
    opt = OptimizerState(params)
    shuffle_rng = np.random.default_rng([config.seed, 7])
    dropout_rng = np.random.default_rng([config.seed, 13])

    result = TrainResult(params, norm, config, variant)
    result.train_fingerprints = {s.fingerprint() for s, _ in train_scenes}
    best_val = np.inf
    best_params = params.copy()

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(norm_train))
        losses = []
        for i in order:
            pos_norm = norm_train[i]
            n = pos_norm.shape[0]
            tape = Tape()
            bound = params.bind(tape)
            if config.dropout > 0.0:
                masks_fn = lambda s: make_dropout_masks(  # noqa: E731
                    dropout_rng, variant, n, config.dropout
                )
            else:
                masks_fn = None
            loss = scene_loss(tape, bound, variant, pos_norm, config, masks_fn)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            grads = tape.backward(loss)
            clip_global_norm(grads, config.clip)
            adam_step(params, grads, opt, config.lr, config.beta1, config.beta2, config.eps)
            losses.append(value)
        train_loss = float(np.mean(losses))
        val_loss = evaluate_loss(params, norm_val, variant, config)
        result.history.append((epoch, train_loss, val_loss))
        if not np.isnan(val_loss) and val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
    if np.isinf(best_val):
        best_params = params.copy()
    result.params = best_params
    result.updates = opt.step
    return result


def evaluate_loss(params, norm_positions, variant, config):
    """Mean teacher-forced windowed loss over scenes, dropout off."""
    if not norm_positions:
        return float("nan")
    losses = []
    for pos_norm in norm_positions:
        tape = Tape()
        bound = params.bind_const(tape)
        loss = scene_loss(tape, bound, variant, pos_norm, config, None)
        losses.append(float(loss.data))
    return float(np.mean(losses))


def write_history(path, history):
    """Training-history CSV: epoch,train_loss,val_loss at 17 digits."""
    lines = ["epoch,train_loss,val_loss"]
    for epoch, tr, va in history:
        lines.append(
            f"{epoch},{format(tr, '.17g')},{format(va, '.17g')}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
