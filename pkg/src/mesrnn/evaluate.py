"""Autoregressive rollout, displacement metrics, the leave-one-out
protocol, and result export (CSV / JSON / SVG).

Metrics follow the usual trajectory-forecasting definitions: ADE is the
mean Euclidean distance over the prediction window, FDE the mean distance
at its final step; observed steps never count. Pedestrians that lack
ground truth at any step of the prediction window are excluded from the
averages (the rollout still predicts them).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .errors import ContractError, PresenceError, ShapeError
from .model import ModelParams, unroll
from .training import NormStats, TrainConfig, train


@dataclass
class PredictionResult:
    """Predictions for one scene, world and normalized units."""

    scene: object
    ped_rows: np.ndarray          # row indices into the scene arrays
    ped_ids: list
    pred_world: np.ndarray        # (M, t_pred, 2)
    pred_norm: np.ndarray
    truth_world: np.ndarray       # (M, t_pred, 2), NaN where absent
    truth_norm: np.ndarray
    truth_ok: np.ndarray          # (M,) full ground truth over the window
    t_obs: int
    t_pred: int


def rollout(params: ModelParams, scene, norm: NormStats, t_obs=8, t_pred=12) -> PredictionResult:
    """Closed-loop prediction for every pedestrian observed throughout.

    Ground truth drives the model through the observed period; from then
    on the model's own outputs (for all pedestrians jointly) feed the
    features of the next step. Dropout is off. Outputs are un-normalized
    back to world units.
    """
    total = t_obs + t_pred
    if scene.length < total:
        raise ContractError(f"scene length {scene.length} < t_obs+t_pred = {total}")
    rows = np.flatnonzero(scene.presence[:, :t_obs].all(axis=1))
    if len(rows) == 0:
        raise PresenceError("no pedestrian present through the observed period")
    positions = scene.positions[rows][:, :total]
    presence = scene.presence[rows][:, :total]
    truth_norm = norm.apply(np.where(presence[:, :, None], positions, 0.0))
    tape = Tape()
    # parameters as constants: inference does no gradient work
    bound = {name: tape.leaf(a) for name, a in params.tensors.items()}
    preds = unroll(tape, bound, params.variant, truth_norm, t_obs, "auto", None)
    pred_norm = np.stack([preds[s].data for s in range(t_obs, total)], axis=1)
    truth_ok = presence[:, t_obs:total].all(axis=1)
    tw = np.where(presence[:, t_obs:, None], positions[:, t_obs:], np.nan)
    return PredictionResult(
        scene=scene,
        ped_rows=rows,
        ped_ids=[scene.ped_ids[r] for r in rows],
        pred_world=norm.invert(pred_norm),
        pred_norm=pred_norm,
        truth_world=tw,
        truth_norm=norm.apply(np.where(np.isnan(tw), 0.0, tw)),
        truth_ok=truth_ok,
        t_obs=t_obs,
        t_pred=t_pred,
    )


def ade(pred, truth):
    """Mean L2 distance over pedestrians and every prediction step."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 3 or pred.shape[-1] != 2:
        raise ShapeError(f"ade: prediction {pred.shape} vs truth {truth.shape}")
    return float(np.mean(np.linalg.norm(pred - truth, axis=-1)))


def fde(pred, truth):
    """Mean L2 distance at the final prediction step only."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 3 or pred.shape[-1] != 2:
        raise ShapeError(f"fde: prediction {pred.shape} vs truth {truth.shape}")
    return float(np.mean(np.linalg.norm(pred[:, -1] - truth[:, -1], axis=-1)))


@dataclass
class MetricsRow:
    split: str
    variant: str
    ade_norm: float
    fde_norm: float
    ade_world: float
    fde_world: float
    n_scenes: int
    n_peds: int
    seed: int


def score_results(results, split, variant, seed) -> MetricsRow:
    """Pool eligible (scene, pedestrian) pairs into one metrics row."""
    pw, tw, pn, tn = [], [], [], []
    n_scenes = 0
    for res in results:
        ok = res.truth_ok
        if not ok.any():
            continue
        n_scenes += 1
        pw.append(res.pred_world[ok])
        tw.append(res.truth_world[ok])
        pn.append(res.pred_norm[ok])
        tn.append(res.truth_norm[ok])
    if not pw:
        return MetricsRow(split, variant, np.nan, np.nan, np.nan, np.nan, 0, 0, seed)
    pw, tw = np.concatenate(pw), np.concatenate(tw)
    pn, tn = np.concatenate(pn), np.concatenate(tn)
    return MetricsRow(
        split, variant,
        ade(pn, tn), fde(pn, tn), ade(pw, tw), fde(pw, tw),
        n_scenes, pw.shape[0], seed,
    )


def evaluate_scenes(params, scenes, norm, t_obs, t_pred, workers=1):
    """Rollout over scenes (read-only fan-out), reduced in scene order."""
    eligible = []
    for scene in scenes:
        if scene.length >= t_obs + t_pred and scene.presence[:, :t_obs].all(axis=1).any():
            eligible.append(scene)
    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(
                pool.map(lambda s: rollout(params, s, norm, t_obs, t_pred), eligible)
            )
    return [rollout(params, s, norm, t_obs, t_pred) for s in eligible]


def leave_one_out(splits: dict, config: TrainConfig, variant, workers=1):
    """Train on the union of all other splits, test on each held-out one.

    Returns (rows, trained) where rows ends with the cross-split average.
    Training and normalization fitting never see the held-out scenes; this
    is asserted via scene fingerprints.
    """
    if len(splits) < 2:
        raise ContractError("leave-one-out needs at least 2 named splits")
    rows = []
    trained = {}
    for held_out in splits:
        train_scenes = [s for name, ss in splits.items() if name != held_out for s in ss]
        if not train_scenes or not splits[held_out]:
            raise ContractError(f"empty split in leave-one-out ({held_out})")
        result = train(config, train_scenes, variant)
        held_prints = {s.fingerprint() for s in splits[held_out]}
        overlap = held_prints & result.train_fingerprints
        if overlap:
            raise ContractError(
                f"leave-one-out leakage: {len(overlap)} held-out scene(s) in training"
            )
        results = evaluate_scenes(
            result.params, splits[held_out], result.norm, config.t_obs, config.t_pred,
            workers,
        )
        rows.append(score_results(results, held_out, variant, config.seed))
        trained[held_out] = result
    rows.append(average_row(rows, variant, config.seed))
    return rows, trained


def run_experiment(train_scenes, test_scenes, variant, config: TrainConfig,
                   split="test") -> MetricsRow:
    """Train on one scene list, score on another; one row of a trend table."""
    result = train(config, train_scenes, variant)
    results = evaluate_scenes(
        result.params, test_scenes, result.norm, config.t_obs, config.t_pred
    )
    return score_results(results, split, variant, config.seed)


def average_row(rows, variant, seed) -> MetricsRow:
    """Unweighted mean of the per-split metric rows."""
    return MetricsRow(
        "average", variant,
        float(np.mean([r.ade_norm for r in rows])),
        float(np.mean([r.fde_norm for r in rows])),
        float(np.mean([r.ade_world for r in rows])),
        float(np.mean([r.fde_world for r in rows])),
        int(sum(r.n_scenes for r in rows)),
        int(sum(r.n_peds for r in rows)),
        seed,
    )


# ---- export ---------------------------------------------------------------

METRICS_HEADER = "split,variant,ade_norm,fde_norm,ade_world,fde_world,n_scenes,n_peds,seed"


def _g17(x):
    return format(float(x), ".17g")


def write_metrics_csv(rows, path):
    lines = [METRICS_HEADER]
    for r in rows:
        lines.append(
            f"{r.split},{r.variant},{_g17(r.ade_norm)},{_g17(r.fde_norm)},"
            f"{_g17(r.ade_world)},{_g17(r.fde_world)},{r.n_scenes},{r.n_peds},{r.seed}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _trajectory_records(results):
    for si, res in enumerate(results):
        scene = res.scene
        for m, ped in enumerate(res.ped_ids):
            row = res.ped_rows[m]
            for s in range(res.t_obs):
                if scene.presence[row, s]:
                    x, y = scene.positions[row, s]
                    yield si, ped, s, "obs", x, y
            for k in range(res.t_pred):
                s = res.t_obs + k
                if scene.presence[row, s]:
                    x, y = scene.positions[row, s]
                    yield si, ped, s, "truth", x, y
                x, y = res.pred_world[m, k]
                yield si, ped, s, "pred", x, y


def export(results, metrics_rows, fmt, out_dir):
    """Write prediction results in one format; returns the file paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if fmt == "csv":
        mpath = os.path.join(out_dir, "metrics.csv")
        write_metrics_csv(metrics_rows, mpath)
        tpath = os.path.join(out_dir, "trajectories.csv")
        with open(tpath, "w", encoding="utf-8") as fh:
            fh.write("scene,ped,step,role,x,y\n")
            for si, ped, s, role, x, y in _trajectory_records(results):
                fh.write(f"{si},{ped},{s},{role},{_g17(x)},{_g17(y)}\n")
        written += [mpath, tpath]
    elif fmt == "json":
        payload = {
            "metrics": [vars(r) for r in metrics_rows],
            "scenes": [
                {
                    "index": si,
                    "ped_ids": [int(p) for p in res.ped_ids],
                    "t_obs": res.t_obs,
                    "t_pred": res.t_pred,
                    "pred_world": res.pred_world.tolist(),
                    "truth_world": [
                        [[None if np.isnan(v) else v for v in xy] for xy in ped]
                        for ped in res.truth_world.tolist()
                    ],
                    "observed_world": [
                        [
                            list(res.scene.positions[row, s])
                            if res.scene.presence[row, s] else None
                            for s in range(res.t_obs)
                        ]
                        for row in res.ped_rows
                    ],
                }
                for si, res in enumerate(results)
            ],
        }
        path = os.path.join(out_dir, "results.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
        written.append(path)
    elif fmt == "svg":
        for si, res in enumerate(results):
            path = os.path.join(out_dir, f"scene_{si:03d}.svg")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(render_svg(res))
            written.append(path)
    else:
        raise ContractError(f"unknown export format {fmt!r}")
    return written


def render_svg(res: PredictionResult) -> str:
    """To-scale scene rendering: observed solid, truth dashed, prediction
    marked with circles; one polyline group per pedestrian per role."""
    pts = [res.pred_world.reshape(-1, 2)]
    scene = res.scene
    for row in res.ped_rows:
        ok = scene.presence[row]
        if ok.any():
            pts.append(scene.positions[row][ok])
    allp = np.concatenate(pts)
    lo = np.nanmin(allp, axis=0) - 1.0
    hi = np.nanmax(allp, axis=0) + 1.0
    span = np.maximum(hi - lo, 1e-6)
    scale = 640.0 / span.max()
    W, H = span * scale

    def sx(p):
        return (p[0] - lo[0]) * scale

    def sy(p):
        return H - (p[1] - lo[1]) * scale  # svg y grows downward

    palette = ["#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#d35400", "#16a085"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" height="{H:.0f}" '
        f'viewBox="0 0 {W:.2f} {H:.2f}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    for m, row in enumerate(res.ped_rows):
        color = palette[m % len(palette)]
        obs = [
            scene.positions[row, s]
            for s in range(res.t_obs)
            if scene.presence[row, s]
        ]
        truth = [
            scene.positions[row, res.t_obs + k]
            for k in range(res.t_pred)
            if scene.presence[row, res.t_obs + k]
        ]
        pred = list(res.pred_world[m])
        for role, path, dash in (("obs", obs, ""), ("truth", truth, ' stroke-dasharray="6 4"')):
            if len(path) < 2:
                continue
            points = " ".join(f"{sx(p):.2f},{sy(p):.2f}" for p in path)
            out.append(
                f'<g class="ped-{res.ped_ids[m]} role-{role}">'
                f'<polyline points="{points}" fill="none" stroke="{color}"'
                f' stroke-width="2"{dash}/></g>'
            )
        points = " ".join(f"{sx(p):.2f},{sy(p):.2f}" for p in pred)
        markers = "".join(
            f'<circle cx="{sx(p):.2f}" cy="{sy(p):.2f}" r="3" fill="{color}"/>'
            for p in pred
        )
        out.append(
            f'<g class="ped-{res.ped_ids[m]} role-pred">'
            f'<polyline points="{points}" fill="none" stroke="{color}"'
            f' stroke-width="1" opacity="0.8"/>{markers}</g>'
        )
    out.append("</svg>")
    return "\n".join(out)
