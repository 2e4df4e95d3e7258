"""Trajectory dataset loading, scene windowing, and synthetic crowds.

Dataset files are plain text, one record per line: ``frame ped_id x y``
with whitespace separation, ``#`` comments allowed. Frames must form a
uniform arithmetic progression once deduplicated; non-uniform data is
rejected rather than resampled.

The synthetic generator produces fully-present 20-step scenes from a few
interaction scenarios (crossing, overtaking, parallel walking, a
stationary mix), with constant-velocity base motion, a capped
distance-decaying pairwise repulsion to make neighbors matter, and seeded
Gaussian jitter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError
from .stgraph import Scene
from .training import FRAME_INTERVAL

SCENARIOS = ("crossing", "overtaking", "parallel_group", "stationary_mix")


@dataclass
class TrajectoryTable:
    """Flat (frame, ped, x, y) records at a declared frame interval."""

    frames: np.ndarray
    peds: np.ndarray
    xy: np.ndarray
    frame_interval: float = FRAME_INTERVAL

    @property
    def n_records(self):
        return len(self.frames)


def load_table(path, frame_interval=FRAME_INTERVAL) -> TrajectoryTable:
    """Parse a dataset file; raises DataFormatError naming the bad line."""
    frames, peds, xs, ys = [], [], [], []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 4:
                raise DataFormatError(
                    f"{path}:{lineno}: expected 4 fields, got {len(fields)}"
                )
            try:
                frame = int(fields[0])
                ped = int(fields[1])
                x = float(fields[2])
                y = float(fields[3])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if (frame, ped) in seen:
                raise DataFormatError(
                    f"{path}:{lineno}: duplicate record for frame {frame}, ped {ped}"
                )
            seen.add((frame, ped))
            frames.append(frame)
            peds.append(ped)
            xs.append(x)
            ys.append(y)
    if not frames:
        return TrajectoryTable(
            np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
            np.zeros((0, 2)), frame_interval,
        )
    table = TrajectoryTable(
        np.asarray(frames, dtype=np.int64),
        np.asarray(peds, dtype=np.int64),
        np.column_stack([xs, ys]).astype(np.float64),
        frame_interval,
    )
    ticks = np.unique(table.frames)
    if len(ticks) >= 3:
        gaps = np.diff(ticks)
        if not (gaps == gaps[0]).all():
            raise DataFormatError(
                f"{path}: non-uniform frame spacing (gaps {sorted(set(gaps.tolist()))})"
            )
    return table


def save_table(table: TrajectoryTable, path):
    """Debug writer; load_table(save_table(t)) is identity on records."""
    with open(path, "w", encoding="utf-8") as fh:
        for k in range(table.n_records):
            fh.write(
                f"{int(table.frames[k])} {int(table.peds[k])} "
                f"{format(table.xy[k, 0], '.17g')} {format(table.xy[k, 1], '.17g')}\n"
            )


def window_scenes(table: TrajectoryTable, t_obs=8, t_pred=12, stride=10, mode="train"):
    """Slide fixed-length windows over the frame progression.

    Windows cover t_obs + t_pred consecutive frames and advance by stride
    frames. Training mode keeps only pedestrians present at every window
    step; inference mode requires presence over the observed steps and
    records whatever ground truth exists beyond them. Windows with no
    qualifying pedestrian are dropped. A table shorter than one window
    yields an empty list.
    """
    if mode not in ("train", "infer"):
        raise DataFormatError(f"unknown windowing mode {mode!r}")
    total = t_obs + t_pred
    ticks = np.unique(table.frames)
    if len(ticks) < total:
        return []
    col = {int(f): i for i, f in enumerate(ticks)}
    by_ped: dict = {}
    for k in range(table.n_records):
        by_ped.setdefault(int(table.peds[k]), {})[col[int(table.frames[k])]] = table.xy[k]
    scenes = []
    for start in range(0, len(ticks) - total + 1, stride):
        window = range(start, start + total)
        keep = []
        for ped, cols in sorted(by_ped.items()):
            if mode == "train":
                ok = all(c in cols for c in window)
            else:
                ok = all(c in cols for c in range(start, start + t_obs))
            if ok:
                keep.append(ped)
        if not keep:
            continue
        n = len(keep)
        positions = np.full((n, total, 2), np.nan)
        presence = np.zeros((n, total), dtype=bool)
        for r, ped in enumerate(keep):
            cols = by_ped[ped]
            for s, c in enumerate(window):
                if c in cols:
                    positions[r, s] = cols[c]
                    presence[r, s] = True
        scenes.append(
            Scene(
                table.frame_interval, keep, positions, presence,
                start_frame=int(ticks[start]),
            ).validate()
        )
    return scenes


@dataclass
class SynthSpec:
    """Deterministic synthetic-corpus description."""

    scenario: str = "crossing"
    n_peds: int = 4
    speed_range: tuple = (0.3, 0.7)
    noise: float = 0.01
    n_scenes: int = 1
    seed: int = 0
    repulsion: float = 0.05
    length: int = 20

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise DataFormatError(
                f"unknown scenario {self.scenario!r} (choose from {', '.join(SCENARIOS)})"
            )
        if self.n_peds < 1 or self.n_scenes < 1 or self.length < 3:
            raise DataFormatError("n_peds/scenes/length must be positive (length >= 3)")
        lo, hi = self.speed_range
        if not (0 < lo <= hi):
            raise DataFormatError(f"bad speed range {self.speed_range}")
        if self.noise < 0 or self.repulsion < 0:
            raise DataFormatError("noise and repulsion must be >= 0")
        return self


def _scenario_setup(spec: SynthSpec, rng):
    """Start positions and constant velocities for one scene."""
    n = spec.n_peds
    lo, hi = spec.speed_range
    speeds = rng.uniform(lo, hi, size=n)
    half = spec.length / 2.0
    starts = np.zeros((n, 2))
    vels = np.zeros((n, 2))
    if spec.scenario == "crossing":
        # two groups on perpendicular collision courses meeting mid-scene
        for i in range(n):
            lane = rng.uniform(-0.8, 0.8)
            if i % 2 == 0:
                starts[i] = (-speeds[i] * half, lane)
                vels[i] = (speeds[i], 0.0)
            else:
                starts[i] = (lane, -speeds[i] * half)
                vels[i] = (0.0, speeds[i])
    elif spec.scenario == "overtaking":
        # fast pedestrian starts behind a slow one on the same line
        for pair in range(0, n, 2):
            lane = pair * 1.5 + rng.uniform(-0.2, 0.2)
            slow = min(speeds[pair], lo + 0.25 * (hi - lo))
            starts[pair] = (0.0, lane)
            vels[pair] = (slow, 0.0)
            if pair + 1 < n:
                fast = max(speeds[pair + 1], lo + 0.75 * (hi - lo))
                starts[pair + 1] = (-(fast - slow) * half - 0.5, lane)
                vels[pair + 1] = (fast, 0.0)
    elif spec.scenario == "parallel_group":
        for i in range(n):
            starts[i] = (rng.uniform(-0.5, 0.5), 1.2 * i)
            vels[i] = (speeds[i], 0.0)
    else:  # stationary_mix
        movers = n - n // 2
        for i in range(n):
            if i < movers:
                starts[i] = (-speeds[i] * half, rng.uniform(-1.0, 1.0))
                vels[i] = (speeds[i], 0.0)
            else:
                starts[i] = rng.uniform(-1.5, 1.5, size=2)
                vels[i] = (0.0, 0.0)
    return starts, vels


_REPULSE_RANGE = 1.0


def _repulsion(pos, strength):
    """Capped, distance-decaying pairwise push; zero when strength is 0."""
    n = pos.shape[0]
    out = np.zeros_like(pos)
    if strength <= 0 or n < 2:
        return out
    for i in range(n):
        total = np.zeros(2)
        for j in range(n):
            if j == i:
                continue
            d = pos[i] - pos[j]
            dist = float(np.hypot(d[0], d[1]))
            if dist < 1e-9:
                continue
            total += (d / dist) * (strength * np.exp(-dist / _REPULSE_RANGE))
        mag = float(np.hypot(total[0], total[1]))
        if mag > strength:
            total *= strength / mag
        out[i] = total
    return out


def synth_generate(spec: SynthSpec):
    """Scenes as a pure function of the spec (bitwise deterministic)."""
    spec.validate()
    scenes = []
    for s in range(spec.n_scenes):
        rng = np.random.default_rng([spec.seed, s])
        starts, vels = _scenario_setup(spec, rng)
        pos = np.zeros((spec.n_peds, spec.length, 2))
        pos[:, 0] = starts
        for t in range(spec.length - 1):
            step = vels + _repulsion(pos[:, t], spec.repulsion)
            if spec.noise > 0:
                step = step + rng.normal(0.0, spec.noise, size=step.shape)
            pos[:, t + 1] = pos[:, t] + step
        presence = np.ones((spec.n_peds, spec.length), dtype=bool)
        scenes.append(
            Scene(
                FRAME_INTERVAL, list(range(spec.n_peds)), pos, presence, start_frame=0
            ).validate()
        )
    return scenes


def parse_synth_spec(text) -> SynthSpec:
    """Inline spec grammar: ``name:key=val,...`` as accepted by the CLI."""
    name, _, rest = text.partition(":")
    kwargs = {"scenario": name.strip()}
    keymap = {
        "n": ("n_peds", int),
        "peds": ("n_peds", int),
        "scenes": ("n_scenes", int),
        "seed": ("seed", int),
        "noise": ("noise", float),
        "repulsion": ("repulsion", float),
        "speed_min": ("speed_min", float),
        "speed_max": ("speed_max", float),
    }
    speed = {}
    if rest.strip():
        for item in rest.split(","):
            key, eq, value = item.partition("=")
            key = key.strip()
            if not eq or key not in keymap:
                raise DataFormatError(f"bad synth spec entry {item!r}")
            field_name, conv = keymap[key]
            try:
                parsed = conv(value.strip())
            except ValueError:
                raise DataFormatError(f"bad synth spec value {item!r}") from None
            if field_name in ("speed_min", "speed_max"):
                speed[field_name] = parsed
            else:
                kwargs[field_name] = parsed
    if speed:
        base = SynthSpec().speed_range
        kwargs["speed_range"] = (
            speed.get("speed_min", base[0]),
            speed.get("speed_max", base[1]),
        )
    return SynthSpec(**kwargs).validate()


def scenes_to_table(scenes, frame_step=1) -> TrajectoryTable:
    """Pack scenes into one table with disjoint frame blocks and ped ids.

    Used by the synth exporter so generated corpora can round-trip through
    the regular file format.
    """
    frames, peds, xy = [], [], []
    frame0 = 0
    ped0 = 0
    interval = FRAME_INTERVAL
    for scene in scenes:
        interval = scene.frame_interval
        for r in range(scene.n_peds):
            for s in range(scene.length):
                if scene.presence[r, s]:
                    frames.append(frame0 + s * frame_step)
                    peds.append(ped0 + r)
                    xy.append(scene.positions[r, s])
        frame0 += scene.length * frame_step
        ped0 += scene.n_peds
    return TrajectoryTable(
        np.asarray(frames, dtype=np.int64),
        np.asarray(peds, dtype=np.int64),
        np.asarray(xy, dtype=np.float64).reshape(-1, 2),
        interval,
    )
