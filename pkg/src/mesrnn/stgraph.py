"""Spatio-temporal graphs over pedestrian scenes and meta-path features.

Vertices are pedestrian positions at time steps. Spatial edges join two
different pedestrians at the same step, temporal edges join the same
pedestrian at consecutive steps; the edge feature is the plain coordinate
difference. Length-2 meta-path features come in four kinds (SS, ST, TS,
TT) and are the ordered concatenation of their two constituent edge
features, each oriented outward from the walk's start. Walks descend in
time: the features summarize where things were, not where they will be.

All time indices in this module are 0-based row indices into the scene
arrays. Pedestrians are referred to by row index as well; the mapping to
dataset ids lives in the scene.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, PresenceError

EDGE_KINDS = ("S", "T")
METAPATH_KINDS = ("SS", "ST", "TS", "TT")
FACTOR_KINDS = EDGE_KINDS + METAPATH_KINDS

# input width of the aggregated feature per factor kind
KIND_DIM = {"S": 2, "T": 2, "SS": 4, "ST": 4, "TS": 4, "TT": 4}


@dataclass
class Scene:
    """A fixed-rate multi-pedestrian trajectory window.

    positions is (N, T, 2) with NaN rows wherever presence is False;
    presence is (N, T) bool. frame_interval is the step length in seconds.
    """

    frame_interval: float
    ped_ids: list
    positions: np.ndarray
    presence: np.ndarray
    start_frame: int = 0

    @property
    def n_peds(self):
        return self.positions.shape[0]

    @property
    def length(self):
        return self.positions.shape[1]

    def validate(self):
        N, T, two = self.positions.shape
        if two != 2 or self.presence.shape != (N, T):
            raise ContractError(
                f"scene arrays disagree: positions {self.positions.shape}, "
                f"presence {self.presence.shape}"
            )
        if len(self.ped_ids) != N:
            raise ContractError("ped_ids length does not match positions")
        if T < 3:
            raise ContractError(f"scene length {T} < 3")
        if not np.isfinite(self.positions[self.presence]).all():
            raise ContractError("non-finite position where presence is true")
        return self

    def fingerprint(self) -> str:
        """Stable content hash, used for train/test leakage assertions."""
        import hashlib

        h = hashlib.sha256()
        h.update(np.asarray(self.ped_ids, dtype=np.int64).tobytes())
        pos = np.where(self.presence[:, :, None], self.positions, 0.0)
        h.update(np.ascontiguousarray(pos).tobytes())
        h.update(np.ascontiguousarray(self.presence).tobytes())
        return h.hexdigest()


def scene_from_positions(positions, frame_interval=0.4, ped_ids=None, start_frame=0):
    """Scene with full presence from a (N, T, 2) position array."""
    positions = np.asarray(positions, dtype=np.float64)
    N, T = positions.shape[:2]
    if ped_ids is None:
        ped_ids = list(range(N))
    presence = np.ones((N, T), dtype=bool)
    return Scene(frame_interval, list(ped_ids), positions, presence, start_frame).validate()


@dataclass
class MetaPathFeature:
    """One length-2 meta-path instance anchored at a pedestrian and step."""

    kind: str
    anchor: int
    partner: int
    t: int
    value: np.ndarray
    intermediate: int | None = None


def spatial_edge(scene: Scene, i: int, j: int, t: int) -> np.ndarray:
    """Difference v_i - v_j at step t, oriented from the anchor i."""
    if i == j:
        raise ContractError("spatial edge needs two distinct pedestrians")
    for p in (i, j):
        if not scene.presence[p, t]:
            raise PresenceError(f"pedestrian {p} absent at step {t}")
    return scene.positions[i, t] - scene.positions[j, t]


def temporal_edge(scene: Scene, i: int, t: int) -> np.ndarray:
    """Difference v_i(t) - v_i(t-1); needs presence at both steps."""
    if t < 1:
        raise PresenceError(f"no temporal edge into step {t}")
    if not (scene.presence[i, t] and scene.presence[i, t - 1]):
        raise PresenceError(f"pedestrian {i} not present at both {t - 1} and {t}")
    return scene.positions[i, t] - scene.positions[i, t - 1]


@dataclass
class STGraph:
    """Edge feature sets of a scene up to a step, queried by index."""

    scene: Scene
    up_to: int
    # spatial[t][(i, j)] with i < j stores v_i - v_j; flipped on query
    spatial: dict = field(default_factory=dict)
    temporal: dict = field(default_factory=dict)

    @property
    def n_peds(self):
        return self.scene.n_peds

    def has_spatial(self, i, j, t):
        return 0 <= t <= self.up_to and (min(i, j), max(i, j)) in self.spatial.get(t, ())

    def has_temporal(self, i, t):
        return 0 <= t <= self.up_to and i in self.temporal.get(t, ())

    def spatial_feature(self, i, j, t):
        key = (min(i, j), max(i, j))
        base = self.spatial[t][key]
        return base if i < j else -base

    def temporal_feature(self, i, t):
        return self.temporal[t][i]


def build_graph(scene: Scene, up_to=None, radius=None) -> STGraph:
    """All spatial edges among co-present pairs and all temporal edges
    for consecutive presence, for every step <= up_to (default: the whole
    scene). Spatial connectivity is complete per step; radius, when set,
    prunes spatial edges longer than that distance (experimental knob,
    off by default; the model's aggregation assumes the complete graph).
    """
    scene.validate()
    T = scene.length
    if up_to is None:
        up_to = T - 1
    if not 0 <= up_to < T:
        raise ContractError(f"up_to {up_to} outside scene of length {T}")
    g = STGraph(scene, up_to)
    for t in range(up_to + 1):
        present = np.flatnonzero(scene.presence[:, t])
        spat = {}
        for a in range(len(present)):
            for b in range(a + 1, len(present)):
                i, j = int(present[a]), int(present[b])
                d = scene.positions[i, t] - scene.positions[j, t]
                if radius is not None and float(np.hypot(d[0], d[1])) > radius:
                    continue
                spat[(i, j)] = d
        g.spatial[t] = spat
        temp = {}
        if t >= 1:
            for i in present:
                i = int(i)
                if scene.presence[i, t - 1]:
                    temp[i] = scene.positions[i, t] - scene.positions[i, t - 1]
        g.temporal[t] = temp
    return g


def metapaths(graph: STGraph, anchor: int, t: int, kind: str):
    """Every meta-path instance of one kind anchored at (anchor, t).

    Instances whose constituent edges do not exist are omitted; the model
    layer zero-fills at aggregation instead.
    """
    if kind not in METAPATH_KINDS:
        raise ContractError(f"unknown meta-path kind {kind!r}")
    if not 0 <= t <= graph.up_to:
        raise ContractError(f"step {t} outside graph range 0..{graph.up_to}")
    N = graph.n_peds
    out = []
    if kind == "SS":
        for k in range(N):
            if k == anchor or not graph.has_spatial(anchor, k, t):
                continue
            first = graph.spatial_feature(anchor, k, t)
            for j in range(N):
                if j in (anchor, k) or not graph.has_spatial(k, j, t):
                    continue
                value = np.concatenate([first, graph.spatial_feature(k, j, t)])
                out.append(MetaPathFeature("SS", anchor, j, t, value, intermediate=k))
    elif kind == "ST":
        for j in range(N):
            if j == anchor:
                continue
            if graph.has_spatial(anchor, j, t) and graph.has_temporal(j, t):
                value = np.concatenate(
                    [graph.spatial_feature(anchor, j, t), graph.temporal_feature(j, t)]
                )
                out.append(MetaPathFeature("ST", anchor, j, t, value))
    elif kind == "TS":
        if graph.has_temporal(anchor, t):
            first = graph.temporal_feature(anchor, t)
            for j in range(N):
                if j == anchor or not graph.has_spatial(anchor, j, t - 1):
                    continue
                value = np.concatenate([first, graph.spatial_feature(anchor, j, t - 1)])
                out.append(MetaPathFeature("TS", anchor, j, t, value))
    else:  # TT
        if graph.has_temporal(anchor, t) and graph.has_temporal(anchor, t - 1):
            value = np.concatenate(
                [graph.temporal_feature(anchor, t), graph.temporal_feature(anchor, t - 1)]
            )
            out.append(MetaPathFeature("TT", anchor, anchor, t, value))
    return out


def enumerate_walks_oracle(graph: STGraph, anchor: int, t: int, signature):
    """Brute-force typed-walk enumeration; the verification oracle.

    Walks start at (anchor, t), never revisit a vertex, traverse spatial
    edges within a step and temporal edges one step back in time, and
    compose features by concatenating the per-edge differences oriented
    outward from the walk's start. Signatures of length 1 are the plain
    edges.
    """
    signature = tuple(signature)
    if not 1 <= len(signature) <= 2 or any(s not in EDGE_KINDS for s in signature):
        raise ContractError(f"bad walk signature {signature!r}")
    results = []

    def extend(vertex, visited, feats, remaining):
        if not remaining:
            results.append(np.concatenate(feats))
            return
        p, tau = vertex
        if remaining[0] == "S":
            for q in range(graph.n_peds):
                if q == p or (q, tau) in visited or not graph.has_spatial(p, q, tau):
                    continue
                extend(
                    (q, tau),
                    visited | {(q, tau)},
                    feats + [graph.spatial_feature(p, q, tau)],
                    remaining[1:],
                )
        else:
            if graph.has_temporal(p, tau) and (p, tau - 1) not in visited:
                extend(
                    (p, tau - 1),
                    visited | {(p, tau - 1)},
                    feats + [graph.temporal_feature(p, tau)],
                    remaining[1:],
                )

    extend((anchor, t), {(anchor, t)}, [], signature)
    return results


def aggregate_sums(pos_t, pos_tm1=None, pos_tm2=None, kinds=FACTOR_KINDS):
    """Per-anchor instance sums of edge and meta-path features.

    Assumes full presence (the model steps on believed positions, which
    always exist). pos_t/pos_tm1/pos_tm2 are (N, 2); a missing history
    step means the kinds that need it aggregate to zero. Returns a dict
    kind -> (N, KIND_DIM[kind]) array.
    """
    pos_t = np.asarray(pos_t, dtype=np.float64)
    N = pos_t.shape[0]
    diff_t = pos_t[:, None, :] - pos_t[None, :, :]  # (N, N, 2), diff_t[i, j] = v_i - v_j
    srow_t = diff_t.sum(axis=1)
    tv_t = pos_t - pos_tm1 if pos_tm1 is not None else None
    tv_tm1 = pos_tm1 - pos_tm2 if (pos_tm1 is not None and pos_tm2 is not None) else None
    out = {}
    for kind in kinds:
        agg = np.zeros((N, KIND_DIM[kind]))
        if kind == "S":
            agg[:] = srow_t
        elif kind == "T":
            if tv_t is not None:
                agg[:] = tv_t
        elif kind == "SS":
            # sum over k of (v_i - v_k), each paired with (N-2) choices of j
            agg[:, :2] = (N - 2) * srow_t if N >= 3 else 0.0
            if N >= 3:
                colsum = diff_t.sum(axis=0)
                total = diff_t.sum(axis=(0, 1))
                agg[:, 2:] = total[None, :] - srow_t - colsum
        elif kind == "ST":
            if tv_t is not None:
                agg[:, :2] = srow_t
                agg[:, 2:] = tv_t.sum(axis=0)[None, :] - tv_t
        elif kind == "TS":
            if tv_t is not None:
                agg[:, :2] = (N - 1) * tv_t
                diff_tm1 = pos_tm1[:, None, :] - pos_tm1[None, :, :]
                agg[:, 2:] = diff_tm1.sum(axis=1)
        else:  # TT
            if tv_tm1 is not None:
                agg[:, :2] = tv_t
                agg[:, 2:] = tv_tm1
        out[kind] = agg
    return out
