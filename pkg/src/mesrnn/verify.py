"""Self-verification suite: finite-difference gradient checks for every
primitive and every recurrent submodule, meta-path oracle equivalence on
randomized scenes, the instance counting law, and tape replay determinism.

The CLI ``verify`` subcommand prints one row per check; the acceptance
tests call the same functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, grad_check
from .model import (
    EDGE_HIDDEN,
    NODE_HIDDEN,
    init_params,
    node_rnn_step,
    param_spec,
    unroll,
    variant_kinds,
    zero_state,
    _edge_step,
)
from .stgraph import (
    KIND_DIM,
    METAPATH_KINDS,
    Scene,
    build_graph,
    enumerate_walks_oracle,
    metapaths,
    scene_from_positions,
)
from .training import TrainConfig, scene_loss


@dataclass
class CheckRow:
    name: str
    passed: bool
    detail: str


def _pick(spec, prefix):
    return {name: shape for name, shape in spec if name.startswith(prefix)}


def gradient_checks(tol=1e-4, h=1e-6, seed=0, samples=8) -> list:
    """Finite-difference checks: primitives, each EdgeRNN, the NodeRNN,
    the vlstm baseline, and the full model on a 2-pedestrian 4-step
    teacher-forced unroll. samples bounds probed entries per tensor."""
    rng = np.random.default_rng(seed)
    rows = []

    def check(name, build, params, max_entries=0):
        report = grad_check(build, params, h=h, tol=tol, max_entries=max_entries, seed=seed)
        rows.append(
            CheckRow(name, report.passed, f"max rel err {report.max_err:.3e}")
        )

    # primitives, full entry coverage on small shapes
    x = rng.normal(size=4)

    def via_mse(expr):
        def build(tape, bound):
            out = expr(tape, bound)
            return tape.mse(out, tape.leaf(np.zeros(out.data.shape)))

        return build

    check("primitive linear", via_mse(
        lambda t, b: t.linear(t.leaf(x), b["w"], b["b"])),
        {"w": rng.normal(size=(3, 4)), "b": rng.normal(size=3)})
    check("primitive add", via_mse(
        lambda t, b: t.add(b["a"], t.leaf(x))),
        {"a": rng.normal(size=4)})
    check("primitive hadamard", via_mse(
        lambda t, b: t.hadamard(b["a"], t.leaf(x))),
        {"a": rng.normal(size=4)})
    check("primitive concat", via_mse(
        lambda t, b: t.concat([b["a"], b["c"]])),
        {"a": rng.normal(size=3), "c": rng.normal(size=2)})
    check("primitive sum_list", via_mse(
        lambda t, b: t.sum_list([b["a"], b["c"], t.leaf(x)])),
        {"a": rng.normal(size=4), "c": rng.normal(size=4)})
    check("primitive tanh", via_mse(
        lambda t, b: t.tanh_map(b["a"])),
        {"a": rng.normal(size=5)})
    check("primitive sigmoid", via_mse(
        lambda t, b: t.sigmoid_map(b["a"])),
        {"a": rng.normal(size=5)})
    check("primitive mse", lambda t, b: t.mse(b["a"], t.leaf(x)),
          {"a": rng.normal(size=4)})
    cell_x = rng.normal(size=(2, 3))
    cell_h = rng.normal(size=(2, 4)) * 0.5
    cell_c = rng.normal(size=(2, 4)) * 0.5
    check("primitive lstm_cell", via_mse(
        lambda t, b: t.lstm_cell(
            t.leaf(cell_x), t.leaf(cell_h), t.leaf(cell_c),
            b["w_ih"], b["w_hh"], b["bias"],
        )[0]),
        {"w_ih": rng.normal(size=(16, 3)) * 0.5,
         "w_hh": rng.normal(size=(16, 4)) * 0.5,
         "bias": rng.normal(size=16) * 0.5})

    # one EdgeRNN per kind: 3 recurrent steps on random aggregates
    full = init_params("mesrnn", seed)
    for kind in variant_kinds("mesrnn"):
        feats = rng.normal(size=(3, 1, KIND_DIM[kind]))
        prefix = f"edge.{kind}."
        params = {n: full.tensors[n] for n in full.tensors if n.startswith(prefix)}

        def build(tape, bound, kind=kind, feats=feats):
            state = zero_state(tape, 1, EDGE_HIDDEN)
            for s in range(3):
                state = _edge_step(tape, bound, kind, tape.leaf(feats[s]), state)
            return tape.mse(state[0], tape.leaf(np.zeros((1, EDGE_HIDDEN))))

        check(f"edge rnn {kind}", build, params, max_entries=samples)

    # NodeRNN: 3 steps with constant edge hidden states
    node_params = {n: full.tensors[n] for n in full.tensors if n.startswith("node.")}
    hiddens = rng.normal(size=(3, 6, 1, EDGE_HIDDEN)) * 0.3
    positions = rng.uniform(-0.5, 0.5, size=(3, 1, 2))

    def build_node(tape, bound):
        state = zero_state(tape, 1, NODE_HIDDEN)
        outs = []
        for s in range(3):
            eh = [
                (k, tape.leaf(hiddens[s][i]))
                for i, k in enumerate(variant_kinds("mesrnn"))
            ]
            h, c, nxt = node_rnn_step(tape, bound, positions[s], eh, state)
            state = (h, c)
            outs.append(nxt)
        return tape.mse(tape.concat(outs), tape.leaf(np.zeros((1, 6))))

    check("node rnn", build_node, node_params, max_entries=samples)

    # vlstm baseline and full model, 2 pedestrians x 4 steps
    truth = rng.uniform(-0.6, 0.6, size=(2, 4, 2))
    for variant in ("vlstm", "mesrnn"):
        params = init_params(variant, seed + 1)
        cfg = TrainConfig(t_obs=2, t_pred=2, dropout=0.0)

        def build_full(tape, bound, variant=variant, cfg=cfg):
            return scene_loss(tape, bound, variant, truth, cfg)

        check(
            f"full {variant} 2 peds x 4 steps", build_full, params.tensors,
            max_entries=max(2, samples // 2),
        )
    return rows


def oracle_checks(n_scenes=100, seed=0) -> list:
    """Meta-path extraction vs brute-force walk enumeration, exact."""
    rng = np.random.default_rng(seed)
    mismatches = 0
    checked = 0
    for _ in range(n_scenes):
        n = int(rng.integers(1, 7))
        t_len = int(rng.integers(3, 7))
        presence = rng.random((n, t_len)) < 0.7
        positions = np.where(
            presence[:, :, None], rng.normal(scale=2.0, size=(n, t_len, 2)), np.nan
        )
        scene = Scene(0.4, list(range(n)), positions, presence)
        graph = build_graph(scene)
        for anchor in range(n):
            for t in range(t_len):
                for kind in METAPATH_KINDS:
                    got = sorted(
                        tuple(f.value) for f in metapaths(graph, anchor, t, kind)
                    )
                    want = sorted(
                        tuple(v)
                        for v in enumerate_walks_oracle(graph, anchor, t, list(kind))
                    )
                    checked += 1
                    if got != want:
                        mismatches += 1
    return [
        CheckRow(
            f"meta-path oracle equivalence ({n_scenes} scenes)",
            mismatches == 0,
            f"{checked} comparisons, {mismatches} mismatches",
        )
    ]


def counting_checks(sizes=(2, 3, 5, 8)) -> list:
    """|SS| = (N-1)(N-2), |ST| = |TS| = N-1, |TT| = 1 on full presence."""
    rows = []
    for n in sizes:
        rng = np.random.default_rng(n)
        scene = scene_from_positions(rng.normal(size=(n, 4, 2)))
        graph = build_graph(scene)
        ok = True
        for t in (2, 3):
            for anchor in range(n):
                counts = {
                    kind: len(metapaths(graph, anchor, t, kind))
                    for kind in METAPATH_KINDS
                }
                if counts != {
                    "SS": (n - 1) * (n - 2), "ST": n - 1, "TS": n - 1, "TT": 1,
                }:
                    ok = False
        rows.append(CheckRow(f"counting law N={n}", ok, ""))
    return rows


def replay_check(seed=0) -> list:
    """Record one training-style forward pass and replay it bit-exactly."""
    rng = np.random.default_rng(seed)
    truth = rng.uniform(-0.5, 0.5, size=(2, 6, 2))
    params = init_params("srnn", seed)
    tape = Tape()
    bound = params.bind(tape)
    cfg = TrainConfig(t_obs=3, t_pred=3, dropout=0.0)
    loss = scene_loss(tape, bound, "srnn", truth, cfg)
    tape.backward(loss)
    ok = tape.replay()
    return [CheckRow("tape replay bit-exact", ok, f"{len(tape.nodes)} nodes")]


def run_all(tol=1e-4, h=1e-6, seed=0, samples=8, n_scenes=100):
    rows = []
    rows += gradient_checks(tol=tol, h=h, seed=seed, samples=samples)
    rows += oracle_checks(n_scenes=n_scenes, seed=seed)
    rows += counting_checks()
    rows += replay_check(seed=seed)
    return rows, all(r.passed for r in rows)


def format_rows(rows) -> str:
    width = max(len(r.name) for r in rows)
    lines = []
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        detail = f"  ({r.detail})" if r.detail else ""
        lines.append(f"{r.name:<{width}}  {status}{detail}")
    return "\n".join(lines)
