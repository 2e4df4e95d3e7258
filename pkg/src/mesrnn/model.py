"""Recurrent trajectory models: the meta-path model, its structural-RNN
reduction, and a vanilla LSTM baseline.

Architecture (shared-parameter factors, one set per kind, reused by every
pedestrian):

  EdgeRNN (per kind)   sum instances -> linear(D_in, 64) + tanh + dropout
                       -> LSTM(64 -> 128)
  NodeRNN              concat(position embedding (2 -> 128 + tanh + dropout),
                       all edge hidden states) -> LSTM(-> 256)
                       -> linear(256 -> 2) + tanh = offset; next = pos + offset
  vlstm baseline       linear(2 -> 64) + tanh + dropout -> LSTM(64 -> 128)
                       -> linear(128 -> 2) + tanh, residual add

Hidden-state rows are pedestrians: every step function is batched over an
(N, ...) leading axis and parameters never depend on N.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tape, Tensor
from .errors import CheckpointError, ContractError, ShapeError
from .stgraph import EDGE_KINDS, FACTOR_KINDS, KIND_DIM, aggregate_sums

EDGE_EMBED = 64
EDGE_HIDDEN = 128
NODE_EMBED = 128
NODE_HIDDEN = 256
VLSTM_EMBED = 64
VLSTM_HIDDEN = 128

VARIANTS = ("mesrnn", "srnn", "vlstm")

CHECKPOINT_MAGIC = "MESRNN-CKPT v1"


def variant_kinds(variant):
    if variant == "mesrnn":
        return FACTOR_KINDS
    if variant == "srnn":
        return EDGE_KINDS
    if variant == "vlstm":
        return ()
    raise ContractError(f"unknown variant {variant!r}")


def node_input_dim(variant):
    return NODE_EMBED + EDGE_HIDDEN * len(variant_kinds(variant))


def _lstm_shapes(prefix, d_in, hidden):
    return [
        (f"{prefix}.w_ih", (4 * hidden, d_in)),
        (f"{prefix}.w_hh", (4 * hidden, hidden)),
        (f"{prefix}.b", (4 * hidden,)),
    ]


def param_spec(variant):
    """Ordered (name, shape) list defining the named-tensor layout."""
    spec = []
    if variant == "vlstm":
        spec += [("vlstm.enc.w", (VLSTM_EMBED, 2)), ("vlstm.enc.b", (VLSTM_EMBED,))]
        spec += _lstm_shapes("vlstm.cell", VLSTM_EMBED, VLSTM_HIDDEN)
        spec += [("vlstm.dec.w", (2, VLSTM_HIDDEN)), ("vlstm.dec.b", (2,))]
        return spec
    for kind in variant_kinds(variant):
        spec += [
            (f"edge.{kind}.enc.w", (EDGE_EMBED, KIND_DIM[kind])),
            (f"edge.{kind}.enc.b", (EDGE_EMBED,)),
        ]
        spec += _lstm_shapes(f"edge.{kind}.cell", EDGE_EMBED, EDGE_HIDDEN)
    spec += [("node.enc.w", (NODE_EMBED, 2)), ("node.enc.b", (NODE_EMBED,))]
    spec += _lstm_shapes("node.cell", node_input_dim(variant), NODE_HIDDEN)
    spec += [("node.dec.w", (2, NODE_HIDDEN)), ("node.dec.b", (2,))]
    return spec


class ModelParams:
    """Named-tensor container for one model variant."""

    def __init__(self, variant, tensors):
        if variant not in VARIANTS:
            raise ContractError(f"unknown variant {variant!r}")
        self.variant = variant
        self.tensors = tensors
        for name, shape in param_spec(variant):
            if name not in tensors:
                raise CheckpointError(f"missing tensor {name}")
            if tensors[name].shape != shape:
                raise ShapeError(
                    f"tensor {name}: got {tensors[name].shape}, want {shape}"
                )

    def param_count(self):
        return sum(a.size for a in self.tensors.values())

    def copy(self):
        return ModelParams(self.variant, {k: v.copy() for k, v in self.tensors.items()})

    def bind(self, tape: Tape):
        """Register every tensor as a named parameter leaf on the tape."""
        return {name: tape.param(name, a) for name, a in self.tensors.items()}

    def bind_const(self, tape: Tape):
        """Register tensors as constants (inference: no gradient work)."""
        return {name: tape.leaf(a) for name, a in self.tensors.items()}


def param_count(variant):
    """Closed-form scalar parameter count of a variant."""
    return sum(int(np.prod(shape)) for _, shape in param_spec(variant))


def init_params(variant, seed) -> ModelParams:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases except the
    LSTM forget-gate bias block which starts at 1.0. Deterministic in seed.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_spec(variant):
        if name.endswith(".b"):
            a = np.zeros(shape)
            if ".cell." in name:
                hidden = shape[0] // 4
                a[hidden : 2 * hidden] = 1.0  # forget gate block
        else:
            fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            a = rng.uniform(-bound, bound, size=shape)
        tensors[name] = a
    return ModelParams(variant, tensors)


# ---- step functions -------------------------------------------------------


def zero_state(tape: Tape, n: int, hidden: int):
    """Zero-initialized (h, c) pair as constant leaves."""
    return tape.leaf(np.zeros((n, hidden))), tape.leaf(np.zeros((n, hidden)))


def init_states(tape: Tape, variant: str, n: int):
    states = {k: zero_state(tape, n, EDGE_HIDDEN) for k in variant_kinds(variant)}
    if variant == "vlstm":
        states["vlstm"] = zero_state(tape, n, VLSTM_HIDDEN)
    else:
        states["node"] = zero_state(tape, n, NODE_HIDDEN)
    return states


def _encode(tape, x, w, b, mask=None):
    e = tape.tanh_map(tape.linear(x, w, b))
    if mask is not None:
        if not isinstance(mask, Tensor):
            mask = tape.leaf(mask)
        e = tape.hadamard(e, mask)
    return e


def _edge_step(tape, bound, kind, xi, prev, mask=None):
    e = _encode(tape, xi, bound[f"edge.{kind}.enc.w"], bound[f"edge.{kind}.enc.b"], mask)
    return tape.lstm_cell(
        e, prev[0], prev[1],
        bound[f"edge.{kind}.cell.w_ih"], bound[f"edge.{kind}.cell.w_hh"],
        bound[f"edge.{kind}.cell.b"],
    )


def edge_rnn_step(tape, bound, kind, instances, prev, mask=None):
    """One EdgeRNN step for a single pedestrian.

    instances is the list of feature vectors of this kind anchored at the
    pedestrian; they are summed first (an empty list sums to zero), then
    embedded and fed to the LSTM. prev is the (h, c) pair with rows = 1.
    Returns the new (h, c).
    """
    d = KIND_DIM[kind]
    total = np.zeros(d)
    for inst in instances:
        v = np.asarray(inst, dtype=np.float64)
        if v.shape != (d,):
            raise ShapeError(f"{kind} instance: got {v.shape}, want {(d,)}")
        total = total + v
    return _edge_step(tape, bound, kind, tape.leaf(total.reshape(1, d)), prev, mask)


def node_rnn_step(tape, bound, position, edge_hiddens, prev, mask=None):
    """One NodeRNN step: embed position, concat edge hidden states in kind
    order, LSTM, decode a tanh-bounded offset, residual-add.

    edge_hiddens is an ordered list of (kind, hidden) pairs; the order must
    match the variant's kind order (S, T, then SS, ST, TS, TT when present).
    position may be an array (treated as a constant) or a tape tensor.
    Returns (h, c, next_position).
    """
    kinds = tuple(k for k, _ in edge_hiddens)
    if kinds not in (FACTOR_KINDS, EDGE_KINDS):
        raise ContractError(f"edge hidden states out of order: {kinds}")
    if not isinstance(position, Tensor):
        position = tape.leaf(position)
    e = _encode(tape, position, bound["node.enc.w"], bound["node.enc.b"], mask)
    zeta = tape.concat([e] + [h for _, h in edge_hiddens])
    h, c = tape.lstm_cell(
        zeta, prev[0], prev[1],
        bound["node.cell.w_ih"], bound["node.cell.w_hh"], bound["node.cell.b"],
    )
    delta = tape.tanh_map(tape.linear(h, bound["node.dec.w"], bound["node.dec.b"]))
    next_position = tape.add(position, delta)
    return h, c, next_position


def vlstm_step(tape, bound, position, prev, mask=None):
    """Baseline step: position in, offset out, no neighbor inputs at all."""
    if not isinstance(position, Tensor):
        position = tape.leaf(position)
    e = _encode(tape, position, bound["vlstm.enc.w"], bound["vlstm.enc.b"], mask)
    h, c = tape.lstm_cell(
        e, prev[0], prev[1],
        bound["vlstm.cell.w_ih"], bound["vlstm.cell.w_hh"], bound["vlstm.cell.b"],
    )
    delta = tape.tanh_map(tape.linear(h, bound["vlstm.dec.w"], bound["vlstm.dec.b"]))
    return h, c, tape.add(position, delta)


def mesrnn_step(tape, bound, variant, believed, states, masks=None):
    """Advance every pedestrian one step from believed positions.

    believed is the (pos_t, pos_tm1, pos_tm2) history ring of (N, 2)
    arrays (older entries None near the scene start); features for kinds
    whose edges do not exist yet aggregate to zero. All EdgeRNNs run
    first, then the NodeRNN; every pedestrian shares the same parameters
    and all predictions commit simultaneously.

    Returns (new_states, next_positions).
    """
    kinds = variant_kinds(variant)
    if not kinds:
        raise ContractError("mesrnn_step needs a graph variant, not vlstm")
    pos_t, pos_tm1, pos_tm2 = believed
    masks = masks or {}
    feats = aggregate_sums(pos_t, pos_tm1, pos_tm2, kinds)
    new_states = {}
    hiddens = []
    for kind in kinds:
        h, c = _edge_step(
            tape, bound, kind, tape.leaf(feats[kind]), states[kind], masks.get(kind)
        )
        new_states[kind] = (h, c)
        hiddens.append((kind, h))
    h, c, next_pos = node_rnn_step(
        tape, bound, pos_t, hiddens, states["node"], masks.get("node")
    )
    new_states["node"] = (h, c)
    return new_states, next_pos


def model_step(tape, bound, variant, believed, states, masks=None):
    """Variant dispatch used by the training and rollout loops."""
    if variant == "vlstm":
        masks = masks or {}
        h, c, next_pos = vlstm_step(
            tape, bound, believed[0], states["vlstm"], masks.get("vlstm")
        )
        return {"vlstm": (h, c)}, next_pos
    return mesrnn_step(tape, bound, variant, believed, states, masks)


def carry_position(mode, step, t_obs, truth_next, pred_next):
    """Believed position committed for the next step.

    Teacher forcing always carries ground truth; the autoregressive mode
    switches to the model's own output once the observed period ends.
    """
    if mode == "auto" and step >= t_obs:
        return pred_next
    return truth_next


def unroll(tape, bound, variant, truth, t_obs, mode, masks_fn=None):
    """Step the model across a scene; returns {step: predicted (N, 2) tensor}.

    truth is the (N, T, 2) normalized position array. Features at step s
    always come from the believed-position buffer; what gets committed to
    that buffer after each prediction is decided by carry_position, so the
    two modes share every other line of this loop. Predictions exist for
    steps 1..T-1.
    """
    if mode not in ("teacher", "auto"):
        raise ContractError(f"unknown unroll mode {mode!r}")
    N, T = truth.shape[:2]
    believed = np.array(truth, copy=True)
    states = init_states(tape, variant, N)
    preds = {}
    for s in range(T - 1):
        ring = (
            believed[:, s],
            believed[:, s - 1] if s >= 1 else None,
            believed[:, s - 2] if s >= 2 else None,
        )
        masks = masks_fn(s) if masks_fn is not None else None
        states, next_pos = model_step(tape, bound, variant, ring, states, masks)
        preds[s + 1] = next_pos
        believed[:, s + 1] = carry_position(
            mode, s + 1, t_obs, truth[:, s + 1], next_pos.data
        )
    return preds


def make_dropout_masks(rng, variant, n, rate):
    """Inverted-dropout masks per embedder site, or None when rate is 0."""
    if rate <= 0.0:
        return None
    masks = {}
    keep = 1.0 - rate
    sites = [("vlstm", VLSTM_EMBED)] if variant == "vlstm" else (
        [(k, EDGE_EMBED) for k in variant_kinds(variant)] + [("node", NODE_EMBED)]
    )
    for site, width in sites:
        masks[site] = (rng.random((n, width)) < keep) / keep
    return masks


# ---- checkpoint serialization --------------------------------------------


def _fmt(x):
    return format(float(x), ".17g")


def save_checkpoint(params: ModelParams, norm_stats, meta, path):
    """Write the bit-exact text checkpoint.

    meta must carry dropout, seed and frame_interval; norm_stats supplies
    the per-axis min/max fitted on the training split.
    """
    lines = [CHECKPOINT_MAGIC]
    head = {
        "variant": params.variant,
        "edge_embed": EDGE_EMBED,
        "edge_hidden": EDGE_HIDDEN,
        "node_embed": NODE_EMBED,
        "node_hidden": NODE_HIDDEN,
        "dropout": _fmt(meta.get("dropout", 0.0)),
        "seed": int(meta.get("seed", 0)),
        "xmin": _fmt(norm_stats.xmin),
        "xmax": _fmt(norm_stats.xmax),
        "ymin": _fmt(norm_stats.ymin),
        "ymax": _fmt(norm_stats.ymax),
        "frame_interval": _fmt(meta.get("frame_interval", 0.4)),
    }
    lines.append(" ".join(f"{k}={v}" for k, v in head.items()))
    for name, _ in param_spec(params.variant):
        a = params.tensors[name]
        lines.append("tensor " + name + " " + " ".join(str(d) for d in a.shape))
        lines.extend(_fmt(v) for v in a.ravel())
    lines.append("end")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path, expect_variant=None):
    """Read a checkpoint; returns (params, norm_stats, meta dict).

    Raises CheckpointError naming the offending tensor on any shape or
    length mismatch, and rejects a variant different from expect_variant.
    """
    from .training import NormStats

    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_MAGIC} file")
    if "end" not in lines:
        raise CheckpointError(f"{path}: truncated (no end marker)")
    head = {}
    for item in lines[1].split():
        k, _, v = item.partition("=")
        head[k] = v
    variant = head.get("variant", "")
    if variant not in VARIANTS:
        raise CheckpointError(f"{path}: unknown variant {variant!r}")
    if expect_variant is not None and variant != expect_variant:
        raise CheckpointError(
            f"{path}: checkpoint is {variant!r}, expected {expect_variant!r}"
        )
    tensors = {}
    i = 2
    while i < len(lines) and lines[i] != "end":
        parts = lines[i].split()
        if parts[0] != "tensor":
            raise CheckpointError(f"{path}: expected tensor header at line {i + 1}")
        name, shape = parts[1], tuple(int(d) for d in parts[2:])
        size = int(np.prod(shape)) if shape else 1
        chunk = lines[i + 1 : i + 1 + size]
        if len(chunk) < size or any(c == "end" for c in chunk):
            raise CheckpointError(f"{path}: tensor {name}: truncated values")
        try:
            a = np.array([float(v) for v in chunk]).reshape(shape)
        except ValueError as exc:
            raise CheckpointError(f"{path}: tensor {name}: {exc}") from None
        tensors[name] = a
        i += 1 + size
    expected = dict(param_spec(variant))
    for name, shape in expected.items():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing tensor {name}")
        if tensors[name].shape != shape:
            raise CheckpointError(
                f"{path}: tensor {name}: shape {tensors[name].shape}, want {shape}"
            )
    for name in tensors:
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected tensor {name}")
    params = ModelParams(variant, tensors)
    norm = NormStats(
        float(head["xmin"]), float(head["xmax"]), float(head["ymin"]), float(head["ymax"])
    )
    meta = {
        "dropout": float(head.get("dropout", 0.0)),
        "seed": int(head.get("seed", 0)),
        "frame_interval": float(head.get("frame_interval", 0.4)),
    }
    return params, norm, meta
