"""Tape-based reverse-mode differentiation over dense float64 tensors.

The op set is deliberately small: affine maps, concatenation, summation,
sigmoid/tanh, elementwise product, mean-squared error, plus a fused LSTM
cell step. That is everything the recurrent trajectory models in this
package need. There is no broadcasting: operand shapes must conform
exactly, and a mismatch raises :class:`ShapeError` naming both shapes.

A :class:`Tape` is rebuilt per forward pass (scenes vary in length and
pedestrian count). Leaves are either named parameters (which receive
gradients) or unnamed constants (which do not, and through which no
adjoint work is done). ``Tape.backward`` returns a :class:`GradientStore`
with one entry per registered parameter; parameters unused in the forward
pass get exact zeros.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .errors import ContractError, ShapeError


class Tensor:
    """A recorded value on a tape: float64 data plus tape bookkeeping."""

    __slots__ = ("data", "name", "tid", "tape")

    def __init__(self, data, tape, tid, name=None):
        self.data = data
        self.tape = tape
        self.tid = tid
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"<Tensor #{self.tid} shape={self.data.shape}{tag}>"


class Node:
    """One recorded primitive: op name, operand/output ids, saved state."""

    __slots__ = ("op", "in_ids", "out_ids", "saved", "rg")

    def __init__(self, op, in_ids, out_ids, saved, rg):
        self.op = op
        self.in_ids = in_ids
        self.out_ids = out_ids
        self.saved = saved
        self.rg = rg


class GradientStore:
    """Mapping parameter name -> gradient array of the parameter's shape."""

    def __init__(self, grads):
        self._grads = grads

    def __getitem__(self, name):
        return self._grads[name]

    def __contains__(self, name):
        return name in self._grads

    def __len__(self):
        return len(self._grads)

    def names(self):
        return self._grads.keys()

    def items(self):
        return self._grads.items()

    def arrays(self):
        return self._grads.values()


def _as_f64(array):
    # note: ascontiguousarray would promote 0-d scalars to 1-d
    a = np.asarray(array, dtype=np.float64, order="C")
    if not a.flags.c_contiguous:
        a = a.copy(order="C")
    return a


def _shape_err(op, *shapes):
    listed = " vs ".join(str(tuple(s)) for s in shapes)
    return ShapeError(f"{op}: non-conforming shapes {listed}")


class Tape:
    """Append-only record of primitive operations for one forward pass."""

    def __init__(self):
        self.values: list[Tensor] = []
        self.nodes: list[Node] = []
        self.params: dict[str, int] = {}
        self._rg: list[bool] = []

    # ---- leaves ------------------------------------------------------

    def leaf(self, array) -> Tensor:
        """Record a constant input. No gradient flows into it."""
        return self._new_value(_as_f64(array), rg=False)

    def param(self, name: str, array) -> Tensor:
        """Record a named parameter leaf; backward() reports its gradient."""
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice on one tape")
        t = self._new_value(_as_f64(array), rg=True, name=name)
        self.params[name] = t.tid
        return t

    def _new_value(self, data, rg, name=None):
        t = Tensor(data, self, len(self.values), name)
        self.values.append(t)
        self._rg.append(rg)
        return t

    def _record(self, op, ins, outs_data, saved=None):
        rg = any(self._rg[t.tid] for t in ins)
        outs = tuple(self._new_value(d, rg) for d in outs_data)
        self.nodes.append(
            Node(op, tuple(t.tid for t in ins), tuple(t.tid for t in outs), saved, rg)
        )
        return outs if len(outs) > 1 else outs[0]

    def _check_same_tape(self, *tensors):
        for t in tensors:
            if t.tape is not self:
                raise ContractError("operand belongs to a different tape")

    # ---- primitive ops ------------------------------------------------

    def linear(self, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
        """Affine map: w @ x + b for a vector x, row-wise for a matrix x."""
        self._check_same_tape(x, w, b)
        xs, ws, bs = x.data.shape, w.data.shape, b.data.shape
        if len(ws) != 2 or len(bs) != 1 or ws[0] != bs[0]:
            raise _shape_err("linear(weight,bias)", ws, bs)
        if x.data.ndim == 1:
            if xs[0] != ws[1]:
                raise _shape_err("linear(input,weight)", xs, ws)
        elif x.data.ndim == 2:
            if xs[1] != ws[1]:
                raise _shape_err("linear(input,weight)", xs, ws)
        else:
            raise _shape_err("linear(input)", xs)
        return self._record("linear", (x, w, b), (_fwd_linear(x.data, w.data, b.data),))

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_same_tape(a, b)
        if a.data.shape != b.data.shape:
            raise _shape_err("add", a.data.shape, b.data.shape)
        return self._record("add", (a, b), (a.data + b.data,))

    def hadamard(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_same_tape(a, b)
        if a.data.shape != b.data.shape:
            raise _shape_err("hadamard", a.data.shape, b.data.shape)
        return self._record("hadamard", (a, b), (a.data * b.data,))

    def concat(self, parts) -> Tensor:
        """Concatenate along the last axis; leading axes must agree."""
        parts = tuple(parts)
        if not parts:
            raise ContractError("concat of zero tensors")
        self._check_same_tape(*parts)
        lead = parts[0].data.shape[:-1]
        for p in parts[1:]:
            if p.data.ndim != parts[0].data.ndim or p.data.shape[:-1] != lead:
                raise _shape_err("concat", parts[0].data.shape, p.data.shape)
        widths = tuple(p.data.shape[-1] for p in parts)
        return self._record(
            "concat", parts, (np.concatenate([p.data for p in parts], axis=-1),), widths
        )

    def sum_list(self, parts) -> Tensor:
        parts = tuple(parts)
        if not parts:
            raise ContractError("sum_list of zero tensors")
        self._check_same_tape(*parts)
        shape = parts[0].data.shape
        for p in parts[1:]:
            if p.data.shape != shape:
                raise _shape_err("sum_list", shape, p.data.shape)
        return self._record("sum_list", parts, (_fwd_sum_list([p.data for p in parts]),))

    def tanh_map(self, x: Tensor) -> Tensor:
        self._check_same_tape(x)
        return self._record("tanh_map", (x,), (K.tanh_fwd(x.data),))

    def sigmoid_map(self, x: Tensor) -> Tensor:
        self._check_same_tape(x)
        return self._record("sigmoid_map", (x,), (K.sigmoid_fwd(x.data),))

    def mse(self, pred: Tensor, target: Tensor) -> Tensor:
        """Mean over all elements of the squared difference; 0-d output."""
        self._check_same_tape(pred, target)
        if pred.data.shape != target.data.shape:
            raise _shape_err("mse", pred.data.shape, target.data.shape)
        return self._record("mse", (pred, target), (_fwd_mse(pred.data, target.data),))

    def reshape(self, x: Tensor, shape) -> Tensor:
        self._check_same_tape(x)
        shape = tuple(shape)
        if int(np.prod(shape, dtype=np.int64)) != x.data.size:
            raise _shape_err("reshape", x.data.shape, shape)
        out = np.ascontiguousarray(x.data).reshape(shape)
        return self._record("reshape", (x,), (out.copy(),), (x.data.shape, shape))

    def lstm_cell(self, x, h, c, w_ih, w_hh, b):
        """Fused LSTM step. x (N,D), h/c (N,H), w_ih (4H,D), w_hh (4H,H), b (4H,).

        Gate block order is (input, forget, cell-candidate, output).
        Returns (h_new, c_new).
        """
        self._check_same_tape(x, h, c, w_ih, w_hh, b)
        N, D = _two_d(x.data.shape, "lstm_cell(x)")
        _, H = _two_d(h.data.shape, "lstm_cell(h)")
        if c.data.shape != h.data.shape:
            raise _shape_err("lstm_cell(h,c)", h.data.shape, c.data.shape)
        if w_ih.data.shape != (4 * H, D):
            raise _shape_err("lstm_cell(w_ih)", w_ih.data.shape, (4 * H, D))
        if w_hh.data.shape != (4 * H, H):
            raise _shape_err("lstm_cell(w_hh)", w_hh.data.shape, (4 * H, H))
        if b.data.shape != (4 * H,):
            raise _shape_err("lstm_cell(b)", b.data.shape, (4 * H,))
        h2, c2, gates, tc = _fwd_lstm(
            x.data, h.data, c.data, w_ih.data, w_hh.data, b.data
        )
        return self._record("lstm_cell", (x, h, c, w_ih, w_hh, b), (h2, c2), (gates, tc))

    # ---- reverse pass --------------------------------------------------

    def backward(self, loss: Tensor) -> GradientStore:
        """Accumulate d(loss)/d(parameter) for every registered parameter.

        The tape is left unchanged; calling backward twice yields the same
        store. The loss must be a 0-d (scalar) tensor recorded here.
        """
        if loss.tape is not self:
            raise ContractError("loss does not belong to this tape")
        if loss.data.ndim != 0:
            raise ContractError(
                f"backward needs a scalar loss, got shape {tuple(loss.data.shape)}"
            )
        adj: list = [None] * len(self.values)
        adj[loss.tid] = np.ones((), dtype=np.float64)
        values = self.values
        rg = self._rg
        for node in reversed(self.nodes):
            if not node.rg:
                continue
            outs = [adj[i] for i in node.out_ids]
            if all(o is None for o in outs):
                continue
            outs = [
                o if o is not None else np.zeros_like(values[i].data)
                for o, i in zip(outs, node.out_ids)
            ]
            need = tuple(rg[i] for i in node.in_ids)
            gins = _VJP[node.op](node, values, outs, need)
            for tid, g in zip(node.in_ids, gins):
                if g is None:
                    continue
                if adj[tid] is None:
                    adj[tid] = g.copy()
                else:
                    adj[tid] += g
        grads = {}
        for name, tid in self.params.items():
            g = adj[tid]
            grads[name] = g if g is not None else np.zeros_like(values[tid].data)
        return GradientStore(grads)

    def replay(self) -> bool:
        """Recompute every node from its operands; True iff all outputs match bit-exactly."""
        for node in self.nodes:
            ins = [self.values[i].data for i in node.in_ids]
            fresh = _REPLAY[node.op](node, ins)
            for tid, out in zip(node.out_ids, fresh):
                if not np.array_equal(self.values[tid].data, out):
                    return False
        return True


def _two_d(shape, what):
    if len(shape) != 2:
        raise _shape_err(what, shape)
    return shape


# ---- forward helpers (shared by record and replay) ----------------------


def _fwd_linear(x, w, b):
    if x.ndim == 1:
        return w @ x + b
    return x @ w.T + b


def _fwd_sum_list(arrays):
    out = arrays[0].copy()
    for a in arrays[1:]:
        out += a
    return out


def _fwd_mse(a, b):
    d = a - b
    return np.asarray(np.dot(d.ravel(), d.ravel()) / d.size)


def _fwd_lstm(x, h, c, w_ih, w_hh, b):
    z = x @ w_ih.T
    z += h @ w_hh.T
    z += b
    gates, h2, c2, tc = K.lstm_gates_fwd(z, c)
    return h2, c2, gates, tc


# ---- vector-Jacobian products -------------------------------------------


def _vjp_linear(node, values, outs, need):
    (g,) = outs
    x = values[node.in_ids[0]].data
    w = values[node.in_ids[1]].data
    gx = gw = gb = None
    if x.ndim == 1:
        if need[0]:
            gx = g @ w
        if need[1]:
            gw = np.outer(g, x)
        if need[2]:
            gb = g
    else:
        if need[0]:
            gx = g @ w
        if need[1]:
            gw = g.T @ x
        if need[2]:
            gb = g.sum(axis=0)
    return gx, gw, gb


def _vjp_add(node, values, outs, need):
    (g,) = outs
    return (g if need[0] else None, g if need[1] else None)


def _vjp_hadamard(node, values, outs, need):
    (g,) = outs
    a = values[node.in_ids[0]].data
    b = values[node.in_ids[1]].data
    return (g * b if need[0] else None, g * a if need[1] else None)


def _vjp_concat(node, values, outs, need):
    (g,) = outs
    widths = node.saved
    gins = []
    off = 0
    for w, n in zip(widths, need):
        gins.append(np.ascontiguousarray(g[..., off : off + w]) if n else None)
        off += w
    return tuple(gins)


def _vjp_sum_list(node, values, outs, need):
    (g,) = outs
    return tuple(g if n else None for n in need)


def _vjp_tanh(node, values, outs, need):
    (g,) = outs
    y = values[node.out_ids[0]].data
    return (K.tanh_vjp(y, g) if need[0] else None,)


def _vjp_sigmoid(node, values, outs, need):
    (g,) = outs
    y = values[node.out_ids[0]].data
    return (K.sigmoid_vjp(y, g) if need[0] else None,)


def _vjp_mse(node, values, outs, need):
    (g,) = outs
    a = values[node.in_ids[0]].data
    b = values[node.in_ids[1]].data
    ga = gb = None
    if need[0] or need[1]:
        base = (float(g) * 2.0 / a.size) * (a - b)
        if need[0]:
            ga = base
        if need[1]:
            gb = -base
    return ga, gb


def _vjp_reshape(node, values, outs, need):
    (g,) = outs
    return (g.reshape(node.saved[0]) if need[0] else None,)


def _vjp_lstm(node, values, outs, need):
    gh, gc = outs
    x = values[node.in_ids[0]].data
    h = values[node.in_ids[1]].data
    c_prev = values[node.in_ids[2]].data
    w_ih = values[node.in_ids[3]].data
    w_hh = values[node.in_ids[4]].data
    gates, tc = node.saved
    gz, gc_prev = K.lstm_gates_bwd(gates, c_prev, tc, gh, gc)
    gx = gz @ w_ih if need[0] else None
    ghp = gz @ w_hh if need[1] else None
    gcp = gc_prev if need[2] else None
    gw_ih = gz.T @ x if need[3] else None
    gw_hh = gz.T @ h if need[4] else None
    gb = gz.sum(axis=0) if need[5] else None
    return gx, ghp, gcp, gw_ih, gw_hh, gb


_VJP = {
    "linear": _vjp_linear,
    "add": _vjp_add,
    "hadamard": _vjp_hadamard,
    "concat": _vjp_concat,
    "sum_list": _vjp_sum_list,
    "tanh_map": _vjp_tanh,
    "sigmoid_map": _vjp_sigmoid,
    "mse": _vjp_mse,
    "reshape": _vjp_reshape,
    "lstm_cell": _vjp_lstm,
}

_REPLAY = {
    "linear": lambda n, ins: (_fwd_linear(*ins),),
    "add": lambda n, ins: (ins[0] + ins[1],),
    "hadamard": lambda n, ins: (ins[0] * ins[1],),
    "concat": lambda n, ins: (np.concatenate(ins, axis=-1),),
    "sum_list": lambda n, ins: (_fwd_sum_list(ins),),
    "tanh_map": lambda n, ins: (K.tanh_fwd(ins[0]),),
    "sigmoid_map": lambda n, ins: (K.sigmoid_fwd(ins[0]),),
    "mse": lambda n, ins: (_fwd_mse(ins[0], ins[1]),),
    "reshape": lambda n, ins: (ins[0].reshape(n.saved[1]).copy(),),
    "lstm_cell": lambda n, ins: _fwd_lstm(*ins)[:2],
}


# ---- finite-difference verification --------------------------------------


class GradCheckReport:
    """Per-parameter comparison of analytic vs central-difference gradients."""

    def __init__(self, tol):
        self.tol = tol
        self.rows = []  # (name, max_rel_err, n_checked)

    def add(self, name, err, n):
        self.rows.append((name, err, n))

    @property
    def max_err(self):
        return max((e for _, e, _ in self.rows), default=0.0)

    @property
    def passed(self):
        return self.max_err <= self.tol

    def __str__(self):
        lines = [f"{'parameter':<28} {'entries':>7} {'max rel err':>12}  status"]
        for name, err, n in self.rows:
            ok = "ok" if err <= self.tol else "FAIL"
            lines.append(f"{name:<28} {n:>7} {err:>12.3e}  {ok}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} (tol {self.tol:g})")
        return "\n".join(lines)


def grad_check(build, params, h=1e-6, tol=1e-4, max_entries=0, seed=0):
    """Compare tape gradients of a scalar function against central differences.

    build(tape, bound) must rebuild the same deterministic computation each
    call (dropout off) and return the scalar loss; bound maps parameter
    names to their tape tensors. With max_entries > 0, at most that many
    entries per parameter are probed (chosen by a seeded generator), since the
    full cross product is intractable for the larger recurrent models.
    Relative error uses denominator max(|analytic|, |numeric|, 1e-3).
    """

    def run(arrays):
        tape = Tape()
        bound = {name: tape.param(name, a) for name, a in arrays.items()}
        loss = build(tape, bound)
        return tape, loss

    arrays = {name: _as_f64(a) for name, a in params.items()}
    tape, loss = run(arrays)
    analytic = tape.backward(loss)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol)
    for name, base in arrays.items():
        flat = base.ravel()
        n = flat.size
        if max_entries and n > max_entries:
            idx = rng.choice(n, size=max_entries, replace=False)
            idx.sort()
        else:
            idx = np.arange(n)
        ga = analytic[name].ravel()
        worst = 0.0
        for k in idx:
            orig = flat[k]
            flat[k] = orig + h
            _, lp = run(arrays)
            flat[k] = orig - h
            _, lm = run(arrays)
            flat[k] = orig
            fd = (float(lp.data) - float(lm.data)) / (2.0 * h)
            a = float(ga[k])
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-3)
            if err > worst:
                worst = err
        report.add(name, worst, len(idx))
    return report
