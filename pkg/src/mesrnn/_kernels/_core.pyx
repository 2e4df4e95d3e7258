# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Fused numeric kernels (compiled backend).

Same contracts as ``_numpy_ref``. Design constraints, in order:

1. Bit determinism. The build uses no -ffast-math: every compiled loop is
   element-local IEEE arithmetic, so vectorized and scalar execution give
   identical bits and results cannot depend on buffer addresses.
   Transcendentals go through numpy's vector math (np.exp), which is what
   the reference backend uses too.
2. Fusion. The wins come from collapsing numpy op chains into single
   passes: the ADAM update (7 numpy passes with temporaries -> 1), the
   LSTM gate backward (about 10 passes -> 1), the activation vjps, and
   the gate forward (about 13 numpy calls -> 2 np.exp + 3 fused passes;
   sigmoid and tanh are both rational functions of one exponential).

Matrix products are intentionally absent; BLAS through numpy already owns
those on both backends. Gate block order is (input, forget,
cell-candidate, output).
"""

import numpy as np

from libc.math cimport sqrt

BACKEND = "compiled"


def _flat(a):
    # read-only flat float64 view (copies only when the input is exotic)
    return np.ascontiguousarray(a, dtype=np.float64).reshape(-1)


def sigmoid_fwd(x):
    return 1.0 / (1.0 + np.exp(-x))


def tanh_fwd(x):
    return np.tanh(x)


def sigmoid_vjp(y, g):
    out = np.empty(np.shape(y))
    cdef const double[::1] yv = _flat(y)
    cdef const double[::1] gv = _flat(g)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i
    for i in range(yv.shape[0]):
        ov[i] = gv[i] * yv[i] * (1.0 - yv[i])
    return out


def tanh_vjp(y, g):
    out = np.empty(np.shape(y))
    cdef const double[::1] yv = _flat(y)
    cdef const double[::1] gv = _flat(g)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i
    for i in range(yv.shape[0]):
        ov[i] = gv[i] * (1.0 - yv[i] * yv[i])
    return out


cdef void _exp_args(double[:, ::1] zv, double[:, ::1] wv, Py_ssize_t H) noexcept nogil:
    # exponent arguments: -z for the sigmoid blocks, 2z for the tanh block
    cdef Py_ssize_t r, k
    for r in range(zv.shape[0]):
        for k in range(2 * H):
            wv[r, k] = -zv[r, k]
        for k in range(2 * H, 3 * H):
            wv[r, k] = 2.0 * zv[r, k]
        for k in range(3 * H, 4 * H):
            wv[r, k] = -zv[r, k]


cdef void _combine_gates(double[:, ::1] zv, const double[:, ::1] ev,
                         const double[:, ::1] cp, double[:, ::1] cv,
                         Py_ssize_t H) noexcept nogil:
    # sigmoid(x) = 1/(1+e^-x); tanh(x) = 1 - 2/(e^2x + 1); new cell state
    cdef Py_ssize_t r, k
    for r in range(zv.shape[0]):
        for k in range(2 * H):
            zv[r, k] = 1.0 / (1.0 + ev[r, k])
        for k in range(2 * H, 3 * H):
            zv[r, k] = 1.0 - 2.0 / (ev[r, k] + 1.0)
        for k in range(3 * H, 4 * H):
            zv[r, k] = 1.0 / (1.0 + ev[r, k])
        for k in range(H):
            cv[r, k] = zv[r, H + k] * cp[r, k] + zv[r, k] * zv[r, 2 * H + k]


def lstm_gates_fwd(z, c_prev):
    """Activate (N, 4H) pre-activations in place; returns (gates, h, c, tc)."""
    cdef Py_ssize_t N = z.shape[0], H = c_prev.shape[1]
    w = np.empty_like(z)
    c_new = np.empty((N, H))
    _exp_args(z, w, H)
    e = np.exp(w)
    _combine_gates(z, e, c_prev, c_new, H)
    tc = 1.0 - 2.0 / (np.exp(2.0 * c_new) + 1.0)
    h_new = np.empty((N, H))
    cdef double[:, ::1] hv = h_new
    cdef const double[:, ::1] tv = tc
    cdef const double[:, ::1] zv = z
    cdef Py_ssize_t r, k
    with nogil:
        for r in range(N):
            for k in range(H):
                hv[r, k] = zv[r, 3 * H + k] * tv[r, k]
    return z, h_new, c_new, tc


def lstm_gates_bwd(gates, c_prev, tc, gh, gc):
    """Adjoints of the gate block; returns (gz, gc_prev)."""
    cdef Py_ssize_t N = gates.shape[0], H = c_prev.shape[1]
    gz = np.empty_like(gates)
    gc_prev = np.empty_like(c_prev)
    gct = np.empty(H)
    cdef const double[:, ::1] ga = gates
    cdef const double[:, ::1] cp = c_prev
    cdef const double[:, ::1] tv = tc
    cdef const double[:, ::1] ghv = gh
    cdef const double[:, ::1] gcv = gc
    cdef double[:, ::1] gzv = gz
    cdef double[:, ::1] gcp = gc_prev
    cdef double[::1] gt = gct
    cdef Py_ssize_t r, k
    cdef double i_g, f_g, g_g, o_g, t_c
    with nogil:
        for r in range(N):
            for k in range(H):
                o_g = ga[r, 3 * H + k]
                t_c = tv[r, k]
                gt[k] = gcv[r, k] + ghv[r, k] * o_g * (1.0 - t_c * t_c)
                gzv[r, 3 * H + k] = (ghv[r, k] * t_c) * o_g * (1.0 - o_g)
            for k in range(H):
                i_g = ga[r, k]
                g_g = ga[r, 2 * H + k]
                gzv[r, k] = (gt[k] * g_g) * i_g * (1.0 - i_g)
                gzv[r, 2 * H + k] = (gt[k] * i_g) * (1.0 - g_g * g_g)
            for k in range(H):
                f_g = ga[r, H + k]
                gzv[r, H + k] = (gt[k] * cp[r, k]) * f_g * (1.0 - f_g)
                gcp[r, k] = gt[k] * f_g
    return gz, gc_prev


def adam_update(p, g, m, v, double lr, double beta1, double beta2, double eps,
                long step):
    """One bias-corrected ADAM step, fused single pass, in place on p/m/v."""
    if not (p.flags.c_contiguous and m.flags.c_contiguous and v.flags.c_contiguous):
        raise ValueError("adam_update needs C-contiguous p/m/v")
    cdef double[::1] pv = p.reshape(-1)
    cdef const double[::1] gv = _flat(g)
    cdef double[::1] mv = m.reshape(-1)
    cdef double[::1] vv = v.reshape(-1)
    cdef double bc1 = 1.0 - beta1 ** step
    cdef double bc2 = 1.0 - beta2 ** step
    cdef double mi, vi
    cdef Py_ssize_t i
    with nogil:
        for i in range(pv.shape[0]):
            mi = beta1 * mv[i] + (1.0 - beta1) * gv[i]
            vi = beta2 * vv[i] + (1.0 - beta2) * gv[i] * gv[i]
            mv[i] = mi
            vv[i] = vi
            pv[i] -= lr * (mi / bc1) / (sqrt(vi / bc2) + eps)


def sqsum(a):
    """Sum of squares of all entries, as a Python float.

    Delegates to BLAS through np.dot: a sequential C reduction measures
    about 7x slower, so there is nothing to fuse here.
    """
    flat = a.ravel()
    return float(np.dot(flat, flat))


def scale(a, double s):
    """In-place multiply by a scalar."""
    if not a.flags.c_contiguous:
        a *= s
        return
    cdef double[::1] av = a.reshape(-1)
    cdef Py_ssize_t i
    for i in range(av.shape[0]):
        av[i] *= s
