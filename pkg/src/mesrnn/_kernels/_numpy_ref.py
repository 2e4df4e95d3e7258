"""Pure-numpy reference kernels.

This is the fallback backend: every function here has a fused twin in the
compiled extension (``_core``). Matrix products are not in this file on
purpose: they go through BLAS via ``numpy`` on both backends, so the two
backends only differ in the elementwise/reduction code paths.

Gate block order inside a ``(N, 4H)`` pre-activation is (input, forget,
cell-candidate, output).
"""

import numpy as np

BACKEND = "python"


def sigmoid_fwd(x):
    return 1.0 / (1.0 + np.exp(-x))


def sigmoid_vjp(y, g):
    # y is the forward output
    return g * y * (1.0 - y)


def tanh_fwd(x):
    return np.tanh(x)


def tanh_vjp(y, g):
    return g * (1.0 - y * y)


def lstm_gates_fwd(z, c_prev):
    """Activate a pre-activation block and advance the cell state.

    z: (N, 4H) pre-activations, consumed (the returned gate block may alias it).
    Returns (gates, h_new, c_new, tanh_c) with gates == activated [i|f|g|o].
    """
    H = c_prev.shape[1]
    z[:, : 2 * H] = sigmoid_fwd(z[:, : 2 * H])
    z[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
    z[:, 3 * H :] = sigmoid_fwd(z[:, 3 * H :])
    c_new = z[:, H : 2 * H] * c_prev + z[:, :H] * z[:, 2 * H : 3 * H]
    tc = np.tanh(c_new)
    h_new = z[:, 3 * H :] * tc
    return z, h_new, c_new, tc


def lstm_gates_bwd(gates, c_prev, tc, gh, gc):
    """Adjoints through the gate nonlinearity block.

    gates/tc are the saved forward values; gh, gc are the adjoints of
    h_new and c_new. Returns (gz, gc_prev) where gz is the adjoint of the
    pre-activation block.
    """
    H = c_prev.shape[1]
    i = gates[:, :H]
    f = gates[:, H : 2 * H]
    g = gates[:, 2 * H : 3 * H]
    o = gates[:, 3 * H :]
    gc_total = gc + gh * o * (1.0 - tc * tc)
    gz = np.empty_like(gates)
    gz[:, :H] = (gc_total * g) * i * (1.0 - i)
    gz[:, H : 2 * H] = (gc_total * c_prev) * f * (1.0 - f)
    gz[:, 2 * H : 3 * H] = (gc_total * i) * (1.0 - g * g)
    gz[:, 3 * H :] = (gh * tc) * o * (1.0 - o)
    gc_prev = gc_total * f
    return gz, gc_prev


def adam_update(p, g, m, v, lr, beta1, beta2, eps, step):
    """One bias-corrected ADAM step, in place on p/m/v. step counts from 1."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def sqsum(a):
    """Sum of squares of all entries, as a Python float."""
    flat = a.ravel()
    return float(np.dot(flat, flat))


def scale(a, s):
    """In-place multiply by a scalar."""
    a *= s
