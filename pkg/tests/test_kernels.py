"""Backend parity: the compiled kernels must match the numpy reference to
floating-point noise, and the selected backend must satisfy the engine's
finite-difference checks (covered by the rest of the suite, which runs on
whichever backend import picked)."""

import numpy as np
import pytest

import mesrnn._kernels as K
from mesrnn._kernels import _numpy_ref as ref

core = pytest.importorskip(
    "mesrnn._kernels._core", reason="compiled backend not built"
)

RTOL, ATOL = 1e-12, 1e-14


def close(a, b):
    return np.allclose(a, b, rtol=RTOL, atol=ATOL)


def test_backend_reports_name():
    assert K.BACKEND in ("compiled", "python")
    assert core.BACKEND == "compiled" and ref.BACKEND == "python"


@pytest.mark.parametrize("shape", [(7,), (3, 64), (1, 256), ()])
def test_elementwise_parity(shape):
    rng = np.random.default_rng(0)
    x = rng.normal(scale=3.0, size=shape)
    g = rng.normal(size=shape)
    assert close(core.tanh_fwd(x), ref.tanh_fwd(x))
    assert close(core.sigmoid_fwd(x), ref.sigmoid_fwd(x))
    y = ref.tanh_fwd(x)
    assert close(core.tanh_vjp(y, g), ref.tanh_vjp(y, g))
    ys = ref.sigmoid_fwd(x)
    assert close(core.sigmoid_vjp(ys, g), ref.sigmoid_vjp(ys, g))
    assert core.tanh_fwd(x).shape == np.shape(x)


def test_exact_fixed_points():
    assert float(core.sigmoid_fwd(np.zeros(3))[0]) == 0.5
    assert float(core.tanh_fwd(np.zeros(3))[0]) == 0.0


@pytest.mark.parametrize("n,h", [(1, 4), (3, 128), (2, 256)])
def test_lstm_gate_parity(n, h):
    rng = np.random.default_rng(h)
    z = rng.normal(scale=2.0, size=(n, 4 * h))
    c = rng.normal(size=(n, h))
    g1, h1, c1, t1 = core.lstm_gates_fwd(z.copy(), c)
    g2, h2, c2, t2 = ref.lstm_gates_fwd(z.copy(), c)
    for a, b in ((g1, g2), (h1, h2), (c1, c2), (t1, t2)):
        assert close(a, b)
    gh = rng.normal(size=(n, h))
    gc = rng.normal(size=(n, h))
    gz1, gp1 = core.lstm_gates_bwd(g1, c, t1, gh, gc)
    gz2, gp2 = ref.lstm_gates_bwd(g2, c, t2, gh, gc)
    assert close(gz1, gz2)
    assert close(gp1, gp2)


def test_adam_parity_and_inplace():
    rng = np.random.default_rng(5)
    shape = (64, 33)
    p1 = rng.normal(size=shape)
    p2 = p1.copy()
    m1 = np.zeros(shape)
    v1 = np.zeros(shape)
    m2 = np.zeros(shape)
    v2 = np.zeros(shape)
    for step in range(1, 6):
        g = rng.normal(size=shape)
        core.adam_update(p1, g, m1, v1, 1e-3, 0.9, 0.999, 1e-8, step)
        ref.adam_update(p2, g, m2, v2, 1e-3, 0.9, 0.999, 1e-8, step)
    assert close(p1, p2) and close(m1, m2) and close(v1, v2)


def test_adam_rejects_noncontiguous():
    base = np.zeros((8, 8))
    with pytest.raises(ValueError):
        core.adam_update(base.T[::2], np.zeros((4, 8)), np.zeros((4, 8)),
                         np.zeros((4, 8)), 1e-3, 0.9, 0.999, 1e-8, 1)


def test_sqsum_and_scale_parity():
    rng = np.random.default_rng(9)
    a = rng.normal(size=(513,))
    assert core.sqsum(a) == pytest.approx(ref.sqsum(a), rel=1e-13)
    b1, b2 = a.copy(), a.copy()
    core.scale(b1, 0.25)
    ref.scale(b2, 0.25)
    assert np.array_equal(b1, b2)  # multiply by a power of two is exact


def test_gates_numerics_against_plain_formulas():
    rng = np.random.default_rng(2)
    n, h = 3, 16
    z = rng.normal(scale=2.0, size=(n, 4 * h))
    c = rng.normal(size=(n, h))
    gates, hn, cn, tc = core.lstm_gates_fwd(z.copy(), c)
    i = 1 / (1 + np.exp(-z[:, :h]))
    f = 1 / (1 + np.exp(-z[:, h : 2 * h]))
    g = np.tanh(z[:, 2 * h : 3 * h])
    o = 1 / (1 + np.exp(-z[:, 3 * h :]))
    c_ref = f * c + i * g
    assert close(cn, c_ref)
    assert close(hn, o * np.tanh(c_ref))
