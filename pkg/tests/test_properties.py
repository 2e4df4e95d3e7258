"""Property-based invariants (hypothesis) for the pieces with clean
algebraic contracts: normalization round trips, clipping geometry,
meta-path translation equivariance, and metric identities."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mesrnn.autodiff import GradientStore
from mesrnn.evaluate import ade, fde
from mesrnn.stgraph import METAPATH_KINDS, build_graph, metapaths, scene_from_positions
from mesrnn.training import NormStats, clip_global_norm

finite = st.floats(-50.0, 50.0, allow_nan=False, allow_infinity=False)


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, (7, 2), elements=finite),
    st.floats(-30, 30), st.floats(0.5, 40), st.floats(-30, 30), st.floats(0.5, 40),
)
def test_minmax_round_trip(points, xmin, xspan, ymin, yspan):
    stats = NormStats(xmin, xmin + xspan, ymin, ymin + yspan)
    back = stats.invert(stats.apply(points))
    assert np.abs(back - points).max() <= 1e-10 * max(1.0, np.abs(points).max())


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (37,), elements=finite), st.floats(0.1, 20))
def test_clip_never_increases_norm_or_turns(g, max_norm):
    grads = GradientStore({"g": g.copy()})
    before = float(np.linalg.norm(g))
    clip_global_norm(grads, max_norm)
    after = float(np.linalg.norm(grads["g"]))
    assert after <= max(before, max_norm) + 1e-9
    if before > 1e-9 and after > 1e-9:
        cos = float(np.dot(g, grads["g"]) / (before * after))
        assert cos > 1.0 - 1e-9


@settings(max_examples=25, deadline=None)
@given(
    st.integers(0, 10_000),
    st.floats(-100, 100), st.floats(-100, 100),
)
def test_metapath_translation_equivariance(seed, dx, dy):
    rng = np.random.default_rng(seed)
    n, t_len = int(rng.integers(2, 5)), int(rng.integers(3, 6))
    pos = rng.normal(scale=2.0, size=(n, t_len, 2))
    g1 = build_graph(scene_from_positions(pos))
    g2 = build_graph(scene_from_positions(pos + np.array([dx, dy])))
    for anchor in range(n):
        for t in range(t_len):
            for kind in METAPATH_KINDS:
                a = [f.value for f in metapaths(g1, anchor, t, kind)]
                b = [f.value for f in metapaths(g2, anchor, t, kind)]
                assert len(a) == len(b)
                for va, vb in zip(a, b):
                    assert np.abs(va - vb).max() < 1e-9


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, (3, 12, 2), elements=finite),
    st.floats(-5, 5), st.floats(-5, 5),
)
def test_constant_offset_makes_ade_equal_fde(truth, ox, oy):
    pred = truth + np.array([ox, oy])
    want = float(np.hypot(ox, oy))
    assert abs(ade(pred, truth) - want) < 1e-9
    assert abs(fde(pred, truth) - want) < 1e-9
