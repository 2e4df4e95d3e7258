"""Numeric kernel backend selection.

At import time we pick the compiled extension (``mesrnn._kernels._core``,
built from Cython) when it is available, and fall back to the pure-numpy
reference implementation otherwise. Set ``MESRNN_PURE_PYTHON=1`` to force
the fallback; the benchmark suite and the backend-parity tests use this.

Both backends expose the same functions; results agree to floating-point
noise (the compiled path may use vectorized libm routines that differ from
numpy's by an ulp). Bit-exact reproducibility holds within one backend.
"""

import os

from . import _numpy_ref

if os.environ.get("MESRNN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _numpy_ref
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _numpy_ref

BACKEND = _impl.BACKEND

sigmoid_fwd = _impl.sigmoid_fwd
sigmoid_vjp = _impl.sigmoid_vjp
tanh_fwd = _impl.tanh_fwd
tanh_vjp = _impl.tanh_vjp
lstm_gates_fwd = _impl.lstm_gates_fwd
lstm_gates_bwd = _impl.lstm_gates_bwd
adam_update = _impl.adam_update
sqsum = _impl.sqsum
scale = _impl.scale
