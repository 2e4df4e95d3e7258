#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the pure-numpy reference.

Micro-benchmarks call both implementations directly; the end-to-end row
retrains the same small corpus in a subprocess per backend (the backend is
fixed at import time, so it has to be a fresh interpreter).

Usage: python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mesrnn._kernels import _numpy_ref as ref  # noqa: E402

try:
    from mesrnn._kernels import _core as core
except ImportError:
    core = None


def timeit(fn, repeats):
    fn()
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_row(name, make_compiled, make_python, repeats):
    t_py = timeit(make_python, repeats)
    if core is None:
        print(f"{name:<34} {'-':>10} {t_py * 1e6:>10.1f}us  (compiled backend not built)")
        return
    t_c = timeit(make_compiled, repeats)
    print(
        f"{name:<34} {t_c * 1e6:>10.1f}us {t_py * 1e6:>10.1f}us  {t_py / t_c:>6.2f}x"
    )


def micro(repeats):
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34} {'compiled':>12} {'numpy':>11}  speedup")

    for n, h, tag in ((3, 256, "node"), (3, 128, "edge")):
        z = rng.normal(scale=2.0, size=(n, 4 * h))
        c = rng.normal(size=(n, h))
        bench_row(
            f"lstm_gates_fwd {tag} (N={n}, H={h})",
            lambda z=z, c=c: core.lstm_gates_fwd(z.copy(), c),
            lambda z=z, c=c: ref.lstm_gates_fwd(z.copy(), c),
            repeats,
        )
        gates, _, _, tc = ref.lstm_gates_fwd(z.copy(), c)
        gh = rng.normal(size=(n, h))
        gc = rng.normal(size=(n, h))
        bench_row(
            f"lstm_gates_bwd {tag} (N={n}, H={h})",
            lambda: core.lstm_gates_bwd(gates, c, tc, gh, gc),
            lambda: ref.lstm_gates_bwd(gates, c, tc, gh, gc),
            repeats,
        )

    y = rng.uniform(-1, 1, size=(3, 128))
    g = rng.normal(size=(3, 128))
    bench_row(
        "tanh_vjp (3x128)",
        lambda: core.tanh_vjp(y, g),
        lambda: ref.tanh_vjp(y, g),
        repeats * 4,
    )

    n_params = 917_504  # the largest tensor in the full model
    p = rng.normal(size=n_params)
    grad = rng.normal(size=n_params) * 0.01
    state = {
        "cm": np.zeros(n_params), "cv": np.zeros(n_params),
        "pm": np.zeros(n_params), "pv": np.zeros(n_params),
        "pc": p.copy(), "pp": p.copy(),
    }
    bench_row(
        f"adam_update ({n_params} params)",
        lambda: core.adam_update(state["pc"], grad, state["cm"], state["cv"],
                                 1e-3, 0.9, 0.999, 1e-8, 1),
        lambda: ref.adam_update(state["pp"], grad, state["pm"], state["pv"],
                                1e-3, 0.9, 0.999, 1e-8, 1),
        max(10, repeats // 20),
    )
    bench_row(
        f"sqsum ({n_params})",
        lambda: core.sqsum(p),
        lambda: ref.sqsum(p),
        max(10, repeats // 10),
    )


END_TO_END = r"""
import time
import numpy as np
from mesrnn import _kernels
from mesrnn.data import SynthSpec, synth_generate
from mesrnn.training import TrainConfig, train

scenes = synth_generate(SynthSpec("crossing", n_peds=3, n_scenes=8, seed=0))
cfg = TrainConfig(epochs={epochs}, seed=0, dropout=0.2)
t0 = time.perf_counter()
train(cfg, scenes, "mesrnn")
print(f"{{_kernels.BACKEND}} {{time.perf_counter() - t0:.3f}}")
"""


def end_to_end(epochs):
    print("\nend-to-end: train mesrnn, 8 scenes x"
          f" {epochs} epochs (fresh interpreter per backend)")
    results = {}
    for name, env_extra in (("compiled", {}), ("python", {"MESRNN_PURE_PYTHON": "1"})):
        env = dict(os.environ, **env_extra)
        out = subprocess.run(
            [sys.executable, "-c", END_TO_END.format(epochs=epochs)],
            capture_output=True, text=True, env=env, cwd=os.path.dirname(__file__),
        )
        if out.returncode != 0:
            print(f"{name}: FAILED\n{out.stderr}")
            return
        backend, seconds = out.stdout.split()
        results[name] = float(seconds)
        print(f"  backend={backend:<9} {float(seconds):.3f}s")
    if "compiled" in results and results["compiled"] > 0:
        print(f"  speedup {results['python'] / results['compiled']:.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="fewer repeats")
    args = parser.parse_args()
    repeats = 200 if args.quick else 2000
    micro(repeats)
    if core is None:
        print("compiled backend not built; skipping end-to-end comparison")
        return
    end_to_end(2 if args.quick else 5)


if __name__ == "__main__":
    main()
