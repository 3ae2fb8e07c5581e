"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the four hot kernels in isolation plus one full engine iteration per
backend. Run as: python benchmarks/bench_backends.py
"""

import json
import os
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np


def timeit(fn, repeat=20):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat * 1000.0


def kernel_benchmarks(impl):
    from scipy.ndimage import gaussian_filter
    from scipy.spatial import ConvexHull

    from phasepack.fields import Grid, TensorField
    from phasepack.transport import assemble_divergence_stencil

    rng = np.random.default_rng(0)
    grid = Grid(width=128, height=128)
    shape = (128, 128)
    ang = gaussian_filter(rng.normal(size=shape), 3.0) * 3
    coh = np.clip(gaussian_filter(rng.uniform(0, 1, shape), 3.0) * 2, 0, 1)
    d1 = 1 / (1 + 15 * coh)
    c, s = np.cos(ang), np.sin(ang)
    D = TensorField(grid, 1 - (1 - d1) * c * c, -(1 - d1) * c * s, 1 - (1 - d1) * s * s)
    coef = assemble_divergence_stencil(D)
    v = rng.normal(size=shape)
    b = rng.uniform(0, 1, shape)
    x0 = np.zeros(shape)

    pts = rng.uniform(30, 90, size=(10, 2))
    verts = pts[ConvexHull(pts).vertices]
    xs = np.arange(128) + 0.5
    ys = np.arange(128) + 0.5
    field = rng.normal(size=shape)
    gx = rng.uniform(0, 127, 512)
    gy = rng.uniform(0, 127, 512)

    rows = {}
    rows["stencil_apply (128^2)"] = timeit(lambda: impl.stencil_apply(coef, 0.01, v))
    rows["cg solve tol=1e-6"] = timeit(
        lambda: impl.cg_stencil(coef, 0.01, b, x0, 1e-6, 500), repeat=3)
    rows["polygon_sdf (128^2 window)"] = timeit(lambda: impl.polygon_sdf(verts, xs, ys))
    rows["bilinear_gather (512 pts)"] = timeit(lambda: impl.bilinear_gather(field, gx, gy))
    return rows


def engine_iteration_ms(backend):
    """One outer engine iteration, measured in a subprocess with the backend forced."""
    scene = {"domain": [[0, 0], [128, 128]], "shapes": [
        {"id": i, "vertices": (np.array([[-9, -9], [9, -9], [9, 9], [-9, 9]])
                               + [44 + 10 * i, 64]).tolist()}
        for i in range(5)]}
    code = r"""
import json, sys, time
from phasepack.orchestrator import Phase2Config, load_scene, phase2_run
scene = load_scene(sys.argv[1])
cfg = Phase2Config(mode="semantic", guidance_spec="const-dir:90,1.0",
                   max_iters=10, record_timing=True)
res = phase2_run(scene, cfg)
ms = [row[-1] for row in res.metrics.rows]
print(json.dumps(sum(ms) / len(ms)))
"""
    with tempfile.TemporaryDirectory() as td:
        sp = Path(td) / "scene.json"
        sp.write_text(json.dumps(scene))
        env = dict(os.environ, PHASEPACK_KERNELS=backend)
        out = subprocess.run([sys.executable, "-c", code, str(sp)],
                             capture_output=True, text=True, env=env, check=True)
    return float(json.loads(out.stdout.strip().splitlines()[-1]))


def main():
    from phasepack.kernels import _numpy
    results = {"python": kernel_benchmarks(_numpy)}
    try:
        from phasepack.kernels import _compiled
        results["compiled"] = kernel_benchmarks(_compiled)
    except ImportError:
        print("compiled backend not built; benchmarking python only")

    names = list(next(iter(results.values())).keys())
    cols = list(results.keys())
    width = max(len(n) for n in names) + 2
    print(f"{'kernel':{width}s}" + "".join(f"{c + ' (ms)':>16s}" for c in cols) +
          ("{:>10s}".format("speedup") if len(cols) == 2 else ""))
    for n in names:
        row = f"{n:{width}s}" + "".join(f"{results[c][n]:16.3f}" for c in cols)
        if len(cols) == 2:
            row += f"{results['python'][n] / results['compiled'][n]:10.1f}x"
        print(row)

    print("\nfull engine iteration (5-shape scene, semantic mode):")
    for backend in results:
        ms = engine_iteration_ms(backend)
        print(f"  {backend:10s} {ms:8.1f} ms/iteration")


if __name__ == "__main__":
    main()
