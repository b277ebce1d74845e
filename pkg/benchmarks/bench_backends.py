"""Time the numba kernels against the numpy/scipy fallback.

    python3 benchmarks/bench_backends.py [--repeat 3]

Both backends run in the same process by passing ``backend=`` explicitly;
outputs are checked for equality before timings are reported.
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np

from icpviz import HAVE_NUMBA, PipelineConfig, RigidTransform, run_sweep_suite
from icpviz.cloud import NearestNeighborIndex, covariance_eigen_batch
from icpviz.scenes import load_scene_spec, make_scene
from icpviz.sweep import Objective

SCENES = Path(__file__).resolve().parents[1] / "scenes"


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def bench_knn(backend, pts, q, k, repeat):
    def run():
        return NearestNeighborIndex(pts, backend).query_knn(q, k)

    return best_of(run, repeat)


def bench_nn(backend, pts, q, repeat):
    index = NearestNeighborIndex(pts, backend)
    return best_of(lambda: index.query(q), repeat)


def bench_eigen(backend, nb, repeat):
    return best_of(lambda: covariance_eigen_batch(nb, backend), repeat)


def bench_suite(backend, scene, repeat):
    configs = [PipelineConfig(objective=o) for o in Objective]
    T_0 = RigidTransform.identity()

    def run():
        res = run_sweep_suite(scene.source, scene.reference, T_0, scene.T_gt, configs, T_prev=scene.T_gt, backend=backend)
        return np.stack([c.rmse for c in res])

    return best_of(run, repeat)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--points", type=int, default=100_000)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is unavailable (or ICPVIZ_DISABLE_NUMBA is set); nothing to compare")

    rng = np.random.default_rng(0)
    pts = rng.uniform(-50, 50, size=(args.points, 3))
    q = pts + rng.normal(scale=0.05, size=pts.shape)
    nb = rng.normal(size=(args.points, 10, 3)) * [3.0, 1.0, 0.05]
    scene = make_scene(load_scene_spec(SCENES / "exact_copy.json"))

    cases = {
        f"kNN k=10, {args.points} pts (build+query)": lambda b: bench_knn(b, pts, q, 10, args.repeat),
        f"NN, {args.points} queries": lambda b: bench_nn(b, pts, q, args.repeat),
        f"3x3 eigen, {args.points} neighbourhoods": lambda b: bench_eigen(b, nb, args.repeat),
        f"5-objective sweep, {len(scene.source)} pts": lambda b: bench_suite(b, scene, 1),
    }
    # compile once so JIT time is not charged to the first case
    bench_knn("numba", pts[:100], q[:10], 3, 1)
    bench_nn("numba", pts[:100], q[:10], 1)
    bench_eigen("numba", nb[:10], 1)
    bench_suite("numba", scene, 1)

    print(f"{'case':<44} {'numba [s]':>10} {'numpy [s]':>10} {'speedup':>8}  match")
    for name, fn in cases.items():
        t_nb, out_nb = fn("numba")
        t_np, out_np = fn("numpy")
        # indices, eigenvalues or RMSE curves; eigenvector signs may differ by solver
        a, b = (out_nb[0], out_np[0]) if isinstance(out_nb, tuple) else (out_nb, out_np)
        match = np.allclose(a, b, rtol=0, atol=1e-9, equal_nan=True)
        print(f"{name:<44} {t_nb:10.3f} {t_np:10.3f} {t_np / t_nb:7.1f}x  {'yes' if match else 'NO'}")


if __name__ == "__main__":
    main()
