"""A/B benchmark: numba kernels against their pure-numpy fallbacks.

Run with ``python -m clickseg.bench [--points N] [--repeats R]``. Both kernel
versions are imported explicitly, so the CLICKSEG_NO_NUMBA flag does not
affect what gets measured (it only changes the default binding used by the
library).
"""

import argparse
import math
import time

import numpy as np

from . import kernels
from ._accel import HAVE_NUMBA
from .config import SynthScalars, make_rng
from .synth import SynthSpec, generate_scene


def _time(fn, repeats):
    best = math.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def run_bench(num_points=20000, repeats=3, k=12):
    scalars = SynthScalars(points_scale=num_points / 9000.0)
    scene = generate_scene(SynthSpec(seed=7, scalars=scalars))
    pts = np.ascontiguousarray(scene.points)
    print(f"scene: {scene.num_points} points, k={k}, repeats={repeats} (best shown)")
    if not HAVE_NUMBA:
        print("numba is not importable; only the numpy path is timed")

    rows = []

    def add(name, fast, slow):
        t_slow, ref = _time(slow, repeats)
        if fast is not None:
            fast()  # compile outside the timed region
            t_fast, _ = _time(fast, repeats)
        else:
            t_fast = math.nan
        rows.append((name, t_fast, t_slow))
        return ref

    neigh = add(
        "knn",
        (lambda: kernels.knn_numba(pts, k)) if HAVE_NUMBA else None,
        lambda: kernels.knn_numpy(pts, k),
    )
    neigh = np.ascontiguousarray(neigh, dtype=np.int64)

    normals_shape = add(
        "eig_features",
        (lambda: kernels.eig_features_numba(pts, neigh)) if HAVE_NUMBA else None,
        lambda: kernels.eig_features_numpy(pts, neigh),
    )
    normals = np.ascontiguousarray(normals_shape[0])
    colors = np.ascontiguousarray(scene.colors)

    add(
        "region_grow",
        (
            lambda: kernels.region_grow_numba(
                neigh, normals, colors, math.cos(0.35), 0.25, 10, 5000
            )
        )
        if HAVE_NUMBA
        else None,
        lambda: kernels.region_grow_python(
            neigh, normals, colors, math.cos(0.35), 0.25, 10, 5000
        ),
    )

    rng = make_rng(3)
    m, c = 300, 6
    w = rng.uniform(0.0, 1.0, size=(m, m))
    w = (w + w.T) / 2.0
    np.fill_diagonal(w, 0.0)
    q0 = rng.dirichlet(np.ones(c), size=m)
    log_unary = np.log(q0 + 1e-12)
    add(
        f"mean_field (M={m}, 10 sweeps)",
        (lambda: kernels.mean_field_numba(w, log_unary, q0, 10)) if HAVE_NUMBA else None,
        lambda: kernels.mean_field_numpy(w, log_unary, q0, 10),
    )

    lab = rng.integers(0, c, size=m)
    psi = -log_unary

    def energy_many(fn):
        def run():
            total = 0.0
            for _ in range(200):
                total += fn(w, psi, lab)
            return total

        return run

    add(
        "energy (x200)",
        energy_many(kernels.energy_numba) if HAVE_NUMBA else None,
        energy_many(kernels.energy_python),
    )

    print(f"{'kernel':<28}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for name, t_fast, t_slow in rows:
        fast = f"{t_fast * 1e3:.1f} ms" if not math.isnan(t_fast) else "n/a"
        ratio = f"{t_slow / t_fast:.1f}x" if not math.isnan(t_fast) else "-"
        print(f"{name:<28}{fast:>12}{t_slow * 1e3:>9.1f} ms{ratio:>10}")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--points", type=int, default=20000)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--k", type=int, default=12)
    args = parser.parse_args(argv)
    run_bench(num_points=args.points, repeats=args.repeats, k=args.k)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
