"""Time the numba and numpy implementations of each hot kernel on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Outputs are checked for agreement before timing. Numba compile time is
excluded by a warm-up call.
"""
import argparse
import timeit

import numpy as np

from fairaim import _accel
from fairaim.world import World, WorldConfig


def cases(rng):
    world = World(WorldConfig(seed=0))
    xy, cum, off = world._packed_xy, world._packed_cum, world._offsets
    lengths = world.route_length
    for n in (10, 30):
        ridx = rng.integers(0, 12, size=n).astype(np.int64)
        s = rng.uniform(0, 1, size=n) * lengths[ridx]
        yield f"route_poses n={n}", "route_poses", (xy, cum, off, ridx, s)
    for n in (10, 30, 200):
        pts = rng.uniform(-60, 60, size=(n, 2))
        yield f"close_pairs n={n}", "close_pairs", (pts, 8.0)
    for e, h in ((40, 32), (2200, 32), (2200, 64)):
        vals = rng.normal(size=(e, h))
        idx = rng.integers(0, max(e // 2, 1), size=e).astype(np.int64)
        yield f"scatter_add_rows E={e} H={h}", "scatter_add_rows", (vals, idx, max(e // 2, 1))


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    if not _accel.HAVE_NUMBA:
        print("numba not installed; only the numpy path is available")
    print(f"{'kernel':32s} {'numpy us':>10s} {'numba us':>10s} {'speedup':>8s}")
    for label, name, inputs in cases(rng):
        f_np = getattr(_accel, f"{name}_numpy")
        f_nb = getattr(_accel, f"{name}_numba")
        np.testing.assert_allclose(f_np(*inputs), f_nb(*inputs), rtol=1e-12, atol=1e-12)
        t_np = min(timeit.repeat(lambda: f_np(*inputs), number=args.repeat, repeat=3)) / args.repeat * 1e6
        t_nb = min(timeit.repeat(lambda: f_nb(*inputs), number=args.repeat, repeat=3)) / args.repeat * 1e6
        print(f"{label:32s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
