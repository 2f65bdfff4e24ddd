"""Time the numba and numpy kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--repeat N]
"""
from __future__ import annotations

import argparse
import math
import time

import numpy as np

from marsupex.kernels import numpy_impl
from marsupex.worldsim import FREE, OCCUPIED, UNKNOWN, SensorSpec


def world(rng, n=64, res=0.25):
    cells = np.full((n, n, n // 2), FREE, np.uint8)
    r = rng.random(cells.shape)
    cells[r < 0.03] = OCCUPIED
    cells[(r >= 0.03) & (r < 0.4)] = UNKNOWN
    return cells, np.zeros(3), res


def cases(rng):
    cells, origin, res = world(rng)
    from scipy import ndimage

    clear = ndimage.distance_transform_edt(cells != OCCUPIED) * res
    centre = np.array(cells.shape) * res / 2 + 0.13
    s = SensorSpec()
    dirs = s.ray_directions().reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs / np.linalg.norm(dirs, axis=1, keepdims=True))
    positions = np.ascontiguousarray(centre + rng.uniform(-3, 3, (40, 3)))
    yaws = rng.uniform(-math.pi, math.pi, 40)
    cos_h, full_h, tan_v, full_v = s.cone()
    hit, vox, _ = numpy_impl.raycast(cells, origin, res, centre, dirs, 12.0)
    pairs = [(centre + rng.uniform(-3, 3, 3), centre + rng.uniform(-3, 3, 3)) for _ in range(200)]
    return {
        "raycast": lambda k: k.raycast(cells, origin, res, centre, dirs, 12.0),
        "integrate": lambda k: k.integrate(cells.copy(), origin, res, centre, dirs, hit, vox, 12.0),
        "gain_many": lambda k: k.gain_many(cells, clear, True, origin, res, positions, yaws,
                                           cos_h, full_h, tan_v, full_v, 6.0),
        "capsule_clear": lambda k: [k.capsule_clear(cells, origin, res, a, b, 0.3, True) for a, b in pairs],
        "ground_clear": lambda k: [k.ground_clear(cells, origin, res, a, b, 0.5, 0.3, 0.25, True, False, 1.5)
                                   for a, b in pairs],
    }


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    from marsupex.kernels import _numba

    rng = np.random.default_rng(0)
    print(f"{'kernel':<14} {'numpy (s)':>10} {'numba (s)':>10} {'speedup':>8}")
    for name, call in cases(rng).items():
        call(_numba)                                  # compile outside the timing
        t_np = best_of(lambda: call(numpy_impl), args.repeat)
        t_nb = best_of(lambda: call(_numba), args.repeat)
        print(f"{name:<14} {t_np:>10.4f} {t_nb:>10.4f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
