"""Compare the compiled and pure-Python morphology backends on MBI-sized work.

    python3 benchmarks/bench_morph.py [--size 224] [--repeat 3]
"""

import argparse
import time

import numpy as np

from geoseg import morph
from geoseg.features import MbiParams, mbi_raw
from geoseg.raster import Tile


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=224)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--full-mbi", action="store_true", help="also time a whole MBI profile (slow in pure Python)")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    img = rng.random((args.size, args.size)) * 255
    backends = morph.backends()
    print(f"available backends: {', '.join(backends)}; default {morph.BACKEND}")

    rows = []
    for name in backends:
        t_rec = best_of(lambda: morph.opening_by_reconstruction(img, 27, 45, backend=name), args.repeat)
        t_ero = best_of(lambda: morph.erode_line(img, 27, 45, backend=name), args.repeat)
        row = [name, t_ero, t_rec]
        if args.full_mbi:
            tile = Tile.from_array(rng.integers(0, 256, (args.size, args.size, 3)).astype(np.float64))
            row.append(best_of(lambda: mbi_raw(tile, MbiParams(), backend=name), 1))
        rows.append(row)

    head = f"{'backend':<8} {'erode (ms)':>11} {'open-rec (ms)':>14}" + (f" {'MBI (s)':>9}" if args.full_mbi else "")
    print(head)
    for r in rows:
        line = f"{r[0]:<8} {1e3 * r[1]:>11.2f} {1e3 * r[2]:>14.2f}"
        if args.full_mbi:
            line += f" {r[3]:>9.2f}"
        print(line)
    by_name = {r[0]: r for r in rows}
    if {"python", "cython"} <= set(by_name):
        print(f"speed-up on opening by reconstruction: {by_name['python'][2] / by_name['cython'][2]:.1f}x")


if __name__ == "__main__":
    main()
