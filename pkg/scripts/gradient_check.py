"""Compare the analytic shape derivative of J with central differences.

J is the integral of the target signed distance over the morphed domain;
the velocity fields are smooth random fields on the boundary nodes.
"""

import argparse
import time

import numpy as np

from morphrom.distfield import build_index
from morphrom.mesh import plate_polyline, synth_plate
from morphrom.morph import gradient_check


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--fields", type=int, default=20)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--h", type=float, default=0.05)
    ap.add_argument("--target-radius", type=float, default=0.2)
    args = ap.parse_args()

    ref = synth_plate(0.5, args.h)
    idx = build_index(plate_polyline(args.target_radius, 256))
    bn = ref.boundary_vertices
    x = ref.vertices[bn]
    rng = np.random.default_rng(args.seed)
    t0 = time.perf_counter()
    worst = 0.0
    print(f"{'k':>3} {'analytic':>14} {'central diff':>14} {'rel err':>9}")
    for k in range(args.fields):
        W = rng.normal(size=(4, 2))
        ph = rng.uniform(0, 2 * np.pi, 4)
        C = rng.normal(size=(4, 2))
        v = np.zeros((ref.n_vertices, 2))
        v[bn] = np.cos(1.5 * x @ W.T + ph) @ C
        ana, num = gradient_check(ref, idx, v)
        err = abs(ana - num) / abs(num)
        worst = max(worst, err)
        print(f"{k:3d} {ana:14.6e} {num:14.6e} {err:9.2e}")
    print(f"max relative error {worst:.2e} in {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
