"""Offline/online benchmark on the plate-with-notches family.

Trains on n_train circular notches, runs the reduced iteration on held-out
radii and a square notch, and prints timings and statuses.

    python3 scripts/plate_benchmark.py --n-train 40 --out runs/plate
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from morphrom import instrument
from morphrom.mesh import plate_polyline, square_notch_polyline, synth_plate
from morphrom.morph import PLATE_CONFIG
from morphrom.rom import OfflineConfig, offline_workflow, online_solve, save_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--n-train", type=int, default=40)
    ap.add_argument("--n-test", type=int, default=10)
    ap.add_argument("--h", type=float, default=0.05, help="reference mesh size")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    ref = synth_plate(0.5, args.h)
    train = 0.26 + 0.48 * np.arange(args.n_train) / max(args.n_train - 1, 1)
    test = np.linspace(0.27, 0.73, args.n_test)
    print(f"reference: {ref.n_vertices} vertices, {len(ref.triangles)} triangles")

    t0 = time.perf_counter()
    model, rep = offline_workflow(ref, [plate_polyline(R, 256) for R in train],
                                  OfflineConfig(PLATE_CONFIG, workers=args.workers))
    print(f"offline: {time.perf_counter() - t0:.1f} s, r={model.r}, "
          f"iterations {min(rep.iterations)}-{max(rep.iterations)}, "
          f"gamma_online={model.gamma_online:.3g}, delta_grad={model.delta_grad:.3g}")

    rows = []
    with instrument.counting() as counts:
        for R in test:
            o = online_solve(model, plate_polyline(float(R), 256))
            rows.append({"R": float(R), "status": o.status, "iterations": o.iterations,
                         "initial_delta2": o.initial_delta2, "delta2": o.delta2, "seconds": o.wall_time})
    print(f"{'R':>6} {'status':>24} {'iter':>5} {'init d2':>10} {'d2':>10} {'ms':>7}")
    for r in rows:
        print(f"{r['R']:6.3f} {r['status']:>24} {r['iterations']:5d} {r['initial_delta2']:10.2e} "
              f"{r['delta2']:10.2e} {1e3 * r['seconds']:7.1f}")
    ratio = np.mean(rep.morph_times) / np.mean([r["seconds"] for r in rows])
    print(f"average offline/online time ratio {ratio:.0f}, "
          f"online factorizations {counts.get('factorizations', 0)}")

    notch = online_solve(model, square_notch_polyline(0.5 / np.sqrt(2)))
    print(f"square notch: {notch.status} (eta={notch.grad_norm:.3e}, delta_grad={notch.delta_grad:.3e})")

    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        save_model(model, args.out / "model.json")
        (args.out / "benchmark.json").write_text(json.dumps(
            {"r": model.r, "offline_times": rep.morph_times, "online": rows, "ratio_avg": ratio,
             "square_notch": notch.status}, indent=1))


if __name__ == "__main__":
    main()
