"""Scalar learning on the synthetic airfoil family.

Offline morphings of the training airfoils give reduced coordinates alpha;
a GP maps (alpha, v0, theta0) to the drag-like scalar. Prints Q^2 on the
held-out airfoils, also as a function of the number of coordinates kept.
"""

import argparse
import time

import numpy as np

from morphrom.families import REFERENCE_AIRFOIL, airfoil_params, flow_params
from morphrom.mesh import airfoil_loop, airfoil_polyline, synth_airfoil
from morphrom.morph import AIRFOIL_FAMILY_CONFIG
from morphrom.regress import gpr_train, q2_score, synthetic_scalar_oracle
from morphrom.rom import OfflineConfig, offline_workflow, online_solve


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--n", type=int, default=80)
    ap.add_argument("--n-train", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-boundary", type=int, default=16)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    ref = synth_airfoil(*REFERENCE_AIRFOIL, args.n_boundary)
    shapes = airfoil_params(args.n, args.seed)
    mus = flow_params(args.n, args.seed)
    targets = [airfoil_polyline(*p) for p in shapes]
    w = np.array([synthetic_scalar_oracle(airfoil_loop(*p, 200)[0], mu) for p, mu in zip(shapes, mus)])
    k = args.n_train

    t0 = time.perf_counter()
    model, rep = offline_workflow(ref, targets[:k], OfflineConfig(AIRFOIL_FAMILY_CONFIG, workers=args.workers))
    print(f"offline: {time.perf_counter() - t0:.1f} s, r={model.r}, "
          f"iterations {min(rep.iterations)}-{max(rep.iterations)}")

    reports = [online_solve(model, t) for t in targets[k:]]
    statuses = [o.status for o in reports]
    print("online:", {s: statuses.count(s) for s in sorted(set(statuses))})
    alpha = np.array([o.alpha for o in reports])

    for r in range(1, model.r + 1):
        gm = gpr_train(np.hstack([model.alpha_train[:, :r], mus[:k]]), w[:k])
        q2 = q2_score(w[k:], gm.predict(np.hstack([alpha[:, :r], mus[k:]]))[:, 0])
        print(f"r={r:2d}  Q2={q2:.4f}")


if __name__ == "__main__":
    main()
