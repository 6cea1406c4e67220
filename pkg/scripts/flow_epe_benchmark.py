"""Endpoint error of the flow estimator on translations and smooth synthetic fields.

    python3 scripts/flow_epe_benchmark.py --pairs 10 --alpha 10 30 100
"""

import argparse
import time

import numpy as np

from flowpalm.flow import FlowEstimatorParams, estimate_flow
from flowpalm.imaging import center_crop, endpoint_error, warp_bilinear
from flowpalm.synthetic import (
    CreaseIdentity,
    SyntheticDeformationParams,
    gen_crease_map,
    gen_pair_corpus,
    render_palm_like,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=6)
    ap.add_argument("--max-displacement", type=float, default=4.0)
    ap.add_argument("--alpha", type=float, nargs="+", default=[30.0], help="regularization weights to compare")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    shifts = [tuple(int(v) for v in rng.integers(-3, 4, size=2)) for _ in range(args.pairs)]
    pairs = gen_pair_corpus(args.pairs, 1, SyntheticDeformationParams(args.max_displacement), seed=args.seed)

    for alpha in args.alpha:
        params = FlowEstimatorParams(regularization_weight=alpha)
        start = time.perf_counter()
        trans = []
        for n, (dx, dy) in enumerate(shifts):
            img = render_palm_like(gen_crease_map(CreaseIdentity.from_seed(args.seed + n)), args.seed + n)
            truth = np.zeros(img.shape + (2,), np.float32)
            truth[..., 0], truth[..., 1] = dx, dy
            est = estimate_flow(img, warp_bilinear(img, truth), params)
            trans.append(endpoint_error(center_crop(est), center_crop(truth)))
        smooth = [endpoint_error(center_crop(estimate_flow(p.source, p.target, params)), center_crop(p.flow))
                  for p in pairs]
        print(f"alpha={alpha:g}: translation EPE {np.mean(trans):.4f} (max {np.max(trans):.4f}), "
              f"smooth EPE {np.mean(smooth):.4f} (max {np.max(smooth):.4f}), "
              f"{time.perf_counter() - start:.1f}s")


if __name__ == "__main__":
    main()
