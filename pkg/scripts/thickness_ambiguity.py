"""Show that one lossless-film measurement has several exact thicknesses.

A transparent film's reflectance ratio is periodic in thickness, so a single
(psi, delta) pair fixes d only up to an integer number of periods inside the
search box.  This script synthesizes one measurement, runs the multi-start
solver over a box spanning a few periods, and prints every exact minimum it
finds next to the analytic period.
"""

from __future__ import annotations

import argparse

from ellipsinv.invert import FitProblem, solve
from ellipsinv.optics import ExperimentConfig, LayerStack, forward, lossless_thickness_period


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n2", type=float, default=2.3, help="film refractive index (lossless)")
    ap.add_argument("--n3", type=float, default=3.6)
    ap.add_argument("--k3", type=float, default=0.4)
    ap.add_argument("--d-true", type=float, default=30.0, dest="d_true")
    ap.add_argument("--lambda-nm", type=float, default=500.0, dest="lambda_nm")
    ap.add_argument("--theta1-deg", type=float, default=70.0, dest="theta1_deg")
    ap.add_argument("--periods", type=float, default=2.3, help="box width in analytic periods")
    ap.add_argument("--starts", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = ExperimentConfig(args.theta1_deg, args.lambda_nm)
    period = lossless_thickness_period(args.n2, cfg)
    truth = forward(LayerStack(args.n2, 0.0, args.d_true, args.n3, args.k3), cfg)
    print(f"truth: n2={args.n2} d={args.d_true} nm  ->  "
          f"psi={truth.psi_deg:.6f} delta={truth.delta_deg:.6f} deg")
    print(f"analytic thickness period: {period:.6f} nm")

    problem = FitProblem(
        n3=args.n3, k3=args.k3, lambda_nm=args.lambda_nm,
        psi_deg=truth.psi_deg, delta_deg=truth.delta_deg, cfg=cfg,
        # The tiny k2 box keeps the film effectively lossless while leaving
        # the solver a non-degenerate boundary to work against.
        bounds=((1.0, 5.0), (0.0, 1e-9), (1.0, 1.0 + args.periods * period)),
        starts=args.starts, tol=1e-12, seed=args.seed,
    )
    result = solve(problem)
    print(f"{result.converged_starts}/{result.starts} starts converged, "
          f"{len(result.minima)} distinct minima:")
    for m in result.minima:
        images = (m.d_nm - args.d_true) / period
        print(f"  n2={m.n2:.9f} k2={m.k2:.3e} d={m.d_nm:12.6f} nm  "
              f"residual={m.residual:.3e}  (d - d_true)/period = {images:+.6f}")


if __name__ == "__main__":
    main()
